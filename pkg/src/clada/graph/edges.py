from typing_extensions import Literal

from clada.graph.state import ValidationState


def should_regress(state: ValidationState) -> Literal["regression_node", "report_node"]:
    if state.get("regress", False) and not state["panel"].empty:
        return "regression_node"
    return "report_node"
