from functools import lru_cache

from langgraph.graph import END, START, StateGraph

from clada.graph.edges import should_regress
from clada.graph.nodes import flocking_node, load_inputs_node, regression_node, report_node
from clada.graph.state import ValidationState


@lru_cache(maxsize=1)
def create_workflow_graph():
    graph_builder = StateGraph(ValidationState)

    graph_builder.add_node("load_inputs_node", load_inputs_node)
    graph_builder.add_node("flocking_node", flocking_node)
    graph_builder.add_node("regression_node", regression_node)
    graph_builder.add_node("report_node", report_node)

    graph_builder.add_edge(START, "load_inputs_node")
    graph_builder.add_edge("load_inputs_node", "flocking_node")

    # Regression is optional; the summary is always written
    graph_builder.add_conditional_edges("flocking_node", should_regress)
    graph_builder.add_edge("regression_node", "report_node")
    graph_builder.add_edge("report_node", END)

    return graph_builder


# Compiled without a checkpointer. Used for LangGraph Studio
graph = create_workflow_graph().compile()


def run_validation(**inputs) -> ValidationState:
    """Run the whole workflow; `inputs` are ValidationState keys, output_dir required."""
    return graph.invoke(ValidationState(**inputs))
