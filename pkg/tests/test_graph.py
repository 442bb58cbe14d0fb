import json

import pytest

from clada.graph import create_workflow_graph, run_validation
from clada.graph.edges import should_regress
from clada.modules.model.weight_file import save_model


@pytest.fixture
def model_path(tiny_model, tmp_path):
    return str(save_model(tiny_model, tmp_path / "m.clda"))


def test_graph_has_the_validation_nodes():
    nodes = set(create_workflow_graph().nodes)
    assert {"load_inputs_node", "flocking_node", "regression_node", "report_node"} <= nodes


def test_workflow_with_regression(model_path, tmp_path):
    out = tmp_path / "out"
    state = run_validation(
        model_path=model_path,
        output_dir=str(out),
        seed=1,
        options={"n_pairs": 3, "seq_len": 16},
        regress=True,
    )
    assert len(state["panel"]) == 3 * 2 * 6 * 2
    assert len(state["fits"]) == 12
    assert set(state["artifacts"]) == {"panel", "regression", "regression_json", "summary"}
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["pairs"] == 3 and len(summary["fits"]) == 12
    assert "NLS/cka/0.25" in summary["mean_delta_sim"]


def test_workflow_without_regression(model_path, tmp_path):
    state = run_validation(
        model_path=model_path,
        output_dir=str(tmp_path / "out"),
        seed=1,
        options={"n_pairs": 2, "seq_len": 16, "groups": ["NLS"]},
    )
    assert "fits" not in state
    assert set(state["artifacts"]) == {"panel", "summary"}
    assert set(state["panel"]["group"]) == {"NLS"}


def test_should_regress_needs_rows():
    import pandas as pd

    assert should_regress({"regress": True, "panel": pd.DataFrame()}) == "report_node"
    assert should_regress({"regress": False, "panel": pd.DataFrame({"a": [1]})}) == "report_node"
    assert should_regress({"regress": True, "panel": pd.DataFrame({"a": [1]})}) == "regression_node"
