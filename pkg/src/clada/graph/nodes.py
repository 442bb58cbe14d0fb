import json
import logging
from pathlib import Path

from clada.core.constants import DEFAULT_ALPHAS, GROUPS
from clada.graph.state import ValidationState
from clada.graph.utils.helpers import get_corpus, get_model
from clada.modules.regression.panel import fit_panel_grid
from clada.modules.regression.report import report_table
from clada.modules.similarity.flocking import run_flocking_experiment, write_panel
from clada.settings import settings

logger = logging.getLogger(__name__)


def _options(state: ValidationState) -> dict:
    options = dict(state.get("options") or {})
    options.setdefault("n_pairs", settings.FLOCK_PAIRS)
    options.setdefault("seq_len", settings.FLOCK_SEQ_LEN)
    return options


def load_inputs_node(state: ValidationState):
    seed = state.get("seed", settings.DEFAULT_SEED)
    options = _options(state)
    model = get_model(state.get("model_path"), seed)
    corpus = get_corpus(state.get("corpus_path"), seed, 2 * options["n_pairs"], options["seq_len"])
    Path(state["output_dir"]).mkdir(parents=True, exist_ok=True)
    return {"model": model, "corpus": corpus, "seed": seed, "options": options, "artifacts": {}}


def flocking_node(state: ValidationState):
    options = state["options"]
    panel = run_flocking_experiment(
        state["model"],
        state["corpus"],
        alphas=options.get("alphas", DEFAULT_ALPHAS),
        groups=options.get("groups", GROUPS),
        layer=options.get("layer"),
        n_pairs=options["n_pairs"],
        seq_len=options["seq_len"],
        seed=state["seed"],
    )
    path = write_panel(panel, Path(state["output_dir"]) / "panel.csv")
    return {"panel": panel, "artifacts": {**state["artifacts"], "panel": str(path)}}


def regression_node(state: ValidationState):
    fits = fit_panel_grid(state["panel"], cluster=state["options"].get("cluster", False))
    path = Path(state["output_dir"]) / "regression.txt"
    report_table(fits, path)
    artifacts = {**state["artifacts"], "regression": str(path), "regression_json": str(path.with_suffix(".json"))}
    return {"fits": fits, "artifacts": artifacts}


def report_node(state: ValidationState):
    """Summarize group means of the similarity shift per metric and alpha."""
    panel = state["panel"]
    path = Path(state["output_dir"]) / "summary.json"
    means = panel.groupby(["group", "metric", "alpha"])["delta_sim"].mean()
    summary = {
        "rows": int(len(panel)),
        "pairs": int(panel["pair_id"].nunique()) if not panel.empty else 0,
        "mean_delta_sim": {f"{g}/{m}/{a:g}": float(v) for (g, m, a), v in means.items()},
        "fits": [fit.model_dump() for fit in state.get("fits", [])],
    }
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Validation summary written to {path}")
    return {"artifacts": {**state["artifacts"], "summary": str(path)}}
