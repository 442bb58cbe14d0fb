from .ablation import AblationRow, ablation_run, write_ablation_report
from .engine import CladaEngine, GenerationStats, PrefillState, generate, prefill
from .modes import ModeKind, RuntimeMode, final_threshold, modulation, static_mask, top_p_for_multiplier

__all__ = [
    "AblationRow",
    "CladaEngine",
    "GenerationStats",
    "ModeKind",
    "PrefillState",
    "RuntimeMode",
    "ablation_run",
    "final_threshold",
    "generate",
    "modulation",
    "prefill",
    "static_mask",
    "top_p_for_multiplier",
    "write_ablation_report",
]
