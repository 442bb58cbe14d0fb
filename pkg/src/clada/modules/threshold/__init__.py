from .policy import (
    LayerPolicy,
    SearchConfig,
    ThresholdPolicy,
    load_policy,
    policy_from_json,
    policy_to_json,
    save_policy,
)
from .search import LayerSearchResult, search_all, search_layer

__all__ = [
    "LayerPolicy",
    "LayerSearchResult",
    "SearchConfig",
    "ThresholdPolicy",
    "load_policy",
    "policy_from_json",
    "policy_to_json",
    "save_policy",
    "search_all",
    "search_layer",
]
