# Byte-level vocabulary: 256 byte values followed by the reserved specials.
BYTE_VOCAB = 256
BOS_ID = 256
EOS_ID = 257
N_SPECIALS = 2

WEIGHT_MAGIC = b"CLDA"
WEIGHT_VERSION = 1

# Per-layer tensors in the order they are written to a weight file.
LAYER_TENSORS = ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_in", "v_in", "w_out")

# Prefix ratios used by the hybrid-sequence experiment.
DEFAULT_ALPHAS = (0.25, 0.30, 0.35, 0.40, 0.45, 0.50)

GROUPS = ("NLS", "RTS")
METRICS = ("cka", "cos")

# Significance legend used in regression tables.
STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))

PANEL_COLUMNS = (
    "pair_id",
    "group",
    "metric",
    "alpha",
    "prefix_len",
    "token_len",
    "surprisal_mean_norm",
    "entropy_mean_norm",
    "delta_sim",
)

SIGNAL_COLUMNS = ("sequence_id", "position", "surprisal_raw", "entropy_raw", "surprisal_norm", "entropy_norm")

MAGNITUDE_COLUMNS = ("layer", "neuron", "value", "aggregation")

ABLATION_COLUMNS = (
    "mode",
    "agreement_rate",
    "mean_sparsity",
    "wall_time_s",
    "indicator_fire_rate_s",
    "indicator_fire_rate_H",
)

REPORT_SCHEMA_VERSION = 1

# Edited sentences of the activation case study: a baseline, prefix edits and suffix edits.
CASE_STUDY_SAMPLES = (
    "### Article: Almost one million people visited the city",
    "Article: Almost one million people visited the city",
    "Almost one million people visited the city",
    "### Article: Nearly one million people visited the city",
    "Nearly one million people visited the city",
    "### Article: Less than one million people visited the city",
    "Less than one million people visited the city",
    "### Article: Almost one million people visited the city",
    "### Article: Almost one million people visited the restaurant",
    "Almost one million people visited the restaurant",
    "Almost one million people visited the planet",
    "Almost one million tourists visited the restaurant",
    "Almost one million aliens visited the planet",
)

# Word list for the synthetic natural-language corpus, most frequent first.
SYNTHETIC_WORDS = (
    "the", "of", "and", "to", "a", "in", "is", "that", "for", "it",
    "was", "on", "with", "as", "he", "be", "at", "by", "this", "had",
    "not", "are", "but", "from", "or", "have", "an", "they", "which", "one",
    "you", "were", "her", "all", "she", "there", "would", "their", "we", "him",
    "been", "has", "when", "who", "will", "more", "no", "if", "out", "so",
    "said", "what", "up", "its", "about", "into", "than", "them", "can", "only",
    "other", "new", "some", "could", "time", "these", "two", "may", "then", "do",
    "first", "any", "my", "now", "such", "like", "our", "over", "man", "me",
    "even", "most", "made", "after", "also", "did", "many", "before", "must", "through",
    "years", "where", "much", "your", "way", "well", "down", "should", "because", "each",
    "people", "city", "government", "police", "minister", "council", "report", "world", "match", "club",
)
