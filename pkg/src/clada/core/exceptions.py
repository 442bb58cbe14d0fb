class CladaError(Exception):
    """Base class for every error raised by the toolkit."""

    pass


class DimensionError(CladaError, ValueError):
    """Custom exception for invalid model dimensions or mismatched shapes."""

    pass


class WeightFormatError(CladaError, ValueError):
    """Custom exception for malformed weight files.

    Attributes:
        field: Name of the header field or tensor that failed to parse.
    """

    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TokenRangeError(CladaError, ValueError):
    """Custom exception for token ids outside the vocabulary."""

    pass


class ContextLengthError(CladaError, ValueError):
    """Custom exception for sequences that are empty or exceed max_ctx."""

    pass


class LayerIndexError(CladaError, IndexError):
    """Custom exception for a layer index outside the model."""

    pass


class NeuronIndexError(CladaError, IndexError):
    """Custom exception for a neuron index outside the MLP hidden width."""

    pass


class PositionError(CladaError, IndexError):
    """Custom exception for a probe position outside the sequence."""

    pass


class EmptyInputError(CladaError, ValueError):
    """Custom exception for empty prefixes, samples or data."""

    pass


class DegenerateDenominatorError(CladaError, ArithmeticError):
    """Custom exception for an MLP output norm too small to normalise by."""

    pass


class DegenerateInputError(CladaError, ArithmeticError):
    """Custom exception for zero matrices or zero similarities in similarity kernels."""

    pass


class InsufficientDataError(CladaError, ValueError):
    """Custom exception for samples, corpora or panels too small for the requested operation."""

    pass


class InsufficientContextError(CladaError, ValueError):
    """Custom exception for sequences too short to score (surprisal needs a predecessor)."""

    pass


class PolicyFormatError(CladaError, ValueError):
    """Custom exception for threshold policy files that violate the schema."""

    pass


class CorpusError(CladaError, ValueError):
    """Custom exception for unreadable or empty corpora."""

    pass


class CollinearityError(CladaError, ValueError):
    """Custom exception for rank-deficient regression designs.

    Attributes:
        columns: Covariates that are linear combinations of the others.
    """

    def __init__(self, columns: list[str]):
        super().__init__(f"Design is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = columns


class GridError(CladaError, ValueError):
    """Raised when a benchmark grid string cannot be parsed."""

    pass
