from .records import (
    CorpusRecord,
    make_synthetic_corpus,
    read_corpus,
    unigram_distribution,
    validation_slice,
    write_corpus,
)

__all__ = [
    "CorpusRecord",
    "make_synthetic_corpus",
    "read_corpus",
    "unigram_distribution",
    "validation_slice",
    "write_corpus",
]
