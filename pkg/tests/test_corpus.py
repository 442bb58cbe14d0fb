import json

import numpy as np
import pytest

from clada.core.exceptions import CorpusError
from clada.modules.corpus.records import (
    CorpusRecord,
    make_synthetic_corpus,
    read_corpus,
    unigram_distribution,
    validation_slice,
    write_corpus,
)


def test_synthetic_corpus_is_seeded_and_exact_length():
    first = make_synthetic_corpus(seed=9, count=5, length=40)
    assert first == make_synthetic_corpus(seed=9, count=5, length=40)
    assert all(len(r.tokens) == 40 and r.group == "NLS" for r in first)
    assert bytes(first[0].tokens[:1]).isupper()


def test_synthetic_corpus_rejects_empty_request():
    with pytest.raises(CorpusError):
        make_synthetic_corpus(seed=1, count=0, length=10)


def test_corpus_file_round_trip(corpus, tmp_path):
    path = write_corpus(corpus[:3], tmp_path / "c.jsonl")
    assert read_corpus(path) == corpus[:3]
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert set(first) == {"id", "group", "tokens"}


def test_read_corpus_reports_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "tokens": [1, 2]}\nnot json\n', encoding="utf-8")
    with pytest.raises(CorpusError):
        read_corpus(path)


def test_validation_slice_takes_the_tail():
    records = [CorpusRecord(id=f"r{i}", tokens=list(range(10))) for i in range(10)]
    sample, description = validation_slice(records, 0.2, token_cap=15, max_ctx=8)
    assert [s.size for s in sample] == [8, 7]
    assert "tail 2/10" in description
    with pytest.raises(CorpusError):
        validation_slice([], 0.2, 10, 8)


def test_unigram_distribution():
    ids, probs = unigram_distribution([CorpusRecord(id="a", tokens=[1, 1, 2]), CorpusRecord(id="b", tokens=[2, 3])])
    assert ids.tolist() == [1, 2, 3]
    np.testing.assert_allclose(probs, [0.4, 0.4, 0.2])
    with pytest.raises(CorpusError):
        unigram_distribution([CorpusRecord(id="a", tokens=[])])
