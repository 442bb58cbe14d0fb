import math

import numpy as np
import pandas as pd
import pytest
from PIL import Image
from scipy import stats

from clada.core.constants import CASE_STUDY_SAMPLES, PANEL_COLUMNS
from clada.core.exceptions import (
    ContextLengthError,
    CorpusError,
    DegenerateInputError,
    DimensionError,
    InsufficientDataError,
    LayerIndexError,
    PositionError,
    TokenRangeError,
)
from clada.modules.corpus.records import CorpusRecord, make_synthetic_corpus, unigram_distribution
from clada.modules.model.tokenizer import tokenize
from clada.modules.model.transformer import TraceConfig, forward
from clada.modules.similarity import flocking
from clada.modules.similarity.extraction import extract_activation_matrix, pairwise_similarity, probe
from clada.modules.similarity.flocking import read_panel, run_flocking_experiment, write_panel
from clada.modules.similarity.heatmap import export_heatmap, to_grey
from clada.modules.similarity.kernels import cka, cosine, delta_sim, similarity
from clada.modules.similarity.sequences import make_hybrid, make_rts, prefix_length


def test_cka_hand_cases():
    eye = np.eye(2)
    assert cka(eye, eye) == pytest.approx(1.0, abs=1e-12)
    assert cka(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]])) == 0.0
    assert cka(eye, np.array([[1.0, 1.0], [0.0, 0.0]])) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-12)


def test_cosine_hand_cases():
    assert cosine(np.eye(2), np.array([[1.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.5)
    assert cosine(np.eye(2), -np.eye(2)) == pytest.approx(-1.0)


def test_kernel_properties(rng):
    for _ in range(1000):
        rows, cols = rng.integers(1, 6, size=2)
        x = rng.normal(size=(rows, cols))
        y = rng.normal(size=(rows, cols))
        value = cka(x, y)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(cka(y, x), abs=1e-12)
        assert cka(3.5 * x, y) == pytest.approx(value, abs=1e-9)
        assert cka(x, x) == pytest.approx(1.0, abs=1e-12)
        assert -1.0 <= cosine(x, y) <= 1.0


def test_cka_wide_matrices_use_the_row_gram(rng):
    wide = rng.normal(size=(4, 12))
    other = rng.normal(size=(4, 12))
    expected = np.sum((wide.T @ other) ** 2) / (
        np.linalg.norm(wide.T @ wide) * np.linalg.norm(other.T @ other)
    )
    assert cka(wide, other) == pytest.approx(expected, rel=1e-10)


def test_kernels_reject_bad_input():
    with pytest.raises(DegenerateInputError):
        cka(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(DimensionError):
        cosine(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        similarity(np.eye(2), np.eye(2), "euclid")


def test_delta_sim():
    a = np.eye(2)
    b = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert delta_sim(a, b, b, "cos") == pytest.approx(1.0)
    assert delta_sim(a, b, a, "cka") == pytest.approx(0.0)
    with pytest.raises(DegenerateInputError):
        delta_sim(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), np.eye(1, 2), "cos")
    with pytest.raises(DegenerateInputError):
        delta_sim(np.array([[1.0, 0.0]]), np.array([[1e-14, 1.0]]), np.eye(1, 2), "cos")


@pytest.mark.parametrize("length, alpha, expected", [(256, 0.25, 64), (10, 0.35, 4), (10, 0.3, 3), (7, 1.0, 7)])
def test_prefix_length(length, alpha, expected):
    assert prefix_length(length, alpha) == expected


def test_make_hybrid():
    a = np.arange(10)
    b = np.arange(100, 110)
    hybrid = make_hybrid(a, b, 0.3)
    assert hybrid.tolist() == [100, 101, 102, 3, 4, 5, 6, 7, 8, 9]
    with pytest.raises(DimensionError):
        make_hybrid(a, b[:5], 0.3)
    with pytest.raises(ValueError):
        make_hybrid(a, b, 0.0)


def test_make_rts_preserves_vocabulary(corpus):
    sequences = make_rts(corpus, 5, 32, 3)
    assert len(sequences) == 3 and all(s.size == 32 for s in sequences)
    vocabulary = {t for r in corpus for t in r.tokens}
    assert set(np.concatenate(sequences).tolist()) <= vocabulary
    assert [s.tolist() for s in make_rts(corpus, 5, 32, 3)] == [s.tolist() for s in sequences]
    with pytest.raises(CorpusError):
        make_rts([], 1, 4, 1)


def test_make_rts_matches_corpus_unigrams(corpus):
    ids, probs = unigram_distribution(corpus)
    sample = np.concatenate(make_rts(corpus, 11, 1000, 100))
    observed = np.array([np.count_nonzero(sample == t) for t in ids])
    assert observed.sum() == 100_000
    assert stats.chisquare(observed, probs * observed.sum()).pvalue > 0.01


def test_make_rts_of_a_single_token():
    sequences = make_rts([CorpusRecord(id="x", tokens=[42] * 5)], 3, 8, 2)
    assert all(s.tolist() == [42] * 8 for s in sequences)


def test_activation_matrix_rows_are_contributions(tiny_model, prompt):
    _, trace = forward(tiny_model, prompt, TraceConfig(layers=(1,), retain_contributions=True))
    matrix = extract_activation_matrix(tiny_model, prompt, 1, 4)
    assert matrix.matrix.shape == (tiny_model.dims.d_h, tiny_model.dims.d_model)
    np.testing.assert_allclose(matrix.matrix, trace[1].contributions[4], rtol=1e-5, atol=1e-6)


def test_probe_next_token_position(tiny_model, prompt):
    matrix, logits = probe(tiny_model, prompt, 0, prompt.size)
    following = int(np.argmax(logits[-1]))
    extended = np.append(prompt, following)
    np.testing.assert_allclose(
        matrix.matrix, extract_activation_matrix(tiny_model, extended, 0, prompt.size).matrix, rtol=1e-4, atol=1e-5
    )


def test_probe_with_fixed_continuation(tiny_model, prompt):
    matrix, _ = probe(tiny_model, prompt, 1, prompt.size, follow=7)
    extended = np.append(prompt, 7)
    np.testing.assert_allclose(
        matrix.matrix, extract_activation_matrix(tiny_model, extended, 1, prompt.size).matrix, rtol=1e-4, atol=1e-5
    )
    with pytest.raises(TokenRangeError):
        probe(tiny_model, prompt, 1, prompt.size, follow=tiny_model.dims.vocab_size)


def test_extraction_errors(tiny_model, prompt):
    with pytest.raises(PositionError):
        extract_activation_matrix(tiny_model, prompt, 0, prompt.size + 1)
    with pytest.raises(LayerIndexError):
        extract_activation_matrix(tiny_model, prompt, 5, 0)


def test_case_study_matrix(tiny_model):
    samples = [tokenize(text) for text in CASE_STUDY_SAMPLES]
    matrix = pairwise_similarity(tiny_model, samples, 1)
    assert matrix.shape == (13, 13)
    np.testing.assert_array_equal(np.diag(matrix), np.ones(13))
    np.testing.assert_array_equal(matrix, matrix.T)
    # Samples 0 and 7 are the same sentence.
    assert matrix[0, 7] == pytest.approx(1.0)
    with pytest.raises(InsufficientDataError):
        pairwise_similarity(tiny_model, samples[:1], 1)


def test_export_heatmap(tmp_path):
    data = np.array([[0.0, 1.0], [2.0, 4.0]])
    written = export_heatmap(data, tmp_path / "heat.csv")
    frame = pd.read_csv(written[0])
    assert list(frame.columns) == ["neuron_0", "neuron_1"]
    with Image.open(written[1]) as image:
        assert image.size == (2, 2)
        assert np.asarray(image).tolist() == [[0, 64], [128, 255]]
    assert to_grey(np.ones((2, 2))).max() == 0


@pytest.fixture(scope="module")
def small_panel(tiny_model, corpus):
    return run_flocking_experiment(tiny_model, corpus, n_pairs=3, seq_len=16, seed=1)


def test_flocking_panel_shape(small_panel):
    assert list(small_panel.columns) == list(PANEL_COLUMNS)
    assert len(small_panel) == 3 * 2 * 6 * 2
    assert set(small_panel["group"]) == {"NLS", "RTS"}
    assert set(small_panel["prefix_len"]) == {4, 5, 6, 7, 8}
    assert (small_panel["token_len"] == 16).all()
    assert small_panel["surprisal_mean_norm"].between(0.0, 1.0).all()


def test_flocking_is_reproducible(tiny_model, corpus, small_panel):
    again = run_flocking_experiment(tiny_model, corpus, n_pairs=3, seq_len=16, seed=1)
    pd.testing.assert_frame_equal(small_panel, again)


def test_panel_file_round_trip(small_panel, tmp_path):
    loaded = read_panel(write_panel(small_panel, tmp_path / "panel.csv"))
    pd.testing.assert_frame_equal(loaded, small_panel, check_exact=False, rtol=1e-12)


def test_flocking_input_checks(tiny_model, corpus):
    with pytest.raises(InsufficientDataError):
        run_flocking_experiment(tiny_model, corpus[:3], n_pairs=3, seq_len=16)
    with pytest.raises(ContextLengthError):
        run_flocking_experiment(tiny_model, corpus, n_pairs=1, seq_len=tiny_model.dims.max_ctx)
    with pytest.raises(ValueError):
        run_flocking_experiment(tiny_model, corpus, groups=("XYZ",), n_pairs=1, seq_len=16)


def test_longer_shared_prefix_raises_similarity(tiny_model):
    corpus = make_synthetic_corpus(seed=8, count=100, length=64)
    panel = run_flocking_experiment(tiny_model, corpus, n_pairs=50, seq_len=64, seed=2)
    assert len(panel) == 50 * 6 * 2 * 2
    for (group, metric), rows in panel.groupby(["group", "metric"]):
        means = rows.groupby("alpha")["delta_sim"].mean()
        rho = stats.spearmanr(means.index, means.values).statistic
        assert rho > 0, f"{group}/{metric}"


def test_non_positive_reference_similarity_skips_the_pair(tiny_model, corpus, monkeypatch, caplog):
    monkeypatch.setattr(flocking, "similarity", lambda x, y, metric: -0.5)
    panel = run_flocking_experiment(tiny_model, corpus, groups=("NLS",), n_pairs=2, seq_len=16, seed=1)
    assert panel.empty
    assert "not positive" in caplog.text
