import numpy as np
import pandas as pd
import pytest

from clada.core.exceptions import ContextLengthError, DimensionError
from clada.modules.model.transformer import forward
from clada.modules.runtime.ablation import ablation_run, write_ablation_report
from clada.modules.runtime.engine import CladaEngine, generate, prefill
from clada.modules.runtime.modes import (
    ModeKind,
    RuntimeMode,
    final_threshold,
    modulation,
    static_mask,
    top_p_for_multiplier,
)
from clada.modules.threshold.policy import ThresholdPolicy
from clada.modules.threshold.search import search_all


@pytest.fixture(scope="module")
def searched_policy(tiny_model, corpus):
    return search_all(tiny_model, [np.asarray(r.tokens[:48]) for r in corpus[-4:]])


@pytest.mark.parametrize(
    "fires_s, fires_h, expected",
    [(False, False, 1.00), (True, False, 1.80), (False, True, 1.12), (True, True, 1.92)],
)
def test_modulation_multipliers(fires_s, fires_h, expected):
    assert modulation(0.80, 0.12, fires_s, fires_h) == pytest.approx(expected, abs=1e-12)


def test_negative_modulation_is_floored():
    assert modulation(0.80, 0.12, True, True, sign=-1) == pytest.approx(0.08)
    assert modulation(1.5, 0.0, True, False, sign=-1) == 0.0


def test_final_threshold_uses_strict_indicators():
    policy = ThresholdPolicy.uniform(2, 0.5, tau_s=0.6, tau_h=0.4)
    assert final_threshold(policy, 0, 0.6, 0.4) == pytest.approx(0.5)
    assert final_threshold(policy, 1, 0.61, 0.41) == pytest.approx(0.5 * 1.92)


@pytest.mark.parametrize(
    "text, kind, label",
    [
        ("dense", ModeKind.DENSE, "dense"),
        ("clada_full", ModeKind.CLADA_FULL, "clada_full"),
        ("top_p(0.5)", ModeKind.TOP_P, "top_p(0.5)"),
        ("top_k:0.25", ModeKind.TOP_K, "top_k(0.25)"),
        ("top_p", ModeKind.TOP_P, "top_p(0.5)"),
    ],
)
def test_parse_mode(text, kind, label):
    mode = RuntimeMode.parse(text)
    assert mode.kind == kind and mode.label == label


def test_parse_mode_rejects_bad_input():
    with pytest.raises(ValueError):
        RuntimeMode.parse("top_p(1.5)")
    with pytest.raises(ValueError):
        RuntimeMode.parse("sparse")


def test_top_k_breaks_ties_by_lower_index():
    mask = static_mask(np.array([1.0, 3.0, 3.0, 0.5]), RuntimeMode.parse("top_k(0.25)"))
    assert mask.tolist() == [False, True, False, False]


def test_top_p_keeps_shortest_prefix_reaching_mass():
    values = np.array([1.0, 4.0, 2.0, 3.0])
    assert static_mask(values, RuntimeMode.parse("top_p(0.5)")).tolist() == [False, True, False, True]
    assert static_mask(values, RuntimeMode.parse("top_p(0.4)")).tolist() == [False, True, False, False]
    assert static_mask(values, RuntimeMode.parse("top_p(1.0)")).all()
    assert not static_mask(np.zeros(4), RuntimeMode.parse("top_p(0.5)")).any()


def test_top_p_for_multiplier():
    assert top_p_for_multiplier(1.0) == 0.5
    assert top_p_for_multiplier(1.92) == pytest.approx(0.5 / 1.92)
    assert top_p_for_multiplier(0.25) == 1.0
    assert top_p_for_multiplier(0.0) == 1.0


def test_zero_thresholds_reproduce_dense(tiny_model, corpus):
    policy = ThresholdPolicy.uniform(tiny_model.dims.n_layers, 0.0)
    for record in corpus[:10]:
        prompt = record.tokens[:12]
        dense, _ = generate(tiny_model, prompt, policy, "dense", max_new=64)
        full, stats = generate(tiny_model, prompt, policy, "clada_full", max_new=64)
        assert full == dense
        assert stats.mean_sparsity == 0.0
        assert stats.mlp_macs == stats.dense_mlp_macs


def test_dense_engine_matches_full_recompute(tiny_model, prompt):
    policy = ThresholdPolicy.uniform(tiny_model.dims.n_layers, 0.0)
    tokens, stats = generate(tiny_model, prompt, policy, "dense", max_new=6)
    sequence = list(prompt)
    for _ in range(6):
        logits, _ = forward(tiny_model, sequence)
        sequence.append(int(np.argmax(logits[-1])))
    assert tokens == sequence[prompt.size :]
    assert stats.tokens_generated == 6 and stats.decode_steps == 5


def test_prefill_masks_follow_tau_base(tiny_model, prompt, searched_policy):
    state = prefill(tiny_model, prompt, searched_policy)
    assert state.magnitudes.shape == (1, tiny_model.dims.n_layers, tiny_model.dims.d_h)
    for layer, tau in enumerate(searched_policy.tau_bases()):
        np.testing.assert_array_equal(state.masks[0, layer], state.magnitudes[0, layer] >= tau)
        mags = state.layer_magnitudes(layer)
        assert mags.source_positions == (0, prompt.size)
    assert len(state.surprisal_history[0]) == prompt.size - 1


def test_sparse_generation_is_deterministic_and_sparse(tiny_model, prompt, searched_policy):
    first, stats = generate(tiny_model, prompt, searched_policy, "clada_full", max_new=16)
    second, _ = generate(tiny_model, prompt, searched_policy, "clada_full", max_new=16)
    assert first == second
    assert 0.0 < stats.mean_sparsity < 1.0
    assert stats.mlp_macs < stats.dense_mlp_macs
    assert 0.0 <= stats.indicator_fire_rate_s <= 1.0


def test_negative_sign_keeps_more_neurons(tiny_model, prompt, searched_policy):
    lowered = searched_policy.model_copy(update={"modulation_sign": -1})
    _, raised_stats = generate(tiny_model, prompt, searched_policy, "clada_full", max_new=16)
    _, lowered_stats = generate(tiny_model, prompt, lowered, "clada_full", max_new=16)
    _, plain_stats = generate(tiny_model, prompt, searched_policy, "clada_no_semantic", max_new=16)
    assert lowered_stats.mean_sparsity <= plain_stats.mean_sparsity + 1e-12
    assert raised_stats.mean_sparsity >= plain_stats.mean_sparsity - 1e-12


def test_static_modes_keep_their_masks(tiny_model, prompt, searched_policy):
    _, stats = generate(tiny_model, prompt, searched_policy, "top_k(0.25)", max_new=8)
    assert stats.mean_sparsity == pytest.approx(0.75)


def test_lagged_magnitudes_run(tiny_model, prompt, searched_policy):
    tokens, stats = generate(tiny_model, prompt, searched_policy, "clada_full", max_new=8, magnitude_source="lagged")
    assert len(tokens) == 8 and stats.decode_steps == 7


def test_batch_uses_union_of_stream_masks(tiny_model, corpus, searched_policy):
    prompts = np.stack([np.asarray(r.tokens[:10]) for r in corpus[:3]])
    engine = CladaEngine(tiny_model, searched_policy, "clada_no_semantic")
    tokens, stats = engine.generate_batch(prompts, 6)
    assert tokens.shape == (3, 6) and stats.batch_size == 3
    singles = [engine.generate(p, 6)[1].mean_sparsity for p in prompts]
    assert stats.mean_sparsity <= min(singles) + 1e-12


def test_length_checks(tiny_model, searched_policy):
    with pytest.raises(ContextLengthError):
        generate(tiny_model, [], searched_policy)
    with pytest.raises(ContextLengthError):
        generate(tiny_model, [1] * 100, searched_policy, max_new=40)
    with pytest.raises(ValueError):
        generate(tiny_model, [1, 2], searched_policy, max_new=0)


def test_policy_layers_must_match(tiny_model):
    with pytest.raises(DimensionError):
        CladaEngine(tiny_model, ThresholdPolicy.uniform(3, 0.0))


def test_ablation_report(tiny_model, corpus, searched_policy, tmp_path):
    prompts = [np.asarray(r.tokens[:12]) for r in corpus[:2]]
    rows = ablation_run(tiny_model, prompts, searched_policy, ["dense", "top_p(0.5)"], max_new=8)
    assert rows[0].mode == "dense" and rows[0].agreement_rate == 1.0
    assert 0.0 <= rows[1].agreement_rate <= 1.0
    frame = pd.read_csv(write_ablation_report(rows, tmp_path / "ablation.csv"))
    assert list(frame["mode"]) == ["dense", "top_p(0.5)"]


@pytest.mark.slow
def test_ablation_ordering(tiny_model, corpus, searched_policy):
    policy = searched_policy.model_copy(update={"modulation_sign": -1})
    prompts = [np.asarray(r.tokens[:24]) for r in corpus[:12]]
    rows = {
        row.mode: row.agreement_rate
        for row in ablation_run(tiny_model, prompts, policy, ["clada_full", "clada_no_semantic", "top_p(0.5)"], 32)
    }
    assert rows["clada_full"] >= rows["clada_no_semantic"] >= rows["top_p(0.5)"]


def test_agreement_skips_the_prefill_token(tiny_model, prompt, monkeypatch):
    decode = CladaEngine.decode

    def wrong_after_prefill(self, state, max_new, forced=None):
        fed, predicted, stats = decode(self, state, max_new, forced)
        if self.mode.label != "dense":
            predicted = predicted.copy()
            predicted[:, 1:] = (forced[:, 1:] + 1) % 256
        return fed, predicted, stats

    monkeypatch.setattr(CladaEngine, "decode", wrong_after_prefill)
    policy = ThresholdPolicy.uniform(tiny_model.dims.n_layers, 0.0)
    rows = ablation_run(tiny_model, [prompt], policy, ["top_k(0.5)"], max_new=5)
    assert rows[0].agreement_rate == 0.0
    with pytest.raises(ValueError):
        ablation_run(tiny_model, [prompt], policy, ["top_k(0.5)"], max_new=1)


def test_ablation_with_load_raising_thresholds(tiny_model, corpus, searched_policy):
    assert searched_policy.modulation_sign == 1
    prompts = [np.asarray(r.tokens[:16]) for r in corpus[:4]]
    modes = ["clada_full", "clada_no_semantic", "clada_no_statistical", "top_p(0.5)"]
    rows = ablation_run(tiny_model, prompts, searched_policy, modes, max_new=12)
    assert [row.mode for row in rows] == modes
    for row in rows:
        assert 0.0 <= row.agreement_rate <= 1.0
        assert 0.0 <= row.mean_sparsity <= 1.0


@pytest.mark.parametrize("fraction", [0.07, 0.14, 0.28, 0.55, 0.56, 0.5, 1.0])
def test_top_k_count_is_exact(fraction):
    mask = static_mask(np.arange(100.0), RuntimeMode.parse(f"top_k({fraction})"))
    assert mask.sum() == round(fraction * 100)
    assert mask[100 - round(fraction * 100) :].all()


def test_unreachable_load_thresholds_match_no_semantic(tiny_model, corpus, searched_policy):
    # Normalized signals never exceed 1.0, so no indicator fires
    policy = searched_policy.model_copy(update={"tau_s": 1.0, "tau_h": 1.0})
    for record in corpus[:4]:
        prompt = record.tokens[:12]
        full, full_stats = generate(tiny_model, prompt, policy, "clada_full", max_new=24)
        plain, plain_stats = generate(tiny_model, prompt, policy, "clada_no_semantic", max_new=24)
        assert full == plain
        assert full_stats.mean_sparsity == plain_stats.mean_sparsity
        assert full_stats.mlp_macs == plain_stats.mlp_macs
        assert full_stats.indicator_fire_rate_s == 0.0 and full_stats.indicator_fire_rate_h == 0.0
