import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amtl.data import LabeledUtterance
from amtl.errors import ConfigError, LabelError, ShapeError
from amtl.model import (
    ALL_MODES,
    AmtlModel,
    Mode,
    ModelConfig,
    backward_and_update_generator,
    backward_and_update_heads,
    backward_and_update_senone,
    compute_grads,
    forward_losses,
    generator_backward,
    generator_forward,
    head_backward,
    head_forward,
)
from amtl.numerics import ParameterSet, finite_diff_check, softmax_xent

TINY = dict(tdnn_delays=((-1, 0, 1), (-2, 1)), input_dim=4, g_width=8, head_hidden_width=6,
            n_senones=4, n_speakers=3, n_age_groups=2)


def tiny_model(mode="AGE_SPK", seed=0):
    return AmtlModel(ModelConfig(**TINY, mode=mode, seed=seed))


def tiny_batch(seed=0, n_utts=3, lengths=(9, 12)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_utts):
        T = int(rng.integers(lengths[0], lengths[1] + 1))
        out.append(LabeledUtterance(f"u{i}", rng.standard_normal((T, 4)), rng.integers(0, 4, T),
                                    int(rng.integers(0, 3)), int(rng.integers(0, 2))))
    return out


def snapshot(model):
    return {p.name: p.value.copy() for p in model.all_params()}


# ---------------------------------------------------------------- structure


def test_mode_heads():
    assert set(tiny_model("BASELINE").param_sets()) == {"G", "P"}
    assert set(tiny_model("AGE").param_sets()) == {"G", "P", "A"}
    assert set(tiny_model("SPK").param_sets()) == {"G", "P", "S"}
    assert set(tiny_model("AGE+SPK").param_sets()) == {"G", "P", "S", "A"}
    with pytest.raises(ConfigError):
        Mode.parse("GENDER")


def test_shared_initialisation_across_modes():
    ref = tiny_model("BASELINE").checksums()
    for mode in ALL_MODES:
        cs = tiny_model(mode).checksums()
        assert cs["G"] == ref["G"] and cs["P"] == ref["P"]


def test_paper_scale_config():
    cfg = ModelConfig.paper_scale()
    assert (cfg.g_width, cfg.n_senones, cfg.n_speakers, cfg.n_age_groups) == (1024, 1360, 794, 11)


def test_initial_senone_loss_near_log_k():
    model = AmtlModel(ModelConfig(mode="BASELINE"))
    rng = np.random.default_rng(0)
    batch = [LabeledUtterance(f"u{i}", rng.standard_normal((60, 40)), rng.integers(0, 20, 60), 0, 0) for i in range(4)]
    losses = forward_losses(model, batch)
    assert losses.s is None and losses.a is None
    per_frame = losses.p / losses.n_frames
    assert abs(per_frame - math.log(20)) < 0.2 * math.log(20)


def test_output_length_and_too_short():
    model = tiny_model()
    left, right = model.context
    cache = generator_forward(model, [np.zeros((10, 4))])
    assert cache.h.shape == (10 - left - right, 8)
    with pytest.raises(ShapeError):
        generator_forward(model, [np.zeros((left + right, 4))])


def test_label_errors_name_utterance():
    model = tiny_model()
    bad = tiny_batch()
    bad[1] = LabeledUtterance("oops", bad[1].features, bad[1].senone_labels, 7, 0)
    with pytest.raises(LabelError, match="oops.*speaker"):
        forward_losses(model, bad)
    with pytest.raises(ShapeError):
        forward_losses(model, [LabeledUtterance("w", np.zeros((12, 5)), np.zeros(12, int), 0, 0)])


# ---------------------------------------------------------------- gradients


def test_composed_forward_matches_per_frame_oracle():
    """Stacked multi-utterance forward equals a per-utterance, per-frame loop."""
    model = tiny_model()
    batch = tiny_batch()
    losses = forward_losses(model, batch)
    left, right = model.context
    total = 0.0
    for u in batch:
        x = u.features
        for i, spec in enumerate(model.tdnn_specs):
            W = model.g_params[f"G.tdnn{i}.W"].value
            b = model.g_params[f"G.tdnn{i}.b"].value
            lo, hi = spec.context
            rows = [np.concatenate([x[t + d] for d in spec.delays]) @ W + b[0] for t in range(lo, x.shape[0] - hi)]
            x = np.maximum(np.array(rows), 0)
        p = model.p_params
        hid = np.maximum(x @ p["P.hidden.W"].value + p["P.hidden.b"].value, 0)
        logits = hid @ p["P.out.W"].value + p["P.out.b"].value
        total += softmax_xent(logits, u.senone_labels[left : u.n_frames - right])[0]
    assert abs(total - losses.p) < 1e-10


def test_full_model_fd_generator_objective():
    """G gradient of J = L_P - a_S L_S - a_A L_A, taken through the reversal layers."""
    model = tiny_model()
    batch = tiny_batch(1)
    model.grl_s.alpha, model.grl_a.alpha = 0.3, 0.7

    def loss(_):
        ls = compute_grads(model, batch, g_terms=("P", "S", "A"))
        return ls.p - 0.3 * ls.s - 0.7 * ls.a

    assert finite_diff_check(loss, model.g_params) <= 1e-5


def test_full_model_fd_heads():
    model = tiny_model()
    batch = tiny_batch(2)
    heads = head_params(model, ("P", "S", "A"))

    def loss(_):
        ls = compute_grads(model, batch, heads=("P", "S", "A"))
        return ls.p + ls.s + ls.a

    assert finite_diff_check(loss, heads) <= 1e-5


def head_params(model, names):
    return ParameterSet(p for k in names for p in model.param_sets()[k])


def _grad_wrt_g(model, batch, head, labels_of):
    """dL_head/dθ_G with no reversal layer, built from the low-level pieces."""
    model.g_params.zero_grad()
    cache = generator_forward(model, [u.features for u in batch])
    left, right = model.context
    labels = np.concatenate([labels_of(u)[left : u.n_frames - right] if labels_of(u).ndim else
                             np.full(u.n_frames - left - right, labels_of(u)) for u in batch])
    ps = model.param_sets()[head]
    logits, hc = head_forward(ps, cache.h)
    _, d = softmax_xent(logits, labels)
    dx = head_backward(ps, hc, d, accumulate=False)
    generator_backward(model, cache, dx)
    out = {p.name: p.grad.copy() for p in model.g_params}
    model.g_params.zero_grad()
    return out


@pytest.mark.parametrize("alphas", [(0.01, 0.01), (0.1, 0.0), (0.0, 0.5), (2.0, 3.0)])
def test_generator_update_matches_three_gradient_oracle(alphas):
    a_s, a_a = alphas
    model = tiny_model()
    batch = tiny_batch(3)
    gP = _grad_wrt_g(model, batch, "P", lambda u: u.senone_labels)
    gS = _grad_wrt_g(model, batch, "S", lambda u: np.array(u.speaker_id))
    gA = _grad_wrt_g(model, batch, "A", lambda u: np.array(u.age_group))
    before = snapshot(model)
    lr = 0.01
    backward_and_update_generator(model, batch, lr, a_s, a_a)
    for p in model.g_params:
        expected = before[p.name] - lr * (gP[p.name] - a_s * gS[p.name] - a_a * gA[p.name])
        assert np.max(np.abs(p.value - expected)) < 1e-10
    for k in ("P", "S", "A"):
        for p in model.param_sets()[k]:
            assert p.value.tobytes() == before[p.name].tobytes()


def test_minimax_sign():
    """The generator step lowers L_P - a(L_S + L_A) for a small step."""
    model = tiny_model()
    batch = tiny_batch(4)
    model.grl_s.alpha = model.grl_a.alpha = 0.5
    ls = forward_losses(model, batch)
    j0 = ls.p - 0.5 * (ls.s + ls.a)
    backward_and_update_generator(model, batch, 1e-3, 0.5, 0.5)
    ls = forward_losses(model, batch)
    assert ls.p - 0.5 * (ls.s + ls.a) < j0


# ---------------------------------------------------------------- updates


def test_zero_alpha_generator_step_equals_baseline_step():
    batch = tiny_batch(5)
    adv, base = tiny_model("AGE_SPK"), tiny_model("BASELINE")
    backward_and_update_generator(adv, batch, 0.05, 0.0, 0.0)
    backward_and_update_generator(base, batch, 0.05, 0.0, 0.0)
    assert adv.checksums()["G"] == base.checksums()["G"]
    for p, q in zip(adv.g_params, base.g_params):
        assert p.value.tobytes() == q.value.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_mode_algebra_phase1_identical(seed):
    """Phase 1 never depends on which adversarial heads exist."""
    batch = tiny_batch(seed)
    sums = set()
    for mode in ALL_MODES:
        m = tiny_model(mode)
        backward_and_update_senone(m, batch, 0.05)
        sums.add((m.checksums()["G"], m.checksums()["P"]))
    assert len(sums) == 1


def test_heads_step_descends_and_freezes_g():
    model = tiny_model()
    batch = tiny_batch(6)
    before = model.checksums()
    l0 = forward_losses(model, batch)
    backward_and_update_heads(model, batch, 0.01)
    l1 = forward_losses(model, batch)
    after = model.checksums()
    assert l1.s < l0.s and l1.a < l0.a
    assert after["G"] == before["G"] and after["P"] == before["P"]
    assert after["S"] != before["S"] and after["A"] != before["A"]


def test_senone_step_descends_and_freezes_heads():
    model = tiny_model()
    batch = tiny_batch(7)
    before = model.checksums()
    l0 = forward_losses(model, batch).p
    backward_and_update_senone(model, batch, 0.01)
    assert forward_losses(model, batch).p < l0
    after = model.checksums()
    assert after["S"] == before["S"] and after["A"] == before["A"]


def test_age_mode_trains_only_age_head():
    model = tiny_model("AGE")
    batch = tiny_batch(8)
    before = model.checksums()
    losses = backward_and_update_heads(model, batch, 0.01)
    assert losses.s is None and losses.a is not None
    assert model.checksums()["A"] != before["A"]
    with pytest.raises(ConfigError):
        backward_and_update_heads(model, batch, 0.01, heads=("S",))


def test_baseline_heads_step_is_noop():
    model = tiny_model("BASELINE")
    before = model.checksums()
    losses = backward_and_update_heads(model, tiny_batch(), 0.01)
    assert losses.p is None and losses.n_frames == 0
    assert model.checksums() == before


def test_freeze_flags_restored():
    model = tiny_model()
    backward_and_update_generator(model, tiny_batch(), 0.01, 0.1, 0.1)
    assert not any(p.frozen for p in model.all_params())
