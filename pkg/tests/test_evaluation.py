import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amtl.corpus import CorpusSpec, generate_corpus
from amtl.data import LabeledUtterance
from amtl.errors import ConfigError, DataError
from amtl.evaluation import (
    EvalReport,
    ProbeConfig,
    compare_modes,
    fer_from_predictions,
    format_mode_table,
    frame_error_rate,
    invariance_score,
    predict_senones,
    relative_reduction,
    train_probe,
    trimmed_labels,
)
from amtl.model import AmtlModel, ModelConfig

TINY_DELAYS = ((-1, 0, 1), (-1, 1))


def test_fer_perfect_predictions():
    labels = [np.array([0, 1, 2]), np.array([3, 3])]
    rep = fer_from_predictions(labels, labels, [0, 1])
    assert rep.overall_fer == 0.0
    assert rep.per_age_fer == {0: 0.0, 1: 0.0}


def test_fer_permuted_labels_near_random():
    rng = np.random.default_rng(0)
    K = 10
    labels = [rng.integers(0, K, size=1000) for _ in range(20)]
    preds = [(y + rng.integers(1, K, size=y.size)) % K for y in labels]
    assert fer_from_predictions(preds, labels, [0] * 20).overall_fer == 1.0
    preds = [rng.integers(0, K, size=y.size) for y in labels]
    assert fer_from_predictions(preds, labels, [0] * 20).overall_fer == pytest.approx((K - 1) / K, abs=0.01)


def test_fer_empty_raises():
    with pytest.raises(DataError):
        fer_from_predictions([], [], [])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 3), st.integers(0, 2**31)), min_size=1, max_size=8))
def test_per_age_aggregation_identity(utts):
    preds, labels, ages = [], [], []
    for n, age, seed in utts:
        rng = np.random.default_rng(seed)
        labels.append(rng.integers(0, 3, size=n))
        preds.append(rng.integers(0, 3, size=n))
        ages.append(age)
    rep = fer_from_predictions(preds, labels, ages)
    weighted = sum(rep.per_age_fer[a] * rep.per_age_frames[a] for a in rep.per_age_fer) / rep.n_frames
    assert abs(weighted - rep.overall_fer) < 1e-12


def test_fer_hand_count_on_tiny_model():
    c = generate_corpus(CorpusSpec(utterances_per_speaker=2, frames_per_utterance=(8, 12), feature_dim=4, n_senones=3, n_age_groups=2, n_speakers=24))
    utts = c.dev[:10]
    model = AmtlModel(ModelConfig(tdnn_delays=TINY_DELAYS, input_dim=4, g_width=4, head_hidden_width=4, n_senones=3, n_speakers=16, n_age_groups=2, mode="BASELINE"))
    preds = predict_senones(model, utts)
    errors = frames = 0
    for p, u in zip(preds, utts):
        y = trimmed_labels(model, u)
        for a, b in zip(p.tolist(), y.tolist()):
            errors += a != b
            frames += 1
    rep = frame_error_rate(model, utts)
    assert rep.n_frames == frames
    assert rep.overall_fer == errors / frames


def test_invariance_score():
    assert invariance_score(0.6, 0.1, 0.6) == 0.0
    assert invariance_score(0.1, 0.1, 0.6) == 1.0
    assert invariance_score(0.35, 0.1, 0.6) == pytest.approx(0.5)
    assert invariance_score(0.05, 0.1, 0.6) == 1.0
    assert invariance_score(0.9, 0.1, 0.6) == 0.0


def test_relative_reduction_paper_values():
    assert round(100 * relative_reduction(14.4, 13.26), 1) == 7.9


def test_compare_modes():
    fers = {"BASELINE": {"test": 0.144, "dev": 0.16}, "AGE": {"test": 0.1326, "dev": 0.1442}}
    rows = compare_modes(fers)
    by = {(r.mode, r.split): r for r in rows}
    assert by[("BASELINE", "test")].relative_reduction is None
    assert by[("AGE", "test")].relative_reduction == (0.144 - 0.1326) / 0.144
    assert by[("AGE", "dev")].relative_reduction == (0.16 - 0.1442) / 0.16
    table = format_mode_table(rows)
    assert "7.9%" in table and "9.9%" in table


def test_compare_identical_is_zero():
    rep = EvalReport("dev", 0.3, {0: 0.3}, {0: 10}, 10)
    rows = compare_modes({"BASELINE": {"dev": rep}, "AGE_SPK": {"dev": rep}})
    assert rows[-1].relative_reduction == 0.0


def test_compare_requires_baseline():
    with pytest.raises(ConfigError):
        compare_modes({"AGE": {"dev": 0.1}, "SPK": {"dev": 0.1}})
    with pytest.raises(ConfigError):
        compare_modes({"BASELINE": {"dev": 0.1}})


@pytest.fixture(scope="module")
def probe_corpus():
    c = generate_corpus(CorpusSpec(utterances_per_speaker=10, frames_per_utterance=(30, 40), feature_dim=12, n_senones=5,
                                  noise_sigma=1.0))
    return c.dev + c.test


def test_probe_deterministic(probe_corpus):
    cfg = ProbeConfig(epochs=3)
    a = train_probe(None, probe_corpus, "speaker", cfg)
    b = train_probe(None, probe_corpus, "speaker", cfg)
    assert a.probe_accuracy == b.probe_accuracy
    assert a.probe_accuracy > a.chance_level + 0.2


def test_probe_shuffled_labels_at_chance(probe_corpus):
    for target in ("speaker", "age"):
        rep = train_probe(None, probe_corpus, target, ProbeConfig(epochs=5), shuffle_labels=True)
        se = np.sqrt(rep.chance_level * (1 - rep.chance_level) / rep.n_eval_frames)
        assert abs(rep.probe_accuracy - rep.chance_level) <= 3 * se


def test_probe_self_reference_is_zero(probe_corpus):
    rep = train_probe(None, probe_corpus, "age", ProbeConfig(epochs=3))
    again = train_probe(None, probe_corpus, "age", ProbeConfig(epochs=3), reference_accuracy=rep.probe_accuracy)
    assert again.invariance_score == 0.0


def test_probe_needs_two_classes():
    utts = [LabeledUtterance(f"u{i}", np.ones((5, 2)) * i, np.zeros(5), 0, 0) for i in range(4)]
    with pytest.raises(DataError):
        train_probe(None, utts, "speaker")
    with pytest.raises(ConfigError):
        train_probe(None, utts + [LabeledUtterance("x", np.ones((5, 2)), np.zeros(5), 1, 1)] * 2, "gender")
