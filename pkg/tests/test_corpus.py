import numpy as np
import pytest

from amtl.corpus import (
    CorpusSpec,
    age_warp_matrix,
    bayes_oracle_accuracy,
    build_generative_model,
    corpus_stats,
    generate_corpus,
    markov_senones,
)
from amtl.errors import ConfigError
from amtl.evaluation import train_probe

SMALL = dict(utterances_per_speaker=6, frames_per_utterance=(30, 40), feature_dim=12, n_senones=5)


def test_paper_split_sizes():
    assert CorpusSpec(n_speakers=1110, n_age_groups=11).split_sizes() == (794, 158, 158)


def test_default_split():
    spec = CorpusSpec()
    assert spec.split_sizes() == (24, 6, 6)
    stats = corpus_stats(generate_corpus(CorpusSpec(**SMALL)))
    assert [stats["splits"][s]["n_speakers"] for s in ("train", "dev", "test")] == [24, 6, 6]
    for s in ("train", "dev", "test"):
        assert all(v >= 2 for v in stats["splits"][s]["speakers_per_age"].values())
        assert len(stats["splits"][s]["speakers_per_age"]) == 3


def test_zero_dev_proportion_rejected():
    with pytest.raises(ConfigError, match="dev"):
        generate_corpus(CorpusSpec(split_weights=(1, 0, 1)))


def test_too_few_speakers_rejected():
    with pytest.raises(ConfigError, match="per age group"):
        CorpusSpec(n_speakers=20).validate()


def test_histograms_conserve_frames():
    stats = corpus_stats(generate_corpus(CorpusSpec(**SMALL)))
    total = 0
    for s in stats["splits"].values():
        assert sum(s["senone_histogram"].values()) == s["n_frames"]
        assert sum(s["frames_per_age"].values()) == s["n_frames"]
        total += s["n_frames"]
    assert total == stats["total_frames"]
    assert stats["speaker_overlap"] == []


def test_speaker_owns_one_age_and_split():
    c = generate_corpus(CorpusSpec(**SMALL))
    age, split = {}, {}
    for name, utts in c.items():
        for u in utts:
            assert age.setdefault(u.speaker_id, u.age_group) == u.age_group
            assert split.setdefault(u.speaker_id, name) == name
            assert u.senone_labels.shape[0] == u.n_frames


def test_deterministic():
    a = generate_corpus(CorpusSpec(**SMALL, seed=3))
    b = generate_corpus(CorpusSpec(**SMALL, seed=3))
    for (_, ua), (_, ub) in zip(a.items(), b.items()):
        for x, y in zip(ua, ub):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.senone_labels.tobytes() == y.senone_labels.tobytes()
    c = generate_corpus(CorpusSpec(**SMALL, seed=4))
    assert a.train[0].features.tobytes() != c.train[0].features.tobytes()


def test_features_at_float32_precision():
    u = generate_corpus(CorpusSpec(**SMALL)).train[0]
    np.testing.assert_array_equal(u.features, u.features.astype(np.float32))


def test_markov_self_loop_rate():
    rng = np.random.default_rng(0)
    s = markov_senones(rng, 20, 200000)
    stay = np.mean(s[1:] == s[:-1])
    assert stay == pytest.approx(0.7, abs=0.005)
    assert np.all(np.bincount(s, minlength=20) / s.size > 0.04)


def test_age_warp_identity_at_zero():
    np.testing.assert_array_equal(age_warp_matrix(10, 0.0), np.eye(10))
    M = age_warp_matrix(10, 0.3)
    np.testing.assert_allclose(M.sum(axis=1), 1.0)


def test_nuisance_free_limit():
    spec = CorpusSpec(**SMALL, speaker_scale=0.0, age_scale=0.0, noise_sigma=0.0)
    gm = build_generative_model(spec)
    c = generate_corpus(spec)
    protos = gm.prototypes.astype(np.float32).astype(np.float64)
    for _, utts in c.items():
        for u in utts:
            np.testing.assert_array_equal(u.features, protos[u.senone_labels])
    # nearest-prototype senone classifier is perfect
    u = c.dev[0]
    d2 = ((u.features[:, None, :] - gm.prototypes[None]) ** 2).sum(axis=2)
    assert np.all(d2.argmin(axis=1) == u.senone_labels)
    assert bayes_oracle_accuracy(spec, n_samples=2000) == 1.0


def test_nuisance_free_probe_at_chance():
    spec = CorpusSpec(**SMALL, speaker_scale=0.0, age_scale=0.0, noise_sigma=0.0)
    c = generate_corpus(spec)
    rep = train_probe(None, c.dev + c.test, "speaker")
    n = rep.n_eval_frames
    se = np.sqrt(rep.chance_level * (1 - rep.chance_level) / n)
    assert rep.probe_accuracy < rep.chance_level + 4 * se + 0.02


def test_oracle_monotone_in_noise():
    accs = [bayes_oracle_accuracy(CorpusSpec(noise_sigma=s), n_samples=8000) for s in (1.0, 2.0, 3.0)]
    assert accs[0] > accs[1] > accs[2]


def test_default_oracle_ceiling():
    # Recorded ceiling for the default corpus (frame-wise MAP with known speaker/age).
    a = bayes_oracle_accuracy(CorpusSpec())
    assert 0.6 < a < 0.9


def test_age_detectable_on_raw_features():
    c = generate_corpus(CorpusSpec())
    rep = train_probe(None, c.dev + c.test, "age")
    assert rep.probe_accuracy - rep.chance_level >= 0.20
