"""Synthetic labelled corpus with speaker and age-group nuisance structure.

Each senone has a prototype vector. A speaker applies a per-dimension gain and
offset; an age group then stretches the feature axis about its centre (a crude
stand-in for formant shift with growth); Gaussian noise is added last::

    x_t = warp_age(gain_spk * proto[senone_t] + offset_spk) + sigma * noise

Senone sequences follow a Markov chain that stays put with probability 0.7
and otherwise jumps uniformly to another senone. Speakers are split into
train/dev/test by integer weights (794:158:158 by default) with no overlap;
ages are dealt round-robin inside each split so every split sees every age.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SPLITS, Corpus, LabeledUtterance
from .errors import ConfigError

SELF_LOOP = 0.7


@dataclass
class CorpusSpec:
    n_speakers: int = 36
    n_age_groups: int = 3
    n_senones: int = 20
    utterances_per_speaker: int = 40
    frames_per_utterance: tuple = (80, 120)
    feature_dim: int = 40
    speaker_scale: float = 1.0
    age_scale: float = 1.0
    noise_sigma: float = 2.0
    split_weights: tuple = (794, 158, 158)
    seed: int = 0

    def __post_init__(self):
        self.frames_per_utterance = tuple(int(v) for v in self.frames_per_utterance)
        self.split_weights = tuple(int(v) for v in self.split_weights)

    def split_sizes(self) -> tuple[int, int, int]:
        """Speaker counts per split. Dev and test round up, train takes the rest."""
        w = self.split_weights
        total = sum(w)
        n_dev = -(-self.n_speakers * w[1] // total)
        n_test = -(-self.n_speakers * w[2] // total)
        return self.n_speakers - n_dev - n_test, n_dev, n_test

    def validate(self) -> None:
        if len(self.split_weights) != 3 or any(v < 0 for v in self.split_weights):
            raise ConfigError("split_weights: need three non-negative integers (train, dev, test)")
        for i, name in enumerate(SPLITS):
            if self.split_weights[i] == 0:
                raise ConfigError(f"split_weights: {name} proportion must be positive")
        for name in ("n_age_groups", "n_senones"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name}: must be >= 2")
        if self.utterances_per_speaker < 1:
            raise ConfigError("utterances_per_speaker: must be >= 1")
        lo, hi = self.frames_per_utterance
        if not 1 <= lo <= hi:
            raise ConfigError(f"frames_per_utterance: bad range {self.frames_per_utterance}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim: must be positive")
        for name in ("speaker_scale", "age_scale", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")
        sizes = self.split_sizes()
        for name, n in zip(SPLITS, sizes):
            if n < 2 * self.n_age_groups:
                raise ConfigError(
                    f"n_speakers: {name} split gets {n} speakers, fewer than 2 per age group "
                    f"({2 * self.n_age_groups} needed)"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames_per_utterance"] = list(self.frames_per_utterance)
        d["split_weights"] = list(self.split_weights)
        return d


@dataclass
class SpeakerInfo:
    speaker_id: int
    split: str
    age_group: int
    gain: np.ndarray
    offset: np.ndarray


@dataclass
class GenerativeModel:
    """The hidden parameters a corpus is drawn from."""

    spec: CorpusSpec
    prototypes: np.ndarray  # (K, D)
    speakers: list[SpeakerInfo]
    warps: list[np.ndarray] = field(default_factory=list)  # per age group, (D, D)

    def clean_means(self, speaker: SpeakerInfo) -> np.ndarray:
        """Noise-free frame for every senone as spoken by ``speaker``: (K, D)."""
        return (speaker.gain * self.prototypes + speaker.offset) @ self.warps[speaker.age_group].T


def age_warp_matrix(dim: int, beta: float) -> np.ndarray:
    """Linear-interpolation resampler that stretches the feature axis by ``1 + beta``."""
    c = (dim - 1) / 2.0
    pos = np.clip(c + (np.arange(dim) - c) * (1.0 + beta), 0.0, dim - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, dim - 1)
    frac = pos - lo
    M = np.zeros((dim, dim))
    M[np.arange(dim), lo] += 1.0 - frac
    M[np.arange(dim), hi] += frac
    return M


def age_warp_strength(spec: CorpusSpec, age: int) -> float:
    centre = (spec.n_age_groups - 1) / 2.0
    return spec.age_scale * (age - centre) / spec.n_age_groups


def build_generative_model(spec: CorpusSpec) -> GenerativeModel:
    spec.validate()
    ss_proto, ss_spk, _ = np.random.SeedSequence(spec.seed).spawn(3)
    D = spec.feature_dim
    prototypes = np.random.default_rng(ss_proto).standard_normal((spec.n_senones, D))
    warps = [age_warp_matrix(D, age_warp_strength(spec, a)) for a in range(spec.n_age_groups)]

    speakers = []
    seeds = iter(ss_spk.spawn(spec.n_speakers))
    sid = 0
    for split, n in zip(SPLITS, spec.split_sizes()):
        for j in range(n):
            rng = np.random.default_rng(next(seeds))
            gain = 1.0 + 0.25 * spec.speaker_scale * rng.standard_normal(D)
            offset = spec.speaker_scale * rng.standard_normal(D)
            speakers.append(SpeakerInfo(sid, split, j % spec.n_age_groups, gain, offset))
            sid += 1
    return GenerativeModel(spec, prototypes, speakers, warps)


def markov_senones(rng: np.random.Generator, n_senones: int, n_frames: int) -> np.ndarray:
    start = rng.integers(n_senones)
    move = rng.random(n_frames) >= SELF_LOOP
    move[0] = False
    jumps = rng.integers(1, n_senones, size=n_frames) * move
    return (start + np.cumsum(jumps)) % n_senones


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Draw a corpus. Identical specs give bit-identical corpora.

    Features are rounded to float32 precision so that in-memory corpora and
    their on-disk archives hold exactly the same numbers.
    """
    gm = build_generative_model(spec)
    _, _, ss_utt = np.random.SeedSequence(spec.seed).spawn(3)
    spk_streams = ss_utt.spawn(len(gm.speakers))
    lo, hi = spec.frames_per_utterance
    corpus = Corpus()
    for info, ss in zip(gm.speakers, spk_streams):
        rng = np.random.default_rng(ss)
        means = gm.clean_means(info)
        for j in range(spec.utterances_per_speaker):
            T = int(rng.integers(lo, hi + 1))
            sen = markov_senones(rng, spec.n_senones, T)
            x = means[sen] + spec.noise_sigma * rng.standard_normal((T, spec.feature_dim))
            x = x.astype(np.float32).astype(np.float64)
            corpus.split(info.split).append(
                LabeledUtterance(f"spk{info.speaker_id:04d}_utt{j:03d}", x, sen, info.speaker_id, info.age_group)
            )
    return corpus


def bayes_oracle_accuracy(spec: CorpusSpec, n_samples: int = 20000, seed: int = 1234) -> float:
    """Monte-Carlo frame accuracy of the MAP senone classifier that knows the
    generative parameters and each frame's speaker and age (no temporal context).

    Senones are drawn uniformly, which is the stationary distribution of the chain.
    """
    gm = build_generative_model(spec)
    rng = np.random.default_rng(seed)
    spk = rng.integers(len(gm.speakers), size=n_samples)
    sen = rng.integers(spec.n_senones, size=n_samples)
    noise = rng.standard_normal((n_samples, spec.feature_dim))
    correct = 0
    for s_idx in np.unique(spk):
        rows = np.flatnonzero(spk == s_idx)
        means = gm.clean_means(gm.speakers[s_idx])
        x = means[sen[rows]] + spec.noise_sigma * noise[rows]
        d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        correct += int((d2.argmin(axis=1) == sen[rows]).sum())
    return correct / n_samples


def corpus_stats(corpus: Corpus) -> dict:
    """Per-split speaker, age and senone counts plus frame totals."""
    out: dict = {"splits": {}}
    owner: dict[int, str] = {}
    overlap = set()
    total = 0
    for name, utts in corpus.items():
        spk_age: dict[int, int] = {}
        sen_hist: Counter = Counter()
        age_frames: Counter = Counter()
        frames = 0
        for u in utts:
            spk_age.setdefault(u.speaker_id, u.age_group)
            if owner.setdefault(u.speaker_id, name) != name:
                overlap.add(u.speaker_id)
            sen_hist.update(u.senone_labels.tolist())
            age_frames[u.age_group] += u.n_frames
            frames += u.n_frames
        speakers_per_age = Counter(spk_age.values())
        out["splits"][name] = {
            "n_speakers": len(spk_age),
            "n_utterances": len(utts),
            "n_frames": frames,
            "speakers_per_age": {str(k): speakers_per_age[k] for k in sorted(speakers_per_age)},
            "frames_per_age": {str(k): age_frames[k] for k in sorted(age_frames)},
            "senone_histogram": {str(k): sen_hist[k] for k in sorted(sen_hist)},
        }
        total += frames
    out["total_frames"] = total
    out["speaker_overlap"] = sorted(overlap)
    return out
