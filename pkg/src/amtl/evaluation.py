"""Frame error rates, invariance probes and mode comparison tables.

Frame error rate (FER) over the senone head stands in for word error rate:
decoding with a lexicon and language model is not part of this package.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LabeledUtterance
from .errors import ConfigError, DataError
from .layers import dense_backward, dense_forward, glorot_uniform, relu_backward, relu_forward
from .model import AmtlModel, Mode, generator_forward, head_forward
from .numerics import softmax_xent


@dataclass
class EvalReport:
    split: str
    overall_fer: float
    per_age_fer: dict[int, float]
    per_age_frames: dict[int, int]
    n_frames: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_age_fer"] = {str(k): v for k, v in self.per_age_fer.items()}
        d["per_age_frames"] = {str(k): v for k, v in self.per_age_frames.items()}
        return d


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def generator_features(model: AmtlModel, utts: Sequence[LabeledUtterance], batch_size: int = 32) -> list[np.ndarray]:
    """G outputs per utterance (read-only use of the parameters)."""
    out = []
    for batch in _batches(list(utts), batch_size):
        cache = generator_forward(model, [u.features for u in batch])
        out.extend(np.split(cache.h, np.cumsum(cache.out_lengths)[:-1], axis=0))
    return out


def predict_senones(model: AmtlModel, utts: Sequence[LabeledUtterance], batch_size: int = 32) -> list[np.ndarray]:
    """Argmax senone per surviving frame; ties go to the lowest class index."""
    preds = []
    for h in generator_features(model, utts, batch_size):
        logits, _ = head_forward(model.p_params, h)
        preds.append(np.argmax(logits, axis=1))
    return preds


def trimmed_labels(model: AmtlModel, u: LabeledUtterance) -> np.ndarray:
    left, right = model.context
    return u.senone_labels[left : u.n_frames - right]


def fer_from_predictions(preds, labels, ages, split: str = "") -> EvalReport:
    """FER with a per-age breakdown from per-utterance predictions and labels."""
    if not len(preds):
        raise DataError("frame_error_rate: no utterances")
    errs: dict[int, int] = defaultdict(int)
    frames: dict[int, int] = defaultdict(int)
    for p, y, a in zip(preds, labels, ages):
        p = np.asarray(p)
        y = np.asarray(y)
        if p.shape != y.shape:
            raise DataError(f"prediction shape {p.shape} vs label shape {y.shape}")
        errs[int(a)] += int((p != y).sum())
        frames[int(a)] += int(y.size)
    n = sum(frames.values())
    if n == 0:
        raise DataError("frame_error_rate: no frames")
    per_age = {a: errs[a] / frames[a] for a in sorted(frames) if frames[a]}
    return EvalReport(split, sum(errs.values()) / n, per_age, {a: frames[a] for a in sorted(frames)}, n)


def frame_error_rate(model: AmtlModel, utts: Sequence[LabeledUtterance], split: str = "") -> EvalReport:
    preds = predict_senones(model, utts)
    labels = [trimmed_labels(model, u) for u in utts]
    return fer_from_predictions(preds, labels, [u.age_group for u in utts], split)


# ---------------------------------------------------------------- probes


@dataclass
class ProbeReport:
    target: str
    probe_accuracy: float
    chance_level: float
    majority_level: float
    n_classes: int
    n_eval_frames: int
    reference_accuracy: Optional[float] = None
    invariance_score: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def invariance_score(accuracy: float, chance: float, reference: float) -> float:
    """1 - (acc - chance) / (ref - chance), clamped to [0, 1]. 1 means no residual information."""
    margin = reference - chance
    if margin <= 0:
        return 1.0 if accuracy <= chance else 0.0
    return float(np.clip(1.0 - (accuracy - chance) / margin, 0.0, 1.0))


@dataclass
class ProbeConfig:
    hidden: int = 64
    epochs: int = 20
    learning_rate: float = 0.05
    batch_frames: int = 128
    seed: int = 0


def probe_split(utts: Sequence[LabeledUtterance]):
    """Alternate each speaker's utterances between probe-fit and probe-eval sets."""
    seen: dict[int, int] = defaultdict(int)
    fit, held = [], []
    for u in utts:
        (fit if seen[u.speaker_id] % 2 == 0 else held).append(u)
        seen[u.speaker_id] += 1
    return fit, held


def _target_of(u: LabeledUtterance, target: str) -> int:
    if target == "speaker":
        return u.speaker_id
    if target == "age":
        return u.age_group
    raise ConfigError(f"unknown probe target {target!r}")


def _frame_data(model, utts, target):
    if model is None:
        feats = [u.features for u in utts]
    else:
        feats = generator_features(model, utts)
    ys = [np.full(f.shape[0], _target_of(u, target), dtype=np.int64) for f, u in zip(feats, utts)]
    return np.concatenate(feats, axis=0), np.concatenate(ys)


def train_probe(
    model: Optional[AmtlModel],
    utts: Sequence[LabeledUtterance],
    target: str,
    config: ProbeConfig = ProbeConfig(),
    reference_accuracy: Optional[float] = None,
    shuffle_labels: bool = False,
) -> ProbeReport:
    """Fit a fresh one-hidden-layer classifier on frozen G outputs and score it
    on held-out utterances of the same speakers.

    ``model=None`` probes the raw input features instead. Inputs are
    standardised with the fit-set statistics. With ``shuffle_labels`` the frame
    labels are permuted within each set, which should give chance accuracy.
    """
    fit, held = probe_split(utts)
    if not fit or not held:
        raise DataError("probe needs at least two utterances per speaker")
    Xf, yf = _frame_data(model, fit, target)
    Xe, ye = _frame_data(model, held, target)
    classes = np.unique(np.concatenate([yf, ye]))
    if classes.size < 2:
        raise DataError(f"probe target {target!r} has fewer than 2 classes in the data")
    remap = {c: i for i, c in enumerate(classes.tolist())}
    yf = np.array([remap[v] for v in yf.tolist()], dtype=np.int64)
    ye = np.array([remap[v] for v in ye.tolist()], dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    if shuffle_labels:
        yf = rng.permutation(yf)
        ye = rng.permutation(ye)

    mu = Xf.mean(axis=0)
    sd = Xf.std(axis=0)
    sd[sd < 1e-8] = 1.0
    Xf = (Xf - mu) / sd
    Xe = (Xe - mu) / sd

    K = classes.size
    W1 = glorot_uniform(rng, Xf.shape[1], config.hidden)
    b1 = np.zeros((1, config.hidden))
    W2 = glorot_uniform(rng, config.hidden, K)
    b2 = np.zeros((1, K))
    for _ in range(config.epochs):
        order = rng.permutation(Xf.shape[0])
        for i in range(0, order.size, config.batch_frames):
            idx = order[i : i + config.batch_frames]
            x = Xf[idx]
            z = dense_forward(x, W1, b1)
            a = relu_forward(z)
            logits = dense_forward(a, W2, b2)
            _, dl = softmax_xent(logits, yf[idx])
            dl /= idx.size
            da, dW2, db2 = dense_backward(dl, a, W2)
            _, dW1, db1 = dense_backward(relu_backward(da, z), x, W1)
            W1 -= config.learning_rate * dW1
            b1 -= config.learning_rate * db1
            W2 -= config.learning_rate * dW2
            b2 -= config.learning_rate * db2

    pred = np.argmax(dense_forward(relu_forward(dense_forward(Xe, W1, b1)), W2, b2), axis=1)
    acc = float((pred == ye).mean())
    freq = np.bincount(ye, minlength=K) / ye.size
    chance = float((freq**2).sum())
    report = ProbeReport(target, acc, chance, float(freq.max()), int(K), int(ye.size))
    if reference_accuracy is not None:
        report.reference_accuracy = reference_accuracy
        report.invariance_score = invariance_score(acc, chance, reference_accuracy)
    return report


# ---------------------------------------------------------------- reporting


@dataclass
class ModeRow:
    mode: str
    split: str
    fer: float
    relative_reduction: Optional[float] = None


def relative_reduction(base: float, value: float) -> float:
    return (base - value) / base


def compare_modes(fers: dict) -> list[ModeRow]:
    """Rows of FER per mode and split with the relative reduction against BASELINE.

    ``fers`` maps mode -> split -> FER (or EvalReport).
    """
    fers = {Mode.parse(k).value: v for k, v in fers.items()}
    if len(fers) < 2:
        raise ConfigError("compare_modes needs at least two modes")
    if Mode.BASELINE.value not in fers:
        raise ConfigError("compare_modes needs a BASELINE run")
    base = fers[Mode.BASELINE.value]
    rows = []
    order = [m.value for m in Mode if m.value in fers]
    for mode in order:
        for split, v in fers[mode].items():
            fer = v.overall_fer if isinstance(v, EvalReport) else float(v)
            b = base[split]
            bfer = b.overall_fer if isinstance(b, EvalReport) else float(b)
            rows.append(ModeRow(mode, split, fer, None if mode == Mode.BASELINE.value else relative_reduction(bfer, fer)))
    return rows


def format_mode_table(rows: list[ModeRow]) -> str:
    splits = sorted({r.split for r in rows}, key=lambda s: ("test", "dev").index(s) if s in ("test", "dev") else 9)
    modes = list(dict.fromkeys(r.mode for r in rows))
    lookup = {(r.mode, r.split): r for r in rows}
    head = f"{'mode':<10}" + "".join(f"{s + ' FER %':>12}{'rel. red.':>11}" for s in splits)
    lines = [head, "-" * len(head)]
    for m in modes:
        cells = []
        for s in splits:
            r = lookup.get((m, s))
            if r is None:
                cells.append(f"{'-':>12}{'-':>11}")
                continue
            red = "" if r.relative_reduction is None else f"{100 * r.relative_reduction:.1f}%"
            cells.append(f"{100 * r.fer:>12.2f}{red:>11}")
        lines.append(f"{m:<10}" + "".join(cells))
    return "\n".join(lines)
