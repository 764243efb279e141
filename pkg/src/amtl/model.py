"""Generator / senone / speaker / age networks and their adversarial updates.

The generator G is a stack of valid-frame TDNN layers with ReLU. Three heads
(one hidden ReLU layer plus a softmax output each) sit on top of G's output:
P classifies senones and reads G directly; S (speaker) and A (age group) read G
through gradient reversal layers. All losses are sums over surviving frames;
speaker and age labels are broadcast from the utterance to every frame.
"""

from __future__ import annotations

import enum
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LabeledUtterance
from .errors import ConfigError, LabelError, ShapeError
from .layers import (
    PAPER_DELAYS,
    GrlSpec,
    TdnnSpec,
    dense_backward,
    dense_forward,
    glorot_uniform,
    grl_backward,
    grl_forward,
    receptive_field,
    relu_backward,
    relu_forward,
    splice,
    unsplice,
)
from .numerics import ParameterSet, apply_sgd_step, softmax_xent

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    BASELINE = "BASELINE"
    AGE = "AGE"
    SPK = "SPK"
    AGE_SPK = "AGE_SPK"

    @property
    def has_speaker(self) -> bool:
        return self in (Mode.SPK, Mode.AGE_SPK)

    @property
    def has_age(self) -> bool:
        return self in (Mode.AGE, Mode.AGE_SPK)

    @property
    def adversarial(self) -> bool:
        return self is not Mode.BASELINE

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).upper().replace("+", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown mode {value!r}; expected one of {[m.value for m in cls]}")


ALL_MODES = (Mode.BASELINE, Mode.AGE, Mode.SPK, Mode.AGE_SPK)


@dataclass
class ModelConfig:
    tdnn_delays: tuple = PAPER_DELAYS
    input_dim: int = 40
    g_width: int = 64
    head_hidden_width: int = 64
    n_senones: int = 20
    n_speakers: int = 24
    n_age_groups: int = 3
    mode: Mode = Mode.AGE_SPK
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.tdnn_delays = tuple(tuple(int(d) for d in ds) for ds in self.tdnn_delays)
        if not self.tdnn_delays:
            raise ConfigError("tdnn_delays: at least one TDNN layer required")
        for name in ("n_senones", "n_speakers", "n_age_groups"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be >= 2, got {getattr(self, name)}")
        for name in ("input_dim", "g_width", "head_hidden_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        """Full-size topology: 1024-wide layers and 1360/794/11 outputs."""
        kw = dict(g_width=1024, head_hidden_width=1024, n_senones=1360, n_speakers=794, n_age_groups=11)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "tdnn_delays": [list(d) for d in self.tdnn_delays],
            "input_dim": self.input_dim,
            "g_width": self.g_width,
            "head_hidden_width": self.head_hidden_width,
            "n_senones": self.n_senones,
            "n_speakers": self.n_speakers,
            "n_age_groups": self.n_age_groups,
            "mode": self.mode.value,
            "seed": self.seed,
        }


def _head(name: str, rng, d_in: int, hidden: int, n_out: int) -> ParameterSet:
    ps = ParameterSet()
    ps.new(f"{name}.hidden.W", glorot_uniform(rng, d_in, hidden))
    ps.new(f"{name}.hidden.b", np.zeros((1, hidden)))
    ps.new(f"{name}.out.W", glorot_uniform(rng, hidden, n_out))
    ps.new(f"{name}.out.b", np.zeros((1, n_out)))
    return ps


class AmtlModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        # independent streams so every mode shares the same G and P initialisation
        rng_g, rng_p, rng_s, rng_a = (
            np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
        )
        self.tdnn_specs: list[TdnnSpec] = []
        self.g_params = ParameterSet()
        d = config.input_dim
        for i, delays in enumerate(config.tdnn_delays):
            spec = TdnnSpec(delays, d, config.g_width)
            self.tdnn_specs.append(spec)
            self.g_params.new(f"G.tdnn{i}.W", glorot_uniform(rng_g, spec.splice_dim, spec.out_dim))
            self.g_params.new(f"G.tdnn{i}.b", np.zeros((1, spec.out_dim)))
            d = config.g_width
        h = config.head_hidden_width
        self.p_params = _head("P", rng_p, d, h, config.n_senones)
        self.s_params = _head("S", rng_s, d, h, config.n_speakers) if config.mode.has_speaker else None
        self.a_params = _head("A", rng_a, d, h, config.n_age_groups) if config.mode.has_age else None
        self.grl_s = GrlSpec(0.0)
        self.grl_a = GrlSpec(0.0)

    @property
    def mode(self) -> Mode:
        return self.config.mode

    @property
    def context(self) -> tuple[int, int]:
        return receptive_field(self.config.tdnn_delays)

    def param_sets(self) -> dict[str, ParameterSet]:
        sets = {"G": self.g_params, "P": self.p_params}
        if self.s_params is not None:
            sets["S"] = self.s_params
        if self.a_params is not None:
            sets["A"] = self.a_params
        return sets

    def head(self, name: str) -> ParameterSet:
        ps = self.param_sets().get(name)
        if ps is None:
            raise ConfigError(f"mode {self.mode.value} has no {name} head")
        return ps

    def all_params(self) -> ParameterSet:
        return ParameterSet(p for ps in self.param_sets().values() for p in ps)

    def checksums(self) -> dict[str, str]:
        return {k: ps.checksum() for k, ps in self.param_sets().items()}


# ---------------------------------------------------------------- generator


@dataclass
class GeneratorCache:
    lengths: list[list[int]]  # per layer, input frame counts per utterance
    spliced: list[np.ndarray]  # per layer, stacked spliced inputs
    pre: list[np.ndarray]  # per layer, pre-activations
    out_lengths: list[int]
    h: np.ndarray


def generator_forward(model: AmtlModel, feats: Sequence[np.ndarray]) -> GeneratorCache:
    """Run every utterance through G; outputs are stacked frame-wise."""
    xs = list(feats)
    lengths, spliced, pres = [], [], []
    for i, spec in enumerate(model.tdnn_specs):
        W = model.g_params[f"G.tdnn{i}.W"].value
        b = model.g_params[f"G.tdnn{i}.b"].value
        lengths.append([x.shape[0] for x in xs])
        S = np.concatenate([splice(x, spec) for x in xs], axis=0)
        Z = dense_forward(S, W, b)
        spliced.append(S)
        pres.append(Z)
        A = relu_forward(Z)
        sizes = [n - spec.span for n in lengths[-1]]
        xs = np.split(A, np.cumsum(sizes)[:-1], axis=0)
    out_lengths = [x.shape[0] for x in xs]
    return GeneratorCache(lengths, spliced, pres, out_lengths, relu_forward(pres[-1]))


def generator_backward(model: AmtlModel, cache: GeneratorCache, dh: np.ndarray) -> None:
    """Accumulate dL/dθ_G into ``model.g_params`` grads given dL/dh."""
    dA = dh
    for i in reversed(range(len(model.tdnn_specs))):
        spec = model.tdnn_specs[i]
        Wp = model.g_params[f"G.tdnn{i}.W"]
        bp = model.g_params[f"G.tdnn{i}.b"]
        dZ = relu_backward(dA, cache.pre[i])
        dS, dW, db = dense_backward(dZ, cache.spliced[i], Wp.value)
        Wp.grad += dW
        bp.grad += db
        if i == 0:
            break
        sizes = [n - spec.span for n in cache.lengths[i]]
        parts = np.split(dS, np.cumsum(sizes)[:-1], axis=0)
        dA = np.concatenate(
            [unsplice(p, spec, n) for p, n in zip(parts, cache.lengths[i])], axis=0
        )


# ---------------------------------------------------------------- heads


@dataclass
class HeadCache:
    x: np.ndarray
    z: np.ndarray
    a: np.ndarray


def head_forward(ps: ParameterSet, x: np.ndarray) -> tuple[np.ndarray, HeadCache]:
    name = next(iter(ps)).name.split(".")[0]
    z = dense_forward(x, ps[f"{name}.hidden.W"].value, ps[f"{name}.hidden.b"].value)
    a = relu_forward(z)
    logits = dense_forward(a, ps[f"{name}.out.W"].value, ps[f"{name}.out.b"].value)
    return logits, HeadCache(x, z, a)


def head_backward(ps: ParameterSet, cache: HeadCache, dlogits: np.ndarray, accumulate: bool = True) -> np.ndarray:
    """Backprop through a head; returns dL/dx and (optionally) accumulates weight grads."""
    name = next(iter(ps)).name.split(".")[0]
    Wo, bo = ps[f"{name}.out.W"], ps[f"{name}.out.b"]
    Wh, bh = ps[f"{name}.hidden.W"], ps[f"{name}.hidden.b"]
    da, dWo, dbo = dense_backward(dlogits, cache.a, Wo.value)
    dz = relu_backward(da, cache.z)
    dx, dWh, dbh = dense_backward(dz, cache.x, Wh.value)
    if accumulate:
        Wo.grad += dWo
        bo.grad += dbo
        Wh.grad += dWh
        bh.grad += dbh
    return dx


# ---------------------------------------------------------------- losses


@dataclass
class Losses:
    p: Optional[float] = None
    s: Optional[float] = None
    a: Optional[float] = None
    n_frames: int = 0

    def as_dict(self) -> dict:
        return {"L_P": self.p, "L_S": self.s, "L_A": self.a, "n_frames": self.n_frames}


@dataclass
class FrameTargets:
    senone: np.ndarray
    speaker: np.ndarray
    age: np.ndarray


def frame_targets(model: AmtlModel, batch: Sequence[LabeledUtterance], out_lengths) -> FrameTargets:
    """Trim senone labels to surviving frames and broadcast utterance labels."""
    left, right = model.context
    sen, spk, age = [], [], []
    for u, n in zip(batch, out_lengths):
        lab = u.senone_labels[left : u.n_frames - right]
        assert lab.shape[0] == n
        sen.append(lab)
        spk.append(np.full(n, u.speaker_id, dtype=np.int64))
        age.append(np.full(n, u.age_group, dtype=np.int64))
    return FrameTargets(np.concatenate(sen), np.concatenate(spk), np.concatenate(age))


def check_labels(model: AmtlModel, batch: Sequence[LabeledUtterance], need_speaker: bool, need_age: bool) -> None:
    cfg = model.config
    for u in batch:
        if u.features.shape[1] != cfg.input_dim:
            raise ShapeError(f"{u.utt_id}: feature dim {u.features.shape[1]} != model input_dim {cfg.input_dim}")
        if u.senone_labels.size and (u.senone_labels.min() < 0 or u.senone_labels.max() >= cfg.n_senones):
            raise LabelError(f"{u.utt_id}: senone label outside [0, {cfg.n_senones})")
        if need_speaker and not 0 <= u.speaker_id < cfg.n_speakers:
            raise LabelError(f"{u.utt_id}: speaker label {u.speaker_id} outside [0, {cfg.n_speakers})")
        if need_age and not 0 <= u.age_group < cfg.n_age_groups:
            raise LabelError(f"{u.utt_id}: age label {u.age_group} outside [0, {cfg.n_age_groups})")


def compute_grads(
    model: AmtlModel,
    batch: Sequence[LabeledUtterance],
    *,
    heads: Sequence[str] = (),
    g_terms: Sequence[str] = (),
    need_losses: Sequence[str] = (),
) -> Losses:
    """One forward/backward pass over ``batch``.

    ``heads`` get the gradient of their own loss accumulated; ``g_terms`` lists
    the losses whose gradient flows into G (S and A through their GRL, using the
    current ``model.grl_s`` / ``model.grl_a`` scales). Losses in
    ``need_losses`` are computed even when no gradient is requested.
    """
    sets = model.param_sets()
    wanted = set(heads) | set(g_terms) | set(need_losses)
    for name in wanted:
        if name not in sets:
            raise ConfigError(f"mode {model.mode.value} has no {name} head")
    check_labels(model, batch, "S" in wanted, "A" in wanted)

    cache = generator_forward(model, [u.features for u in batch])
    tg = frame_targets(model, batch, cache.out_lengths)
    h = cache.h
    losses = Losses(n_frames=h.shape[0])
    dh = np.zeros_like(h) if g_terms else None

    branches = (
        ("P", tg.senone, None),
        ("S", tg.speaker, model.grl_s),
        ("A", tg.age, model.grl_a),
    )
    for name, labels, grl in branches:
        if name not in wanted:
            continue
        x = h if grl is None else grl_forward(h, grl)
        logits, hc = head_forward(sets[name], x)
        loss, dlogits = softmax_xent(logits, labels)
        setattr(losses, name.lower(), loss)
        train_head = name in heads and not next(iter(sets[name])).frozen
        if train_head or name in g_terms:
            dx = head_backward(sets[name], hc, dlogits, accumulate=train_head)
            if name in g_terms:
                dh += dx if grl is None else grl_backward(dx, grl)
    if g_terms and not next(iter(model.g_params)).frozen:
        generator_backward(model, cache, dh)
    return losses


@contextmanager
def training_only(model: AmtlModel, names: Sequence[str]):
    """Freeze every parameter set not in ``names`` for the duration."""
    sets = model.param_sets()
    saved = {k: [p.frozen for p in ps] for k, ps in sets.items()}
    try:
        for k, ps in sets.items():
            ps.set_frozen(k not in names)
        yield
    finally:
        for k, ps in sets.items():
            for p, f in zip(ps, saved[k]):
                p.frozen = f


def _step(model: AmtlModel, lr: float) -> None:
    for ps in model.param_sets().values():
        apply_sgd_step(ps, lr)


def forward_losses(model: AmtlModel, batch: Sequence[LabeledUtterance]) -> Losses:
    """L_P, L_S, L_A on ``batch``; losses for heads the mode lacks are ``None``."""
    present = [k for k in ("P", "S", "A") if k in model.param_sets()]
    return compute_grads(model, batch, need_losses=present)


def backward_and_update_senone(model: AmtlModel, batch, lr: float) -> Losses:
    """Phase-1 step: G and P descend on L_P."""
    with training_only(model, ("G", "P")):
        losses = compute_grads(model, batch, heads=("P",), g_terms=("P",))
        _step(model, lr)
    return losses


def backward_and_update_heads(model: AmtlModel, batch, lr: float, heads: Optional[Sequence[str]] = None) -> Losses:
    """Head step with G frozen. By default trains whichever of S and A the mode has.

    Explicitly naming a head the mode lacks is an error; in BASELINE mode the
    default request is a logged no-op.
    """
    if heads is None:
        heads = [k for k in ("S", "A") if k in model.param_sets()]
        if not heads:
            log.info("mode %s has no adversarial heads; head update skipped", model.mode.value)
            return Losses()
    for k in heads:
        model.head(k)
    with training_only(model, tuple(heads)):
        losses = compute_grads(model, batch, heads=tuple(heads))
        _step(model, lr)
    return losses


def backward_and_update_generator(model: AmtlModel, batch, lr: float, alpha_s: float, alpha_a: float) -> Losses:
    """Adversarial G step with P, S and A frozen.

    G follows ``dL_P - alpha_s dL_S - alpha_a dL_A``; the minus signs come from
    the reversal layers in front of S and A.
    """
    model.grl_s.alpha = float(alpha_s)
    model.grl_a.alpha = float(alpha_a)
    terms = tuple(k for k in ("P", "S", "A") if k in model.param_sets())
    with training_only(model, ("G",)):
        losses = compute_grads(model, batch, g_terms=terms)
        _step(model, lr)
    return losses
