"""Three-phase alternating training with a linear reversal-scale ramp.

Each repeat ``r`` runs, for ``m`` epochs each:

1. G and P descend on the senone loss;
2. G frozen, S and A descend on the speaker and age losses;
3. P, S and A frozen, G descends on ``L_P - alpha (L_S + L_A)`` through the
   reversal layers, with ``alpha = r / (N - 1) * alpha_max``.

BASELINE runs phase 1 only. Minibatch order comes from a generator seeded by
``(seed, r, phase, epoch)`` so runs never share RNG state across phases and a
resumed run draws exactly what an uninterrupted one would.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Corpus, LabeledUtterance
from .errors import ConfigError, NumericalError
from .evaluation import frame_error_rate
from .model import (
    AmtlModel,
    Mode,
    backward_and_update_generator,
    backward_and_update_heads,
    backward_and_update_senone,
    forward_losses,
)

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    n_repeats: int = 10
    epochs_per_phase: int = 2
    alpha_max: float = 0.01
    learning_rate: float = 0.001
    lr_decay_repeats: float = 5.0
    batch_size: int = 2
    seed: int = 0
    mode: Mode = Mode.AGE_SPK

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if self.n_repeats < 1:
            raise ConfigError("n_repeats: must be >= 1")
        if self.epochs_per_phase < 1:
            raise ConfigError("epochs_per_phase: must be >= 1")
        if self.alpha_max < 0:
            raise ConfigError("alpha_max: must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate: must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.lr_decay_repeats <= 0:
            raise ConfigError("lr_decay_repeats: must be > 0")

    def lr_at(self, r: int) -> float:
        return self.learning_rate / (1.0 + r / self.lr_decay_repeats)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


def alpha_at(r: int, n_repeats: int, alpha_max: float) -> float:
    """Reversal scale at repeat ``r``: 0 at the first repeat, ``alpha_max`` at the last."""
    if n_repeats < 1 or not 0 <= r <= n_repeats - 1:
        raise ValueError(f"repeat {r} outside [0, {n_repeats - 1}]")
    if n_repeats == 1:
        return float(alpha_max)
    return r / (n_repeats - 1) * alpha_max


@dataclass
class RepeatReport:
    repeat_index: int
    mode: str
    alpha_effective: float
    learning_rate: float
    phase_losses: dict = field(default_factory=dict)
    dev_fer: float = float("nan")
    test_fer: float = float("nan")
    dev_per_age_fer: dict = field(default_factory=dict)
    test_per_age_fer: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)
    is_best_dev: bool = False
    wall_time: float = 0.0

    def metrics(self) -> dict:
        """Deterministic fields only; wall time goes to the sidecar log."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def minibatches(utts: Sequence[LabeledUtterance], batch_size: int, seed: int, r: int, phase: int, epoch: int):
    order = np.random.default_rng([seed, r, phase, epoch]).permutation(len(utts))
    for i in range(0, len(order), batch_size):
        yield [utts[j] for j in order[i : i + batch_size]]


def dataset_losses(model: AmtlModel, utts: Sequence[LabeledUtterance], batch_size: int = 32) -> dict:
    """Per-frame mean of each available loss over ``utts``."""
    tot = {"L_P": 0.0, "L_S": 0.0, "L_A": 0.0}
    n = 0
    for i in range(0, len(utts), batch_size):
        ls = forward_losses(model, utts[i : i + batch_size])
        n += ls.n_frames
        for k, v in (("L_P", ls.p), ("L_S", ls.s), ("L_A", ls.a)):
            if v is not None:
                tot[k] += v
    out = {}
    for k, key in (("L_P", "P"), ("L_S", "S"), ("L_A", "A")):
        if key in model.param_sets():
            out[k] = tot[k] / n
    _check_finite(out, "evaluation")
    return out


def _check_finite(losses, where: str) -> None:
    vals = losses.values() if isinstance(losses, dict) else [losses.p, losses.s, losses.a]
    for v in vals:
        if v is not None and not np.isfinite(v):
            raise NumericalError(f"non-finite loss during {where}: {losses}")


def snap_to_float32(model: AmtlModel) -> None:
    """Round every parameter to float32 precision, the checkpoint storage precision."""
    with np.errstate(over="ignore"):
        for ps in model.param_sets().values():
            for p in ps:
                p.value[...] = p.value.astype(np.float32)


def run_repeat(model: AmtlModel, data: Corpus, schedule: TrainSchedule, r: int) -> RepeatReport:
    if model.mode is not schedule.mode:
        raise ConfigError(f"model mode {model.mode.value} != schedule mode {schedule.mode.value}")
    t0 = time.perf_counter()
    lr = schedule.lr_at(r)
    alpha = alpha_at(r, schedule.n_repeats, schedule.alpha_max) if model.mode.adversarial else 0.0
    train = data.train
    m = schedule.epochs_per_phase
    bs = schedule.batch_size
    phases: dict = {}

    start = dataset_losses(model, train)
    for epoch in range(m):
        for batch in minibatches(train, bs, schedule.seed, r, 1, epoch):
            _check_finite(backward_and_update_senone(model, batch, lr), f"repeat {r} phase 1")
    after1 = dataset_losses(model, train)
    phases["senone"] = {"start": start, "end": after1}
    sums = {"after_senone": model.checksums()}

    if model.mode.adversarial:
        for epoch in range(m):
            for batch in minibatches(train, bs, schedule.seed, r, 2, epoch):
                _check_finite(backward_and_update_heads(model, batch, lr), f"repeat {r} phase 2")
        after2 = dataset_losses(model, train)
        phases["discriminators"] = {"start": after1, "end": after2}
        sums["after_discriminators"] = model.checksums()

        for epoch in range(m):
            for batch in minibatches(train, bs, schedule.seed, r, 3, epoch):
                ls = backward_and_update_generator(model, batch, lr, alpha, alpha)
                _check_finite(ls, f"repeat {r} phase 3")
        phases["adversarial"] = {"start": after2, "end": dataset_losses(model, train)}
        sums["after_adversarial"] = model.checksums()

    snap_to_float32(model)
    sums["end"] = model.checksums()
    dev = frame_error_rate(model, data.dev, "dev")
    test = frame_error_rate(model, data.test, "test")
    return RepeatReport(
        repeat_index=r,
        mode=model.mode.value,
        alpha_effective=alpha,
        learning_rate=lr,
        phase_losses=phases,
        dev_fer=dev.overall_fer,
        test_fer=test.overall_fer,
        dev_per_age_fer={str(k): v for k, v in dev.per_age_fer.items()},
        test_per_age_fer={str(k): v for k, v in test.per_age_fer.items()},
        checksums=sums,
        wall_time=time.perf_counter() - t0,
    )


def run_training(
    model: AmtlModel,
    data: Corpus,
    schedule: TrainSchedule,
    checkpoint_dir: Optional[Path] = None,
    start_repeat: int = 0,
    best_dev_fer: float = float("inf"),
    on_report: Optional[Callable[[RepeatReport, AmtlModel], None]] = None,
) -> list[RepeatReport]:
    """Run repeats ``start_repeat .. N-1``; checkpoint after each one.

    The latest state is written as ``checkpoint`` and the best-dev state as
    ``best`` inside ``checkpoint_dir``. A non-finite loss aborts with
    :class:`NumericalError`, leaving the last good checkpoint on disk.
    """
    from .io import save_checkpoint

    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    reports = []
    for r in range(start_repeat, schedule.n_repeats):
        rep = run_repeat(model, data, schedule, r)
        if rep.dev_fer < best_dev_fer:
            best_dev_fer = rep.dev_fer
            rep.is_best_dev = True
        if checkpoint_dir is not None:
            state = {"repeat": r, "epoch": schedule.epochs_per_phase, "best_dev_fer": best_dev_fer}
            save_checkpoint(Path(checkpoint_dir) / "checkpoint", model, state, schedule)
            if rep.is_best_dev:
                save_checkpoint(Path(checkpoint_dir) / "best", model, state, schedule)
        log.info(
            "%s repeat %d alpha=%.4g dev FER %.4f test FER %.4f (%.1fs)",
            rep.mode, r, rep.alpha_effective, rep.dev_fer, rep.test_fer, rep.wall_time,
        )
        if on_report is not None:
            on_report(rep, model)
        reports.append(rep)
    return reports
