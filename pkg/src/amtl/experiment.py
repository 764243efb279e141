"""Paired-run experiments on the default synthetic corpus.

The mode comparison trains BASELINE and adversarial modes from the same
initialisation and probes each generator for residual speaker and age
information; the alpha sweep trains AGE_SPK at several ``alpha_max`` values.
Both are used by the scripts in ``scripts/`` and by the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .corpus import CorpusSpec, generate_corpus
from .data import Corpus
from .errors import NumericalError
from .evaluation import ProbeConfig, ProbeReport, train_probe
from .model import AmtlModel, Mode, ModelConfig
from .trainer import RepeatReport, TrainSchedule, run_training


@dataclass
class RunResult:
    mode: str
    alpha_max: float
    reports: list[RepeatReport]
    probes: dict[str, ProbeReport] = field(default_factory=dict)
    train_seconds: float = 0.0
    diverged: Optional[str] = None  # the abort message when training hit a non-finite loss

    @property
    def final_dev_fer(self) -> float:
        """Dev FER of the last completed repeat (the last good checkpoint if training diverged)."""
        return self.reports[-1].dev_fer

    def margin_drop(self, baseline: "RunResult", target: str) -> float:
        """Fraction of the baseline's above-chance probe margin removed by this run."""
        b = baseline.probes[target]
        margin = b.probe_accuracy - b.chance_level
        return (b.probe_accuracy - self.probes[target].probe_accuracy) / margin


def model_for(corpus: Corpus, mode, seed: int = 0, **overrides) -> AmtlModel:
    n_speakers = 1 + max(u.speaker_id for u in corpus.train)
    cfg = ModelConfig(input_dim=corpus.feature_dim, n_speakers=n_speakers, mode=mode, seed=seed, **overrides)
    return AmtlModel(cfg)


def run_mode(
    corpus: Corpus,
    mode,
    schedule: Optional[TrainSchedule] = None,
    alpha_max: Optional[float] = None,
    probe: Optional[ProbeConfig] = ProbeConfig(),
    reference: Optional["RunResult"] = None,
    allow_divergence: bool = False,
) -> RunResult:
    """Train one mode and probe its generator.

    With ``allow_divergence`` a non-finite loss ends training early instead of
    raising; the result keeps the completed repeats and records the message.
    Probes are skipped for a diverged run.
    """
    mode = Mode.parse(mode)
    schedule = replace(schedule or TrainSchedule(), mode=mode)
    if alpha_max is not None:
        schedule = replace(schedule, alpha_max=alpha_max)
    model = model_for(corpus, mode, seed=schedule.seed)
    t0 = time.perf_counter()
    reports: list[RepeatReport] = []
    diverged = None
    try:
        run_training(model, corpus, schedule, on_report=lambda rep, _m: reports.append(rep))
    except NumericalError as e:
        if not allow_divergence:
            raise
        diverged = str(e)
    result = RunResult(mode.value, schedule.alpha_max, reports, train_seconds=time.perf_counter() - t0,
                       diverged=diverged)
    if probe is not None and diverged is None:
        utts = corpus.dev + corpus.test
        for target in ("speaker", "age"):
            ref = None if reference is None else reference.probes[target].probe_accuracy
            result.probes[target] = train_probe(model, utts, target, probe, reference_accuracy=ref)
    return result


def compare(corpus: Optional[Corpus] = None, modes: Iterable = ("BASELINE", "AGE_SPK"),
            schedule: Optional[TrainSchedule] = None) -> dict[str, RunResult]:
    corpus = corpus or generate_corpus(CorpusSpec())
    results: dict[str, RunResult] = {}
    for mode in modes:
        results[Mode.parse(mode).value] = run_mode(corpus, mode, schedule, reference=results.get("BASELINE"))
    return results


def alpha_sweep(corpus: Optional[Corpus] = None, alphas=(0.1, 0.01, 0.001),
                schedule: Optional[TrainSchedule] = None, probe: Optional[ProbeConfig] = None) -> dict[float, RunResult]:
    corpus = corpus or generate_corpus(CorpusSpec())
    return {a: run_mode(corpus, Mode.AGE_SPK, schedule, alpha_max=a, probe=probe, allow_divergence=True)
            for a in alphas}


def describe(results: dict) -> str:
    lines = []
    base = results.get("BASELINE")
    for key, r in results.items():
        curve = " ".join(f"{100 * rep.dev_fer:5.1f}" for rep in r.reports)
        lines.append(f"{str(key):<10} alpha_max={r.alpha_max:<6g} dev FER % by repeat: {curve}  ({r.train_seconds:.0f}s)")
        if r.diverged:
            lines.append(f"{'':<10} diverged: {r.diverged}")
        for t, p in r.probes.items():
            extra = ""
            if base is not None and r is not base and base.probes:
                extra = f"  margin removed {100 * r.margin_drop(base, t):5.1f}%"
            lines.append(f"{'':<10} {t:<7} probe {p.probe_accuracy:.3f} (chance {p.chance_level:.3f}){extra}")
    return "\n".join(lines)
