"""Command-line entry point: ``amtl synth | mfcc | train | report``.

Configuration is JSON with optional sections ``corpus``, ``model``,
``schedule``, ``probe``, ``mfcc`` and a ``data`` path; unknown keys are
rejected. Every command writes its fully resolved configuration next to its
outputs, so feeding that file back through ``--config`` repeats the run.
Wall-clock timings go to a ``timing.log`` sidecar; every other output is a
deterministic function of config and seed.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import CorpusSpec, corpus_stats, generate_corpus
from .data import SPLITS, Corpus, LabeledUtterance
from .errors import AmtlError, ConfigError, DataError, NumericalError
from .evaluation import ProbeConfig, compare_modes, format_mode_table, train_probe
from .frontend import MfccConfig, mfcc, read_wav
from .io import (
    directory_lock,
    dump_json,
    load_checkpoint,
    read_corpus,
    read_jsonl,
    write_corpus,
    write_csv,
)
from .model import ALL_MODES, AmtlModel, Mode, ModelConfig
from .trainer import TrainSchedule, run_training

log = logging.getLogger("amtl")

SECTIONS = {
    "corpus": CorpusSpec,
    "model": ModelConfig,
    "schedule": TrainSchedule,
    "probe": ProbeConfig,
    "mfcc": MfccConfig,
}
SWEEP_ALPHAS = (0.1, 0.01, 0.001)
METRIC_FIELDS = [
    "repeat_index", "mode", "alpha_effective", "learning_rate", "dev_fer", "test_fer",
    "L_P_end", "L_S_end", "L_A_end", "is_best_dev",
]


# ---------------------------------------------------------------- config


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    unknown = sorted(set(raw) - set(SECTIONS) - {"data"})
    if unknown:
        raise ConfigError(f"config: unknown section(s) {unknown}; expected {sorted(SECTIONS) + ['data']}")
    return raw


def build(section: str, cfg: dict, **overrides):
    """Instantiate the dataclass for ``section`` from config values plus overrides."""
    cls = SECTIONS[section]
    values = dict(cfg.get(section, {}))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"config: unknown key(s) in {section}: {unknown}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        obj = cls(**values)
    except TypeError as e:
        raise ConfigError(f"config {section}: {e}")
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


def as_dict(obj) -> dict:
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return dataclasses.asdict(obj)


def prepare_out(out: Path, force: bool, resume: bool = False) -> None:
    if out.exists() and any(p.name != ".lock" for p in out.iterdir()) and not (force or resume):
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def sidecar(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "timing.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(message)s"))
    logging.getLogger("amtl").addHandler(handler)
    return handler


# ---------------------------------------------------------------- synth


def cmd_synth(args, cfg: dict) -> int:
    spec = build("corpus", cfg, seed=args.seed)
    out = Path(args.out)
    prepare_out(out, args.force)
    with directory_lock(out):
        corpus = generate_corpus(spec)
        write_corpus(out, corpus)
        stats = corpus_stats(corpus)
        stats["speakers_per_split"] = dict(zip(SPLITS, spec.split_sizes()))
        dump_json(stats, out / "stats.json", indent=2)
        dump_json({"corpus": spec.to_dict()}, out / "config.json", indent=2)
    sizes = " / ".join(f"{n} {s}" for s, n in zip(SPLITS, spec.split_sizes()))
    print(f"wrote {out}: {sizes} speakers, {stats['total_frames']} frames")
    return 0


# ---------------------------------------------------------------- mfcc


def _parse_senones(value, utt_id: str) -> np.ndarray:
    if isinstance(value, str):
        value = value.split()
    try:
        return np.array([int(v) for v in value], dtype=np.int64)
    except (TypeError, ValueError):
        raise DataError(f"{utt_id}: senone labels must be integers")


def cmd_mfcc(args, cfg: dict) -> int:
    """Extract MFCCs for every WAV named in the label file.

    The label file is JSON mapping utterance id to ``{"split", "speaker",
    "age", "senones"}``, where ``senones`` is a list or space-separated string
    with one label per output frame. Each utterance is read from
    ``<wav_dir>/<utt_id>.wav``. Bad files are reported and skipped; the exit
    code is then 2.
    """
    mcfg = build("mfcc", cfg)
    try:
        labels = json.loads(Path(args.labels).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read label file {args.labels}: {e}")
    out = Path(args.out)
    prepare_out(out, args.force)
    failures = 0
    with directory_lock(out):
        corpus = Corpus()
        for utt_id in sorted(labels):
            entry = labels[utt_id]
            try:
                split = entry.get("split", "train")
                if split not in SPLITS:
                    raise DataError(f"{utt_id}: unknown split {split!r}")
                feats = mfcc(read_wav(Path(args.wav_dir) / f"{utt_id}.wav"), mcfg)
                feats = feats.astype(np.float32).astype(np.float64)
                sen = _parse_senones(entry["senones"], utt_id)
                if sen.shape[0] != feats.shape[0]:
                    raise DataError(f"{utt_id}: {sen.shape[0]} senone labels for {feats.shape[0]} frames")
                corpus.split(split).append(
                    LabeledUtterance(utt_id, feats, sen, int(entry["speaker"]), int(entry["age"]))
                )
            except (DataError, KeyError, TypeError) as e:
                failures += 1
                msg = e if isinstance(e, DataError) else f"{utt_id}: bad label entry ({e})"
                print(f"error: {msg}", file=sys.stderr)
        write_corpus(out, corpus)
        dump_json({"mfcc": as_dict(mcfg)}, out / "config.json", indent=2)
    n = sum(len(u) for _, u in corpus.items())
    print(f"wrote {out}: {n} utterances, {failures} failed")
    return 2 if failures else 0


# ---------------------------------------------------------------- train


@dataclasses.dataclass
class RunPlan:
    name: str
    model: ModelConfig
    schedule: TrainSchedule

    def resolved(self, data: str, probe: ProbeConfig) -> dict:
        return {"data": data, "model": self.model.to_dict(), "schedule": self.schedule.to_dict(),
                "probe": as_dict(probe)}


def plan_runs(args, cfg: dict, corpus: Corpus) -> list[RunPlan]:
    if args.alpha_sweep:
        modes = [Mode.AGE_SPK]
    elif args.mode:
        modes = list(ALL_MODES) if args.mode.lower() == "all" else [Mode.parse(m) for m in args.mode.split(",")]
    else:
        modes = [Mode.parse(cfg.get("schedule", {}).get("mode", Mode.AGE_SPK))]
    alphas = [float(a) for a in args.alpha_sweep.split(",")] if args.alpha_sweep else [None]

    n_speakers = 1 + max(u.speaker_id for u in corpus.train)
    n_ages = 1 + max(u.age_group for _, utts in corpus.items() for u in utts)
    n_senones = 1 + max(int(u.senone_labels.max()) for u in corpus.train if u.senone_labels.size)
    dims = {u.features.shape[1] for _, utts in corpus.items() for u in utts}
    if len(dims) != 1:
        raise DataError(f"archives mix feature dimensions {sorted(dims)}")
    dim = dims.pop()

    plans = []
    for mode in modes:
        for alpha in alphas:
            model = build("model", cfg, mode=mode, seed=args.seed)
            if model.input_dim != dim:
                raise ConfigError(f"model.input_dim {model.input_dim} does not match archive feature dimension {dim}")
            for name, need in (("n_speakers", n_speakers), ("n_age_groups", n_ages), ("n_senones", n_senones)):
                if getattr(model, name) < need:
                    raise ConfigError(f"model.{name} = {getattr(model, name)} but training data needs {need}")
            sched = build("schedule", cfg, mode=mode, seed=args.seed, alpha_max=alpha)
            name = mode.value if alpha is None else f"{mode.value}_alpha{alpha:g}"
            plans.append(RunPlan(name, model, sched))
    return plans


def _metric_row(rec: dict) -> dict:
    row = {k: rec.get(k) for k in METRIC_FIELDS}
    last = list(rec["phase_losses"].values())[-1]["end"]
    for k in ("L_P", "L_S", "L_A"):
        row[f"{k}_end"] = last.get(k)
    return row


def _run_probes(model: AmtlModel, corpus: Corpus, probe: ProbeConfig, reference: Optional[dict]) -> dict:
    utts = corpus.dev + corpus.test
    out = {}
    for target in ("speaker", "age"):
        ref = None if reference is None else reference[target]["probe_accuracy"]
        out[target] = train_probe(model, utts, target, probe, reference_accuracy=ref).to_dict()
    return out


def train_one(plan: RunPlan, corpus: Corpus, run_dir: Path, resolved: dict, probe: ProbeConfig,
              resume: bool, reference: Optional[dict]) -> dict:
    metrics_path = run_dir / "metrics.jsonl"
    start, best = 0, float("inf")
    model = AmtlModel(plan.model)
    if resume and (run_dir / "checkpoint.json").exists():
        saved = json.loads((run_dir / "config.json").read_text())
        diff = sorted(k for k in set(saved) | set(resolved) if saved.get(k) != resolved.get(k))
        if diff:
            raise ConfigError(f"{run_dir}: cannot resume, config differs in {diff}")
        model, man = load_checkpoint(run_dir / "checkpoint")
        start = man["state"]["repeat"] + 1
        best = man["state"]["best_dev_fer"]
        kept = [r for r in read_jsonl(metrics_path) if r["repeat_index"] < start] if metrics_path.exists() else []
        if [r["repeat_index"] for r in kept] != list(range(start)):
            raise DataError(f"{metrics_path}: metrics do not cover repeats 0..{start - 1}; cannot resume")
        metrics_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))
        log.info("%s: resuming at repeat %d", plan.name, start)
    else:
        if run_dir.exists():
            shutil.rmtree(run_dir)
        run_dir.mkdir(parents=True)
        metrics_path.write_text("")
    dump_json(resolved, run_dir / "config.json", indent=2)

    def on_report(rep, _model):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(rep.metrics(), sort_keys=True) + "\n")
        log.info("%s repeat %d wall %.2fs", plan.name, rep.repeat_index, rep.wall_time)
        print(f"{plan.name} repeat {rep.repeat_index}: alpha={rep.alpha_effective:.4g} "
              f"dev FER {100 * rep.dev_fer:.2f}% test FER {100 * rep.test_fer:.2f}%", flush=True)

    t0 = time.perf_counter()
    run_training(model, corpus, plan.schedule, checkpoint_dir=run_dir, start_repeat=start,
                 best_dev_fer=best, on_report=on_report)
    records = read_jsonl(metrics_path)
    write_csv(run_dir / "metrics.csv", [_metric_row(r) for r in records], METRIC_FIELDS)
    probes = _run_probes(model, corpus, probe, reference)
    dump_json(probes, run_dir / "probes.json", indent=2)
    log.info("%s finished in %.1fs", plan.name, time.perf_counter() - t0)
    return probes


def cmd_train(args, cfg: dict) -> int:
    data = args.data or cfg.get("data")
    if not data:
        raise ConfigError("train: no data directory (pass --data or set 'data' in the config)")
    probe = build("probe", cfg, seed=args.seed)
    out = Path(args.out)
    prepare_out(out, args.force, args.resume)
    corpus = read_corpus(data)
    plans = plan_runs(args, cfg, corpus)
    with directory_lock(out):
        handler = sidecar(out)
        failed = []
        try:
            reference = None
            for plan in plans:
                resolved = plan.resolved(str(data), probe)
                try:
                    probes = train_one(plan, corpus, out / plan.name, resolved, probe, args.resume, reference)
                except NumericalError as e:
                    # keep going: the other runs of a sweep are still meaningful
                    print(f"error: {plan.name}: {e} (last good checkpoint kept)", file=sys.stderr)
                    failed.append(plan.name)
                    continue
                if plan.model.mode is Mode.BASELINE:
                    reference = probes
        finally:
            logging.getLogger("amtl").removeHandler(handler)
            handler.close()
    print(f"trained {len(plans) - len(failed)} of {len(plans)} run(s) into {out}")
    return NumericalError.exit_code if failed else 0


# ---------------------------------------------------------------- report


def _load_run(d: Path) -> dict:
    try:
        cfg = json.loads((d / "config.json").read_text())
        metrics = read_jsonl(d / "metrics.jsonl")
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{d}: not a completed run ({e})")
    if not metrics:
        raise DataError(f"{d}: no metrics recorded")
    probes = json.loads((d / "probes.json").read_text()) if (d / "probes.json").exists() else {}
    return {"dir": d, "name": d.name, "config": cfg, "metrics": metrics, "probes": probes}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def check_compatible(runs: list[dict]) -> None:
    """Runs may differ only in mode and alpha_max."""
    allowed = {"model.mode", "schedule.mode", "schedule.alpha_max"}
    flat = [_flatten(r["config"]) for r in runs]
    keys = set().union(*flat)
    differing = sorted(k for k in keys - allowed if len({json.dumps(f.get(k)) for f in flat}) > 1)
    if differing:
        raise ConfigError(f"runs have incompatible configs; differing keys: {differing}")


def build_report(runs: list[dict]) -> tuple[str, list[dict]]:
    lines, rows = [], []
    lines.append("Dev FER per repeat (%)")
    n = max(len(r["metrics"]) for r in runs)
    lines.append(f"{'run':<22}" + "".join(f"{i:>7}" for i in range(n)))
    for r in runs:
        lines.append(f"{r['name']:<22}" + "".join(f"{100 * m['dev_fer']:>7.2f}" for m in r["metrics"]))
        for m in r["metrics"]:
            for split in ("dev", "test"):
                rows.append({"run": r["name"], "mode": m["mode"], "alpha_max": r["config"]["schedule"]["alpha_max"],
                             "repeat": m["repeat_index"], "split": split, "fer": m[f"{split}_fer"],
                             "relative_reduction": ""})

    modes = [r["metrics"][-1]["mode"] for r in runs]
    if len(runs) > 1 and len(set(modes)) == len(modes) and Mode.BASELINE.value in modes:
        fers = {r["metrics"][-1]["mode"]: {s: r["metrics"][-1][f"{s}_fer"] for s in ("test", "dev")} for r in runs}
        table = compare_modes(fers)
        lines += ["", "Final-repeat FER by mode", format_mode_table(table)]
        for row in table:
            rows.append({"run": row.mode, "mode": row.mode, "alpha_max": "", "repeat": "final", "split": row.split,
                         "fer": row.fer, "relative_reduction": "" if row.relative_reduction is None else row.relative_reduction})

        lines += ["", "Final-repeat dev FER by age group (%)"]
        ages = sorted(runs[0]["metrics"][-1]["dev_per_age_fer"], key=int)
        lines.append(f"{'mode':<10}" + "".join(f"{'age ' + a:>9}" for a in ages))
        for r in runs:
            per = r["metrics"][-1]["dev_per_age_fer"]
            lines.append(f"{r['metrics'][-1]['mode']:<10}" + "".join(f"{100 * per[a]:>9.2f}" for a in ages))

    probed = [r for r in runs if r["probes"]]
    if probed:
        lines += ["", "Invariance probes (accuracy / chance / invariance score)"]
        for r in probed:
            cells = []
            for t in ("speaker", "age"):
                p = r["probes"][t]
                inv = "-" if p["invariance_score"] is None else f"{p['invariance_score']:.3f}"
                cells.append(f"{t} {p['probe_accuracy']:.3f} / {p['chance_level']:.3f} / {inv}")
            lines.append(f"{r['name']:<22}" + "   ".join(cells))
    return "\n".join(lines), rows


def cmd_report(args, cfg: dict) -> int:
    runs = []
    for d in args.runs:
        d = Path(d)
        subdirs = sorted(p for p in d.iterdir() if (p / "metrics.jsonl").exists()) if d.is_dir() else []
        if not (d / "metrics.jsonl").exists() and subdirs:
            runs.extend(_load_run(p) for p in subdirs)
        else:
            runs.append(_load_run(d))
    check_compatible(runs)
    text, rows = build_report(runs)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n")
        write_csv(out / "report.csv", rows, ["run", "mode", "alpha_max", "repeat", "split", "fer", "relative_reduction"])
    return 0


# ---------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amtl", description="Adversarial multi-task acoustic model experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    s = sub.add_parser("synth", help="generate a synthetic corpus as feature archives")
    common(s)

    m = sub.add_parser("mfcc", help="extract MFCC feature archives from WAV files")
    common(m)
    m.add_argument("--wav-dir", required=True)
    m.add_argument("--labels", required=True, help="JSON label file (utt_id -> split/speaker/age/senones)")

    t = sub.add_parser("train", help="train one or more modes")
    common(t)
    t.add_argument("--data", help="directory holding train/dev/test archives")
    t.add_argument("--mode", help="BASELINE, AGE, SPK, AGE_SPK, a comma list, or 'all'")
    t.add_argument("--alpha-sweep", nargs="?", const=",".join(str(a) for a in SWEEP_ALPHAS),
                   help="AGE_SPK runs over alpha_max values (default 0.1,0.01,0.001)")
    t.add_argument("--resume", action="store_true", help="continue runs from their last checkpoint")

    r = sub.add_parser("report", help="tabulate completed runs")
    r.add_argument("runs", nargs="+", help="run directories (or a train --out directory)")
    r.add_argument("--out", help="write report.txt and report.csv here")
    r.add_argument("--config", help=argparse.SUPPRESS)
    return p


COMMANDS = {"synth": cmd_synth, "mfcc": cmd_mfcc, "train": cmd_train, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    root = logging.getLogger("amtl")
    root.setLevel(logging.INFO)
    root.propagate = False
    if not any(getattr(h, "_amtl_console", False) for h in root.handlers):
        console = logging.StreamHandler(sys.stderr)
        console._amtl_console = True
        console.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(console)
    for h in root.handlers:
        if getattr(h, "_amtl_console", False):
            h.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except AmtlError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
