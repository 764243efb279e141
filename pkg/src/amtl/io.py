"""On-disk formats: feature archives, checkpoints and metrics.

Archives and checkpoints are a JSON manifest next to a binary payload of
little-endian float32 values, row-major, concatenated in manifest order. The
manifest records each block's byte offset and length.
"""

from __future__ import annotations

import csv
import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import SPLITS, Corpus, LabeledUtterance
from .errors import ConfigError, DataError
from .model import AmtlModel, ModelConfig

PAYLOAD_DTYPE = np.dtype("<f4")
ARCHIVE_FORMAT = "amtl-feature-archive"
CHECKPOINT_FORMAT = "amtl-checkpoint"
FORMAT_VERSION = 1


def dump_json(obj, path: Path, indent=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=indent)
    Path(path).write_text(text + "\n")


def _paths(prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".json"), prefix.with_name(prefix.name + ".bin")


def _write_blocks(bin_path: Path, arrays: Iterable[np.ndarray]) -> list[tuple[int, int]]:
    spans = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for a in arrays:
            buf = np.ascontiguousarray(a, dtype=PAYLOAD_DTYPE).tobytes()
            fh.write(buf)
            spans.append((offset, len(buf)))
            offset += len(buf)
    return spans


def _read_block(payload: bytes, offset: int, nbytes: int, shape, what: str) -> np.ndarray:
    rows, cols = shape
    if nbytes != rows * cols * PAYLOAD_DTYPE.itemsize:
        raise DataError(f"{what}: manifest shape {shape} does not match {nbytes} payload bytes")
    if offset < 0 or offset + nbytes > len(payload):
        raise DataError(f"{what}: block [{offset}, {offset + nbytes}) outside payload of {len(payload)} bytes")
    a = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=rows * cols, offset=offset)
    return a.reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------- features


def write_archive(prefix, utts: Sequence[LabeledUtterance], split: str) -> Path:
    """Write ``<prefix>.json`` and ``<prefix>.bin``; returns the manifest path."""
    man_path, bin_path = _paths(prefix)
    spans = _write_blocks(bin_path, (u.features for u in utts))
    entries = []
    for u, (off, n) in zip(utts, spans):
        entries.append(
            {
                "utt_id": u.utt_id,
                "split": split,
                "rows": int(u.features.shape[0]),
                "cols": int(u.features.shape[1]),
                "offset": off,
                "nbytes": n,
                "speaker_id": u.speaker_id,
                "age_group": u.age_group,
                "senone_labels": u.senone_labels.tolist(),
            }
        )
    dims = {e["cols"] for e in entries}
    manifest = {
        "format": ARCHIVE_FORMAT,
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "payload": bin_path.name,
        "feature_dim": dims.pop() if len(dims) == 1 else None,
        "utterances": entries,
    }
    dump_json(manifest, man_path)
    return man_path


def read_archive(prefix) -> list[LabeledUtterance]:
    man_path, _ = _paths(prefix)
    try:
        manifest = json.loads(man_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read archive manifest {man_path}: {e}")
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise DataError(f"{man_path}: not a feature archive")
    payload = (man_path.parent / manifest["payload"]).read_bytes()
    utts = []
    for e in manifest["utterances"]:
        x = _read_block(payload, e["offset"], e["nbytes"], (e["rows"], e["cols"]), e["utt_id"])
        utts.append(LabeledUtterance(e["utt_id"], x, e["senone_labels"], e["speaker_id"], e["age_group"]))
    return utts


def write_corpus(out_dir, corpus: Corpus) -> dict[str, Path]:
    out_dir = Path(out_dir)
    return {name: write_archive(out_dir / name, utts, name) for name, utts in corpus.items()}


def read_corpus(archive_dir) -> Corpus:
    d = Path(archive_dir)
    corpus = Corpus()
    for name in SPLITS:
        if not (d / f"{name}.json").exists():
            raise DataError(f"missing {name} archive in {d}")
        corpus.split(name).extend(read_archive(d / name))
    return corpus


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(prefix, model: AmtlModel, state: dict, schedule=None) -> Path:
    """Parameters are stored as float32; training position and reversal scales go
    in the manifest."""
    man_path, bin_path = _paths(prefix)
    params = [(group, p) for group, ps in model.param_sets().items() for p in ps]
    tmp_bin = bin_path.with_name(bin_path.name + ".tmp")
    spans = _write_blocks(tmp_bin, (p.value for _, p in params))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "payload": bin_path.name,
        "model_config": model.config.to_dict(),
        "mode": model.mode.value,
        "alpha": {"S": model.grl_s.alpha, "A": model.grl_a.alpha},
        "state": state,
        "schedule": None if schedule is None else schedule.to_dict(),
        "params": [
            {"name": p.name, "group": g, "shape": list(p.shape), "offset": off, "nbytes": n}
            for (g, p), (off, n) in zip(params, spans)
        ],
    }
    tmp_man = man_path.with_name(man_path.name + ".tmp")
    dump_json(manifest, tmp_man, indent=1)
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_man, man_path)
    return man_path


def load_checkpoint(prefix) -> tuple[AmtlModel, dict]:
    man_path, _ = _paths(prefix)
    try:
        manifest = json.loads(man_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint {man_path}: {e}")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{man_path}: not a checkpoint")
    model = AmtlModel(ModelConfig(**manifest["model_config"]))
    payload = (man_path.parent / manifest["payload"]).read_bytes()
    sets = model.param_sets()
    seen = set()
    for e in manifest["params"]:
        ps = sets.get(e["group"])
        if ps is None or e["name"] not in ps:
            raise DataError(f"{man_path}: unexpected parameter {e['name']}")
        p = ps[e["name"]]
        if tuple(e["shape"]) != p.shape:
            raise DataError(f"{man_path}: {e['name']} has shape {e['shape']}, model expects {p.shape}")
        p.value[...] = _read_block(payload, e["offset"], e["nbytes"], e["shape"], e["name"])
        seen.add(e["name"])
    missing = [p.name for p in model.all_params() if p.name not in seen]
    if missing:
        raise DataError(f"{man_path}: missing parameters {missing}")
    model.grl_s.alpha = manifest["alpha"]["S"]
    model.grl_a.alpha = manifest["alpha"]["A"]
    return model, manifest


# ---------------------------------------------------------------- metrics


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path, rows: list[dict], fields: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


@contextmanager
def directory_lock(out_dir):
    """Exclusive ownership of ``out_dir`` for one process."""
    lock = Path(out_dir) / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out_dir} is locked by another process (remove {lock} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)
