"""Labelled utterances and train/dev/test containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

SPLITS = ("train", "dev", "test")


@dataclass
class LabeledUtterance:
    utt_id: str
    features: np.ndarray  # (T, F) float64
    senone_labels: np.ndarray  # (T,) int64
    speaker_id: int
    age_group: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.senone_labels = np.asarray(self.senone_labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise DataError(f"{self.utt_id}: features must be 2-D, got {self.features.shape}")
        if self.senone_labels.shape[0] != self.features.shape[0]:
            raise DataError(
                f"{self.utt_id}: {self.senone_labels.shape[0]} senone labels "
                f"for {self.features.shape[0]} frames"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.utt_id}: non-finite feature values")
        self.speaker_id = int(self.speaker_id)
        self.age_group = int(self.age_group)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    train: list[LabeledUtterance] = field(default_factory=list)
    dev: list[LabeledUtterance] = field(default_factory=list)
    test: list[LabeledUtterance] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledUtterance]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def items(self):
        return [(s, self.split(s)) for s in SPLITS]

    @property
    def feature_dim(self) -> int:
        for _, utts in self.items():
            if utts:
                return utts[0].features.shape[1]
        raise DataError("empty corpus")
