"""In-memory labeled spectrogram sets."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import get_scheme, read_manifest
from .melspec import read_spec


@dataclass
class LabeledDataset:
    """Spectrograms ``X`` (n, rows, cols) with integer labels ``y``.

    ``parents[i]`` lists the source ids a synthetic sample was derived from
    (empty for originals); ``patient_ids`` is -1 for synthetic samples.
    """

    X: np.ndarray
    y: np.ndarray
    classes: tuple[str, ...]
    source_ids: list[str]
    synthetic: np.ndarray = None
    parents: list[tuple[str, ...]] = None
    patient_ids: np.ndarray = None
    scheme: str = ""

    def __post_init__(self):
        n = len(self.y)
        self.X = np.asarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != n or len(self.source_ids) != n:
            raise ValueError("X, y and source_ids must have the same length")
        if n and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise ValueError("label out of range for the class list")
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        if self.parents is None:
            self.parents = [()] * n
        if self.patient_ids is None:
            self.patient_ids = np.full(n, -1, dtype=np.int64)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        self.patient_ids = np.asarray(self.patient_ids, dtype=np.int64)
        self.parents = [tuple(p) for p in self.parents]
        self.source_ids = list(self.source_ids)

    def __len__(self):
        return len(self.y)

    @property
    def input_shape(self) -> tuple[int, int]:
        return self.X.shape[1:]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def counts(self) -> dict[str, int]:
        c = Counter(self.y.tolist())
        return {name: c.get(i, 0) for i, name in enumerate(self.classes)}

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.X[idx],
            self.y[idx],
            self.classes,
            [self.source_ids[i] for i in idx],
            self.synthetic[idx],
            [self.parents[i] for i in idx],
            self.patient_ids[idx],
            self.scheme,
        )

    def extend(self, X, y, source_ids, parents) -> "LabeledDataset":
        """Append synthetic samples; originals are kept untouched and first."""
        X = np.asarray(X, dtype=np.float32).reshape((-1,) + self.input_shape)
        n = X.shape[0]
        return LabeledDataset(
            np.concatenate([self.X, X]),
            np.concatenate([self.y, np.asarray(y, dtype=np.int64).reshape(n)]),
            self.classes,
            self.source_ids + list(source_ids),
            np.concatenate([self.synthetic, np.ones(n, dtype=bool)]),
            self.parents + [tuple(p) for p in parents],
            np.concatenate([self.patient_ids, np.full(n, -1, dtype=np.int64)]),
            self.scheme,
        )


def load_featurized(data_dir) -> LabeledDataset:
    """Load ``manifest.csv`` plus ``specs/<source_id>.mspc`` written by featurize."""
    data_dir = Path(data_dir)
    rows = read_manifest(data_dir / "manifest.csv")
    if not rows:
        raise ValueError(f"{data_dir}: manifest is empty")
    schemes = {r["scheme"] for r in rows}
    if len(schemes) != 1:
        raise ValueError(f"{data_dir}: manifest mixes schemes {sorted(schemes)}")
    scheme = get_scheme(schemes.pop())
    X = np.stack([read_spec(data_dir / "specs" / f"{r['source_id']}.mspc").values for r in rows])
    y = [scheme.index(r["label"]) for r in rows]
    return LabeledDataset(
        X,
        y,
        scheme.classes,
        [r["source_id"] for r in rows],
        patient_ids=[r["patient_id"] for r in rows],
        scheme=scheme.name,
    )
