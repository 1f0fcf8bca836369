"""Synthetic spectrogram-like corpora for smoke tests and demos."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import LabeledDataset
from .ingest import MANIFEST_HEADER
from .melspec import MelSpectrogram, minmax_normalize, write_spec


def toy_spectrograms(counts, rows: int = 32, cols: int = 64, seed: int = 0, classes=None) -> LabeledDataset:
    """Normalized (rows x cols) images where class c carries a bright horizontal band.

    Band c sits at a class-specific height and pulses at a class-specific
    rate; background is log-normal-ish noise, so classes are separable but
    not trivially identical within a class.
    """
    rng = np.random.default_rng(seed)
    k = len(counts)
    classes = tuple(classes or (f"class{i}" for i in range(k)))
    band = rows // (k + 1)
    t = np.arange(cols)
    X, y, ids = [], [], []
    for c, n in enumerate(counts):
        lo = band * c + band // 2
        for i in range(n):
            img = rng.normal(-60.0, 4.0, size=(rows, cols))
            pulse = 0.5 + 0.5 * np.sin(2 * np.pi * (c + 1) * t / cols + rng.uniform(0, 2 * np.pi))
            img[lo : lo + band] += 25.0 * pulse + rng.normal(0, 2.0, size=(band, cols))
            X.append(minmax_normalize(MelSpectrogram(img)).values)
            y.append(c)
            ids.append(f"toy-{c}-{i:03d}")
    return LabeledDataset(np.stack(X), y, classes, ids, patient_ids=np.arange(len(y)), scheme="toy")


def write_featurized(dataset: LabeledDataset, out_dir, scheme: str) -> Path:
    """Write ``dataset`` in the layout ``featurize`` produces (manifest + specs/)."""
    out = Path(out_dir)
    (out / "specs").mkdir(parents=True, exist_ok=True)
    lines = [",".join(MANIFEST_HEADER)]
    for i, sid in enumerate(dataset.source_ids):
        write_spec(MelSpectrogram(dataset.X[i], normalized=True), out / "specs" / f"{sid}.mspc")
        lines.append(f"{sid},{int(dataset.patient_ids[i])},{dataset.classes[dataset.y[i]]},{scheme}")
    (out / "manifest.csv").write_text("\n".join(lines) + "\n")
    return out
