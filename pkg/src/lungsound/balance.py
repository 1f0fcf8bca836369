"""Class weights and minority oversampling (SMOTE, ADASYN, VAE)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledDataset

METHODS = ("none", "weights", "smote", "adasyn", "vae")

# Recording counts of the full ICBHI corpus and the augmented sizes used with them.
REFERENCE_COUNTS = {
    "ternary": {"chronic": 810, "non-chronic": 75, "healthy": 35},
    "six": {"COPD": 793, "pneumonia": 37, "healthy": 35, "URTI": 23, "bronchiectasis": 16, "bronchiolitis": 13},
}


def class_weights(counts: dict) -> dict:
    """Balanced weights ``N / (K * n_c)``."""
    if not counts:
        raise ValueError("no classes")
    if any(n <= 0 for n in counts.values()):
        empty = [c for c, n in counts.items() if n <= 0]
        raise ValueError(f"empty class(es): {empty}")
    total, k = sum(counts.values()), len(counts)
    return {c: total / (k * n) for c, n in counts.items()}


def uniform_targets(counts: dict, total: int, keep: str) -> dict:
    """Raise every class except ``keep`` to a common size so the sum is ``total``.

    Leftover units go one each to the raised classes with the largest
    original counts (ties by class order).
    """
    raised = [c for c in counts if c != keep]
    remaining = total - counts[keep]
    base, extra = divmod(remaining, len(raised))
    order = sorted(raised, key=lambda c: (-counts[c], raised.index(c)))
    targets = {keep: counts[keep]}
    for rank, c in enumerate(order):
        targets[c] = base + (1 if rank < extra else 0)
    out = {c: targets[c] for c in counts}
    if any(out[c] < counts[c] for c in counts):
        raise ValueError(f"total {total} is too small to oversample every class")
    return out


DEFAULT_TARGETS = {
    "ternary": {"chronic": 810, "non-chronic": 900, "healthy": 840},
    "six": uniform_targets(REFERENCE_COUNTS["six"], 4874, keep="COPD"),
}


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def scale_targets(targets: dict, reference: dict, actual: dict) -> dict:
    """Carry per-class growth factors ``target/reference`` over to other counts.

    Used when balancing one training fold: a class that grows 12x on the
    full corpus grows 12x inside the fold as well.
    """
    out = {}
    for c, n in actual.items():
        if c not in targets or reference.get(c, 0) == 0:
            out[c] = n
        else:
            out[c] = max(n, _round_half_up(n * targets[c] / reference[c]))
    return out


@dataclass
class OversamplePlan:
    method: str = "none"
    targets: dict = field(default_factory=dict)
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class Synthetic:
    """Generated rows plus the (base, neighbor, lambda) trace that produced each."""

    rows: np.ndarray
    base: np.ndarray
    neighbor: np.ndarray
    lam: np.ndarray

    def __len__(self):
        return len(self.rows)


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def nearest_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """(n, k) indices of each point's k nearest others; ties go to the lower index."""
    d = _pairwise_sq_dists(points, points)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _interpolate(minority, base, neighbor, lam) -> np.ndarray:
    x = minority[base].astype(np.float64)
    return x + lam[:, None] * (minority[neighbor].astype(np.float64) - x)


def smote(minority, n_new: int, k: int, rng: np.random.Generator) -> Synthetic:
    """Interpolate between random minority rows and one of their k nearest minority neighbors."""
    minority = np.asarray(minority).reshape(len(minority), -1)
    n = len(minority)
    if n < 2:
        raise ValueError("SMOTE needs at least 2 minority rows")
    if n_new < 0:
        raise ValueError("n_new must be >= 0")
    k = min(k, n - 1)
    nn = nearest_neighbors(minority, k)
    base = rng.integers(0, n, size=n_new)
    pick = rng.integers(0, k, size=n_new)
    lam = rng.random(n_new)
    neighbor = nn[base, pick]
    return Synthetic(_interpolate(minority, base, neighbor, lam), base, neighbor, lam)


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights`` that sums exactly to ``total``."""
    w = np.asarray(weights, dtype=np.float64)
    quota = w / w.sum() * total
    alloc = np.floor(quota).astype(np.int64)
    short = total - int(alloc.sum())
    order = np.argsort(-(quota - alloc), kind="stable")
    alloc[order[:short]] += 1
    return alloc


def adasyn_ratios(X, y, label: int, k: int) -> np.ndarray:
    """Fraction of other-class points among each minority point's k nearest neighbors."""
    X = np.asarray(X).reshape(len(X), -1)
    y = np.asarray(y)
    idx = np.flatnonzero(y == label)
    k = min(k, len(X) - 1)
    d = _pairwise_sq_dists(X[idx], X)
    d[np.arange(len(idx)), idx] = np.inf
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    return (y[nn] != label).sum(axis=1) / k


def adasyn(X, y, label: int, n_new: int, k: int, rng: np.random.Generator) -> Synthetic:
    """SMOTE with more samples drawn around minority points surrounded by other classes.

    ``base`` and ``neighbor`` in the result index into the minority rows
    ``X[y == label]`` in their original order.
    """
    X = np.asarray(X).reshape(len(X), -1)
    y = np.asarray(y)
    minority = X[y == label]
    n = len(minority)
    if n < 2:
        raise ValueError("ADASYN needs at least 2 minority rows")
    if n_new < 0:
        raise ValueError("n_new must be >= 0")
    r = adasyn_ratios(X, y, label, k)
    alloc = largest_remainder(r if r.sum() > 0 else np.ones(n), n_new)
    km = min(k, n - 1)
    nn = nearest_neighbors(minority, km)
    base = np.repeat(np.arange(n), alloc)
    pick = rng.integers(0, km, size=n_new)
    lam = rng.random(n_new)
    neighbor = nn[base, pick]
    return Synthetic(_interpolate(minority, base, neighbor, lam), base, neighbor, lam)


def plan_targets(plan: OversamplePlan, dataset: LabeledDataset) -> dict:
    counts = dataset.counts()
    targets = {c: plan.targets.get(c, n) for c, n in counts.items()}
    low = {c: (targets[c], counts[c]) for c in counts if targets[c] < counts[c]}
    if low:
        raise ValueError(f"plan targets below current counts (target, current): {low}")
    return targets


def apply_plan(dataset: LabeledDataset, plan: OversamplePlan, vae_config=None, log: dict | None = None) -> LabeledDataset:
    """Oversample every class up to its plan target.

    Synthetic rows are appended after the originals, flagged, clipped to
    [0, 1] and given the source ids of the originals they came from.
    ``none`` and ``weights`` return the dataset as is. If ``log`` is given,
    per-class VAE loss histories are stored under ``log["vae_history"]``.
    """
    if plan.method in ("none", "weights"):
        return dataset
    from .rng import Rng

    targets = plan_targets(plan, dataset)
    rng = Rng(plan.seed)
    out = dataset
    flat = dataset.X.reshape(len(dataset), -1)
    for ci, cname in enumerate(dataset.classes):
        n_new = targets[cname] - int((dataset.y == ci).sum())
        if n_new == 0:
            continue
        members = np.flatnonzero(dataset.y == ci)
        sources = [dataset.source_ids[i] for i in members]
        gen = rng.stream(f"{plan.method}-{cname}")
        if plan.method == "smote":
            syn = smote(flat[members], n_new, plan.k, gen)
            rows = syn.rows
            parents = [(sources[b], sources[nb]) for b, nb in zip(syn.base, syn.neighbor)]
        elif plan.method == "adasyn":
            syn = adasyn(flat, dataset.y, ci, n_new, plan.k, gen)
            rows = syn.rows
            parents = [(sources[b], sources[nb]) for b, nb in zip(syn.base, syn.neighbor)]
        else:
            from .vae_augment import VaeTrainConfig, oversample_class

            cfg = vae_config or VaeTrainConfig()
            rows, history = oversample_class(dataset.X[members], n_new, cfg, seed=rng.child("vae", cname).seed)
            if log is not None:
                log.setdefault("vae_history", {})[cname] = history
            parents = [tuple(sources)] * n_new
        rows = np.clip(np.asarray(rows).reshape((n_new,) + dataset.input_shape), 0.0, 1.0)
        ids = [f"syn-{plan.method}-{cname}-{i:05d}" for i in range(n_new)]
        out = out.extend(rows, [ci] * n_new, ids, parents)
    return out
