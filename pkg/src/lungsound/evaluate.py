"""Metrics, cross-validation folds and the five-configuration experiment runner."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .balance import DEFAULT_TARGETS, REFERENCE_COUNTS, OversamplePlan, apply_plan, class_weights, scale_targets
from .cnn_classifier import TrainConfig, build_cnn, predict_proba, train
from .dataset import LabeledDataset
from .rng import Rng, derive_seed
from .vae_augment import VaeTrainConfig

METRICS = ("sensitivity", "specificity", "score", "precision", "recall", "fscore")
CONFIGURATIONS = {"unbalanced": "none", "weighted": "weights", "vae": "vae", "smote": "smote", "adasyn": "adasyn"}
CONFIGURATION_FOR_METHOD = {m: c for c, m in CONFIGURATIONS.items()}
PROTOCOLS = ("default", "paper")
STD_KIND = "sample (n-1)"


def confusion(predictions, truths, k: int) -> np.ndarray:
    """k x k counts, rows = true class, columns = predicted class."""
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError("predictions and truths differ in length")
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= k):
        raise ValueError(f"label out of range for k={k}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass(frozen=True)
class MetricsReport:
    sensitivity: float
    specificity: float
    score: float
    precision: float
    recall: float
    fscore: float

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def healthy_positive_metrics(cm, healthy: int) -> MetricsReport:
    """Sensitivity over every non-healthy class, specificity and precision for healthy.

    Recall is the healthy class's recall, which equals specificity. Any 0/0
    ratio is reported as 0.
    """
    cm = np.asarray(cm)
    diseased = [i for i in range(cm.shape[0]) if i != healthy]
    sens = _ratio(sum(cm[i, i] for i in diseased), cm[diseased].sum())
    spec = _ratio(cm[healthy, healthy], cm[healthy].sum())
    prec = _ratio(cm[healthy, healthy], cm[:, healthy].sum())
    f = 2 * prec * spec / (prec + spec) if prec + spec > 0 else 0.0
    return MetricsReport(sens, spec, (sens + spec) / 2, prec, spec, f)


def ternary_metrics(cm) -> MetricsReport:
    """Order: chronic, non-chronic, healthy."""
    cm = np.asarray(cm)
    if cm.shape != (3, 3):
        raise ValueError("ternary_metrics needs a 3x3 matrix")
    return healthy_positive_metrics(cm, 2)


def pathology_metrics(cm) -> MetricsReport:
    """Order: COPD, pneumonia, healthy, URTI, bronchiectasis, bronchiolitis."""
    cm = np.asarray(cm)
    if cm.shape != (6, 6):
        raise ValueError("pathology_metrics needs a 6x6 matrix")
    return healthy_positive_metrics(cm, 2)


def metrics_for(cm, healthy_index: int) -> MetricsReport:
    return healthy_positive_metrics(cm, healthy_index)


# ---------------------------------------------------------------- folds


def kfold_split(labels, k: int, rng: np.random.Generator, stratified: bool = True, groups=None) -> list[np.ndarray]:
    """Partition sample indices into k folds.

    Stratified mode shuffles each class, lays the classes end to end and
    deals positions round-robin, so every class lands within one sample of
    its proportional share in every fold. With ``groups`` (e.g. patient
    ids) whole groups are assigned to folds instead, largest first.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} folds exceeds dataset size {n}")
    if groups is not None:
        return _group_folds(np.asarray(groups), k, rng)
    if stratified:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    else:
        order = rng.permutation(n)
    assign = np.empty(n, dtype=np.int64)
    assign[order] = np.arange(n) % k
    return [np.flatnonzero(assign == f) for f in range(k)]


def _group_folds(groups: np.ndarray, k: int, rng) -> list[np.ndarray]:
    uniq = rng.permutation(np.unique(groups))
    if len(uniq) < k:
        raise ValueError(f"k={k} folds exceeds the {len(uniq)} distinct groups")
    sizes = {g: int((groups == g).sum()) for g in uniq}
    uniq = sorted(uniq, key=lambda g: -sizes[g])  # stable: shuffled order breaks ties
    fill = [0] * k
    members: list[list] = [[] for _ in range(k)]
    for g in uniq:
        f = int(np.argmin(fill))
        members[f].append(g)
        fill[f] += sizes[g]
    return [np.flatnonzero(np.isin(groups, m)) for m in members]


def stratified_holdout(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(keep, holdout) index arrays; each class gives up round(fraction * n_c) samples."""
    labels = np.asarray(labels)
    hold = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        m = int(np.floor(fraction * len(idx) + 0.5))
        if m >= len(idx):
            m = len(idx) - 1
        hold.append(idx[:m])
    held = np.sort(np.concatenate(hold)) if hold else np.zeros(0, dtype=np.int64)
    keep = np.setdiff1d(np.arange(len(labels)), held)
    return keep, held


# ---------------------------------------------------------------- experiments


@dataclass
class FoldResult:
    fold: int
    metrics: MetricsReport
    confusion: np.ndarray
    accuracy: float
    n_train: int
    n_synthetic: int
    n_test: int
    leakage_free: bool
    vae_history: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {"fold": self.fold, **self.metrics.as_dict(), "accuracy": self.accuracy}
        rec.update(n_train=self.n_train, n_synthetic=self.n_synthetic, n_test=self.n_test, leakage_free=self.leakage_free)
        if self.vae_history:
            rec["vae_history"] = {c: [float(v) for v in h] for c, h in self.vae_history.items()}
        return rec


@dataclass
class ExperimentResult:
    configuration: str
    scheme: str
    seed: int
    protocol: str
    classes: tuple
    folds: list[FoldResult]
    split: str = ""

    def _stack(self, key):
        return np.array([getattr(f.metrics, key) if key in METRICS else getattr(f, key) for f in self.folds])

    @property
    def mean(self) -> dict:
        return {m: float(self._stack(m).mean()) for m in METRICS + ("accuracy",)}

    @property
    def std(self) -> dict:
        ddof = 1 if len(self.folds) > 1 else 0
        return {m: float(self._stack(m).std(ddof=ddof)) for m in METRICS + ("accuracy",)}

    def to_dict(self) -> dict:
        return {
            "configuration": self.configuration,
            "scheme": self.scheme,
            "seed": self.seed,
            "protocol": self.protocol,
            "split": self.split,
            "classes": list(self.classes),
            "std_kind": STD_KIND,
            "folds": [f.as_record() for f in self.folds],
            "mean": self.mean,
            "std": self.std,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, out_dir) -> Path:
        """``result.json`` plus one ``confusion_fold_XX.csv`` grid per fold."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(self.to_json())
        for f in self.folds:
            grid = "\n".join(",".join(str(int(v)) for v in row) for row in f.confusion) + "\n"
            (out / f"confusion_fold_{f.fold + 1:02d}.csv").write_text(grid)
        return out / "result.json"

    def table(self) -> str:
        """Per-fold metric rows with Mean and Std columns."""
        head = ["metric"] + [str(f.fold + 1) for f in self.folds] + ["Mean", "Std"]
        rows = [head]
        mean, std = self.mean, self.std
        for m in METRICS:
            rows.append([m] + [f"{getattr(f.metrics, m):.6f}" for f in self.folds] + [f"{mean[m]:.6f}", f"{std[m]:.6f}"])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))) for r in rows)


FitPredict = Callable[[LabeledDataset, LabeledDataset, LabeledDataset, TrainConfig, int], np.ndarray]


def cnn_fit_predict(train_set, val_set, test_set, config: TrainConfig, seed: int) -> np.ndarray:
    """Train a fresh classifier on ``train_set`` and return argmax predictions for ``test_set``."""
    model = build_cnn(len(train_set.classes), train_set.input_shape, Rng(derive_seed(seed, "init")), config.dropout)
    cfg = TrainConfig(**{**config.__dict__, "seed": derive_seed(seed, "train")})
    train(model, train_set, val_set, cfg)
    probs = np.concatenate([predict_proba(model, test_set.X[i : i + 64]) for i in range(0, len(test_set), 64)])
    return probs.argmax(axis=1)


@dataclass
class ExperimentSpec:
    configuration: str = "vae"
    k: int = 10
    protocol: str = "default"
    seed: int = 0
    stratified: bool = True
    patient_disjoint: bool = False
    val_fraction: float = 0.1
    # > 0: one stratified train/test split with this test share instead of k folds
    holdout: float = 0.0
    oversample_k: int = 5
    targets: dict | None = None
    reference_counts: dict | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    vae: VaeTrainConfig = field(default_factory=VaeTrainConfig)

    def __post_init__(self):
        if self.configuration not in CONFIGURATIONS:
            raise ValueError(f"unknown configuration {self.configuration!r}; choose from {', '.join(CONFIGURATIONS)}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        if self.patient_disjoint and self.protocol == "paper":
            raise ValueError("patient-disjoint folds need the default protocol (synthetic samples have no patient)")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must be in [0, 1)")
        if self.holdout and self.patient_disjoint:
            raise ValueError("the holdout split is stratified by class, not patient-disjoint")

    @property
    def split(self) -> str:
        return f"holdout {self.holdout:g}" if self.holdout else f"{self.k}-fold"


def _targets(spec: ExperimentSpec, dataset: LabeledDataset) -> tuple[dict, dict]:
    targets = spec.targets if spec.targets is not None else DEFAULT_TARGETS.get(dataset.scheme, {})
    reference = spec.reference_counts
    if reference is None:
        reference = dataset.counts() if spec.targets is not None else REFERENCE_COUNTS.get(dataset.scheme, dataset.counts())
    return targets, reference


def _balance(train_set, spec, seed, targets, log) -> LabeledDataset:
    method = CONFIGURATIONS[spec.configuration]
    plan = OversamplePlan(method, targets, spec.oversample_k, seed)
    return apply_plan(train_set, plan, spec.vae, log=log)


class FoldError(RuntimeError):
    """Any failure inside one fold, tagged with the 1-based fold number."""


def _run_fold(args) -> FoldResult:
    try:
        return _fold(args)
    except Exception as exc:
        raise FoldError(f"fold {args[2] + 1}: {type(exc).__name__}: {exc}") from exc


def _fold(args) -> FoldResult:
    dataset, spec, fold, test_idx, train_idx, fit_predict, full_targets, reference, healthy = args
    fold_rng = Rng(spec.seed).child("fold", fold)
    train_all = dataset.subset(train_idx)
    test_set = dataset.subset(test_idx)
    keep, held = stratified_holdout(train_all.y, spec.val_fraction, fold_rng.stream("val"))
    train_set, val_set = train_all.subset(keep), train_all.subset(held)
    log: dict = {}
    if spec.protocol == "default":
        fold_targets = scale_targets(full_targets, reference, train_set.counts())
        train_set = _balance(train_set, spec, fold_rng.child("balance").seed, fold_targets, log)
    cfg = spec.train
    if spec.configuration == "weighted":
        cfg = TrainConfig(**{**cfg.__dict__, "class_weights": class_weights(train_set.counts())})
    preds = np.asarray(fit_predict(train_set, val_set, test_set, cfg, fold_rng.child("model").seed))
    cm = confusion(preds, test_set.y, dataset.n_classes)
    test_ids = set(test_set.source_ids)
    leak = any(p in test_ids for ps in train_set.parents for p in ps)
    return FoldResult(
        fold,
        healthy_positive_metrics(cm, healthy),
        cm,
        _ratio(np.trace(cm), cm.sum()),
        len(train_set),
        int(train_set.synthetic.sum()),
        len(test_set),
        not leak,
        log.get("vae_history", {}),
    )


def _init_worker():
    threadpool_limits(limits=1)


def run_experiment(
    dataset: LabeledDataset,
    spec: ExperimentSpec,
    fit_predict: FitPredict = cnn_fit_predict,
    jobs: int = 1,
    healthy_index: int | None = None,
) -> ExperimentResult:
    """k-fold cross-validation (or one holdout split) of one balancing configuration.

    Under the default protocol each training portion is balanced after the
    split (targets scaled to the fold); under ``paper`` the whole set is
    balanced first and the folds are cut from the augmented data. A
    stratified ``val_fraction`` of each training portion is held out
    (before balancing) for early stopping.
    """
    healthy = healthy_index if healthy_index is not None else dataset.classes.index("healthy")
    targets, reference = _targets(spec, dataset)
    rng = Rng(spec.seed)
    with threadpool_limits(limits=1):
        data = dataset
        if spec.protocol == "paper":
            data = _balance(dataset, spec, rng.child("balance").seed, targets, {})
        if spec.holdout:
            folds = [stratified_holdout(data.y, spec.holdout, rng.stream("split"))[1]]
        else:
            groups = data.patient_ids if spec.patient_disjoint else None
            folds = kfold_split(data.y, spec.k, rng.stream("split"), spec.stratified, groups)
        all_idx = np.arange(len(data))
        tasks = [
            (data, spec, i, f, np.setdiff1d(all_idx, f), fit_predict, targets, reference, healthy)
            for i, f in enumerate(folds)
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker) as pool:
                results = list(pool.map(_run_fold, tasks))
        else:
            results = [_run_fold(t) for t in tasks]
    return ExperimentResult(spec.configuration, data.scheme, spec.seed, spec.protocol, data.classes, results, spec.split)


def load_result(path) -> dict:
    return json.loads(Path(path).read_text())
