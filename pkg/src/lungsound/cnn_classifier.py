"""The spectrogram classifier and its training loop.

Input -> Conv2D(3x3, 10, valid) -> BatchNorm -> ReLU -> Dropout
-> MaxPool(5, stride 5) -> Flatten -> Dense(100, ReLU) -> Dense(K) -> softmax
"""
from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import LabeledDataset
from .rng import Rng
from .tensor import checkpoint, init

FILTERS = 10
KERNEL = 3
POOL = 5
HIDDEN = 100


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    class_weights: dict | None = None
    patience: int = 10
    dropout: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class CnnModel:
    def __init__(self, n_classes: int, input_shape, rng: Rng | None = None, dropout: float = 0.5):
        h, w = (int(s) for s in input_shape)
        if h < KERNEL or w < KERNEL:
            raise ValueError(f"input {h}x{w} is smaller than the {KERNEL}x{KERNEL} kernel")
        ch, cw = h - KERNEL + 1, w - KERNEL + 1
        if ch < POOL or cw < POOL:
            raise ValueError(f"input {h}x{w} is too small: conv output {ch}x{cw} cannot be pooled by {POOL}")
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        g = (rng or Rng(0)).stream("init")
        self.n_classes = n_classes
        self.input_shape = (h, w)
        self.dropout = dropout
        self.conv_shape = (ch, cw, FILTERS)
        self.pool_shape = (ch // POOL, cw // POOL, FILTERS)
        self.flat = int(np.prod(self.pool_shape))
        self.params = {
            "conv.w": init.conv_kernel(KERNEL, 1, FILTERS, g),
            "conv.b": init.zeros(FILTERS),
            "bn.gamma": init.ones(FILTERS),
            "bn.beta": init.zeros(FILTERS),
            "dense.w": init.dense_weights(self.flat, HIDDEN, g),
            "dense.b": init.zeros(HIDDEN),
            "out.w": init.dense_weights(HIDDEN, n_classes, g),
            "out.b": init.zeros(n_classes),
        }
        self.bn = T.BatchNormState(FILTERS)
        self.last_shapes: list[tuple] = []

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    @property
    def trained(self) -> bool:
        return self.bn.initialized

    def expected_shapes(self) -> list[tuple]:
        h, w = self.input_shape
        return [(h, w, 1), self.conv_shape, self.pool_shape, (self.flat,), (HIDDEN,), (self.n_classes,)]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        if self.bn.initialized:
            out["bn.running_mean"] = self.bn.running_mean
            out["bn.running_var"] = self.bn.running_var
        return out

    def load_state_dict(self, entries: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            t.data = np.array(entries[k], dtype=t.dtype).reshape(t.shape)
        if "bn.running_mean" in entries:
            dtype = self.params["conv.w"].dtype
            self.bn.running_mean = np.array(entries["bn.running_mean"], dtype=dtype)
            self.bn.running_var = np.array(entries["bn.running_var"], dtype=dtype)
        else:
            self.bn.running_mean = self.bn.running_var = None

    def save(self, path, optimizer: T.Adam | None = None) -> None:
        entries = dict(self.state_dict())
        if optimizer is not None:
            st = optimizer.state
            entries["adam.t"] = np.array(st.t, dtype=np.float32)
            names = list(self.params)
            for name, m, v in zip(names, st.m, st.v):
                entries[f"adam.m.{name}"] = m
                entries[f"adam.v.{name}"] = v
        checkpoint.save(path, entries)

    @classmethod
    def load(cls, path, n_classes: int, input_shape) -> "CnnModel":
        model = cls(n_classes, input_shape)
        model.load_state_dict(checkpoint.load(path))
        return model


def build_cnn(n_classes: int, input_shape, rng: Rng | None = None, dropout: float = 0.5) -> CnnModel:
    return CnnModel(n_classes, input_shape, rng, dropout)


def forward(model: CnnModel, x, train: bool = False, rng: np.random.Generator | None = None) -> T.Tensor:
    """Logits (N, K) for inputs (N, rows, cols); shapes are checked at every layer boundary."""
    arr = np.asarray(x.data if isinstance(x, T.Tensor) else x, dtype=T.default_dtype())
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[1:] != model.input_shape:
        raise ValueError(f"expected input {model.input_shape}, got {arr.shape[1:]}")
    if not train and not model.trained:
        raise RuntimeError("model has never been trained (batchnorm statistics are absent)")
    p = model.params
    h = T.Tensor(arr[..., None], dtype=arr.dtype)
    shapes = [h.shape[1:]]
    h = T.conv2d(h, p["conv.w"], p["conv.b"])
    shapes.append(h.shape[1:])
    h = T.relu(T.batchnorm2d(h, p["bn.gamma"], p["bn.beta"], model.bn, train))
    h = T.dropout(h, model.dropout, rng, train)
    h = T.maxpool2d(h, POOL)
    shapes.append(h.shape[1:])
    h = T.flatten(h)
    shapes.append(h.shape[1:])
    h = T.relu(T.dense(h, p["dense.w"], p["dense.b"]))
    shapes.append(h.shape[1:])
    logits = T.dense(h, p["out.w"], p["out.b"])
    shapes.append(logits.shape[1:])
    if shapes != model.expected_shapes():
        raise AssertionError(f"shape chain broken: {shapes} != {model.expected_shapes()}")
    model.last_shapes = shapes
    return logits


def predict_proba(model: CnnModel, X) -> np.ndarray:
    with T.no_grad():
        return T.softmax(forward(model, X, train=False).data.astype(np.float64))


def predict(model: CnnModel, spectrogram) -> tuple[np.ndarray, int]:
    """Class probabilities and the argmax (lowest index wins ties) for one spectrogram."""
    values = getattr(spectrogram, "values", spectrogram)
    probs = predict_proba(model, np.asarray(values)[None])[0]
    return probs, int(np.argmax(probs))


def _sample_weights(y: np.ndarray, classes, weights: dict | None) -> np.ndarray:
    if weights is None:
        return np.ones(len(y))
    w = np.array([weights.get(c, 1.0) for c in classes], dtype=np.float64)
    return w[y]


def _loss_and_acc(model, X, y, batch_size=64) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    probs = np.concatenate([predict_proba(model, X[i : i + batch_size]) for i in range(0, len(y), batch_size)])
    loss = -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300)).mean()
    return float(loss), float((probs.argmax(axis=1) == y).mean())


def train(model: CnnModel, train_set: LabeledDataset, val_set: LabeledDataset | None, config: TrainConfig) -> list[dict]:
    """Mini-batch Adam on (optionally class-weighted) cross-entropy.

    With a non-empty validation set, training stops after ``patience``
    epochs without a lower validation loss and the best-epoch weights are
    restored. Returns one history record per epoch.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.input_shape != model.input_shape:
        raise ValueError(f"training data shape {train_set.input_shape} != model input {model.input_shape}")
    if train_set.y.max() >= model.n_classes:
        raise ValueError("label out of range for the model's output layer")
    rng = Rng(config.seed)
    shuffle, drop = rng.stream("shuffle"), rng.stream("dropout")
    opt = T.Adam(model.parameters(), lr=config.lr)
    eye = np.eye(model.n_classes)
    X, y = train_set.X, train_set.y
    sw = _sample_weights(y, train_set.classes, config.class_weights)
    use_val = val_set is not None and len(val_set) > 0
    best, best_state, stale = np.inf, None, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(len(y))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(y), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            logits = forward(model, X[idx], train=True, rng=drop)
            loss = T.softmax_crossentropy(logits, eye[y[idx]], sw[idx])
            T.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        record = {"epoch": epoch, "train_loss": loss_sum / len(y), "train_acc": correct / len(y)}
        if use_val:
            record["val_loss"], record["val_acc"] = _loss_and_acc(model, val_set.X, val_set.y)
        else:
            record["val_loss"] = record["val_acc"] = float("nan")
        history.append(record)
        if use_val:
            if record["val_loss"] < best:
                best, stale = record["val_loss"], 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_FIELDS)
    for rec in history:
        writer.writerow([rec["epoch"]] + [repr(float(rec[k])) for k in HISTORY_FIELDS[1:]])
    return buf.getvalue()
