"""Convolutional variational autoencoder used to synthesize minority-class spectrograms.

Encoder: two 3x3 stride-2 convolutions (batchnorm + ReLU each), a dense
layer, then parallel dense heads for the latent mean and log-variance.
Decoder: dense layers back to the encoder's feature-map size, two blocks
of x2 nearest-neighbour upsampling + 3x3 convolution, a crop/pad to the
exact input size, and a 1-channel 3x3 convolution with a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng, derive_seed
from .tensor import init
from .tensor import checkpoint


@dataclass
class VaeTrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    latent_dim: int = 64
    hidden: int = 128
    kl_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _half(n: int) -> int:
    return (n + 1) // 2


class VaeModel:
    CHANNELS = (8, 16)

    def __init__(self, input_shape, latent_dim: int = 64, hidden: int = 128, rng: Rng | None = None):
        rng = rng or Rng(0)
        g = rng.stream("init")
        self.input_shape = tuple(int(s) for s in input_shape)
        self.latent_dim = latent_dim
        self.hidden = hidden
        h, w = self.input_shape
        c1, c2 = self.CHANNELS
        self.code_shape = (_half(_half(h)), _half(_half(w)), c2)
        flat = int(np.prod(self.code_shape))
        p = {}
        p["enc1.w"], p["enc1.b"] = init.conv_kernel(3, 1, c1, g), init.zeros(c1)
        p["bn1.gamma"], p["bn1.beta"] = init.ones(c1), init.zeros(c1)
        p["enc2.w"], p["enc2.b"] = init.conv_kernel(3, c1, c2, g), init.zeros(c2)
        p["bn2.gamma"], p["bn2.beta"] = init.ones(c2), init.zeros(c2)
        p["enc.w"], p["enc.b"] = init.dense_weights(flat, hidden, g), init.zeros(hidden)
        p["mu.w"], p["mu.b"] = init.dense_weights(hidden, latent_dim, g), init.zeros(latent_dim)
        p["logvar.w"], p["logvar.b"] = init.dense_weights(hidden, latent_dim, g), init.zeros(latent_dim)
        p["dec.w"], p["dec.b"] = init.dense_weights(latent_dim, hidden, g), init.zeros(hidden)
        p["dec.expand.w"], p["dec.expand.b"] = init.dense_weights(hidden, flat, g), init.zeros(flat)
        p["dec1.w"], p["dec1.b"] = init.conv_kernel(3, c2, c1, g), init.zeros(c1)
        p["dec2.w"], p["dec2.b"] = init.conv_kernel(3, c1, c1, g), init.zeros(c1)
        p["out.w"], p["out.b"] = init.conv_kernel(3, c1, 1, g), init.zeros(1)
        self.params = p
        self.bn = {"bn1": T.BatchNormState(c1), "bn2": T.BatchNormState(c2)}

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        for name, st in self.bn.items():
            if st.initialized:
                out[f"{name}.running_mean"] = st.running_mean
                out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_dict(self, entries: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            t.data = np.asarray(entries[k], dtype=t.dtype).reshape(t.shape)
        for name, st in self.bn.items():
            if f"{name}.running_mean" in entries:
                dtype = self.params["enc1.w"].dtype
                st.running_mean = np.array(entries[f"{name}.running_mean"], dtype=dtype)
                st.running_var = np.array(entries[f"{name}.running_var"], dtype=dtype)

    def save(self, path) -> None:
        checkpoint.save(path, self.state_dict())


def _as_batch(x, shape) -> T.Tensor:
    arr = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=T.default_dtype())
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[1:] != tuple(shape):
        raise ValueError(f"expected input of shape {tuple(shape)}, got {arr.shape[1:]}")
    return T.Tensor(arr[..., None], dtype=arr.dtype)


def encode(model: VaeModel, x, train: bool = False) -> tuple[T.Tensor, T.Tensor]:
    """(mu, logvar) for a sample (rows, cols) or a batch (n, rows, cols)."""
    p = model.params
    h = _as_batch(x, model.input_shape)
    h = T.conv2d(h, p["enc1.w"], p["enc1.b"], stride=2, padding=1)
    h = T.relu(T.batchnorm2d(h, p["bn1.gamma"], p["bn1.beta"], model.bn["bn1"], train))
    h = T.conv2d(h, p["enc2.w"], p["enc2.b"], stride=2, padding=1)
    h = T.relu(T.batchnorm2d(h, p["bn2.gamma"], p["bn2.beta"], model.bn["bn2"], train))
    h = T.relu(T.dense(T.flatten(h), p["enc.w"], p["enc.b"]))
    return T.dense(h, p["mu.w"], p["mu.b"]), T.dense(h, p["logvar.w"], p["logvar.b"])


def decode(model: VaeModel, z: T.Tensor) -> T.Tensor:
    """Latent codes (n, latent_dim) -> images (n, rows, cols) in [0, 1]."""
    p = model.params
    z = z if isinstance(z, T.Tensor) else T.Tensor(z)
    h = T.relu(T.dense(z, p["dec.w"], p["dec.b"]))
    h = T.relu(T.dense(h, p["dec.expand.w"], p["dec.expand.b"]))
    h = T.reshape(h, (z.shape[0],) + model.code_shape)
    h = T.relu(T.conv2d(T.upsample2d(h, 2), p["dec1.w"], p["dec1.b"], padding=1))
    h = T.relu(T.conv2d(T.upsample2d(h, 2), p["dec2.w"], p["dec2.b"], padding=1))
    h = T.crop_or_pad(h, *model.input_shape)
    h = T.sigmoid(T.conv2d(h, p["out.w"], p["out.b"], padding=1))
    return T.reshape(h, (z.shape[0],) + model.input_shape)


def reparameterize(mu: T.Tensor, logvar: T.Tensor, rng: np.random.Generator) -> T.Tensor:
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I)."""
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have the same shape")
    eps = T.Tensor(rng.standard_normal(mu.shape), dtype=mu.dtype)
    return T.add(mu, T.mul(T.exp(T.mul(logvar, 0.5)), eps))


def kl_to_standard_normal(mu, logvar) -> T.Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) summed over all entries."""
    mu = mu if isinstance(mu, T.Tensor) else T.Tensor(mu)
    logvar = logvar if isinstance(logvar, T.Tensor) else T.Tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have the same shape")
    terms = T.sub(T.add(T.exp(logvar), T.square(mu)), T.add(logvar, 1.0))
    return T.mul(T.tsum(terms), 0.5)


def vae_loss(x, x_hat: T.Tensor, mu: T.Tensor, logvar: T.Tensor, kl_weight: float = 1.0) -> T.Tensor:
    """Squared reconstruction error plus weighted KL, summed over the batch."""
    x = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=x_hat.dtype).reshape(x_hat.shape))
    return T.add(T.sse_loss(x, x_hat), T.mul(kl_to_standard_normal(mu, logvar), float(kl_weight)))


def forward_loss(model, batch, noise: np.random.Generator, kl_weight: float, train: bool = True) -> T.Tensor:
    """Mean per-sample VAE loss of one batch through encode -> sample -> decode."""
    mu, logvar = encode(model, batch, train=train)
    x_hat = decode(model, reparameterize(mu, logvar, noise))
    return T.mul(vae_loss(batch, x_hat, mu, logvar, kl_weight), 1.0 / len(batch))


def epoch_loss(model: VaeModel, X: np.ndarray, config: VaeTrainConfig) -> float:
    """Mean per-sample loss over ``X`` with a noise draw that is identical every call.

    Batchnorm uses batch statistics as in training, but the running
    averages are left untouched.
    """
    saved = {k: (st.running_mean, st.running_var) for k, st in model.bn.items()}
    noise = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "epoch-loss")))
    total = 0.0
    with T.no_grad():
        for start in range(0, len(X), config.batch_size):
            batch = X[start : start + config.batch_size]
            total += forward_loss(model, batch, noise, config.kl_weight).item() * len(batch)
    for k, st in model.bn.items():
        st.running_mean, st.running_var = saved[k]
    return total / len(X)


def train_vae(samples, config: VaeTrainConfig | None = None) -> tuple[VaeModel, list[float]]:
    """Fit a VAE to samples of one class.

    Returns the model and, per epoch, the mean per-sample loss over all
    samples measured after the epoch's updates (see ``epoch_loss``), so
    that successive epochs are compared under the same latent noise.
    """
    config = config or VaeTrainConfig()
    X = np.asarray(samples, dtype=np.float32)
    if X.ndim != 3 or len(X) == 0:
        raise ValueError("train_vae needs a non-empty (n, rows, cols) array")
    if len(X) < 2:
        raise ValueError("train_vae needs at least 2 samples")
    rng = Rng(config.seed)
    model = VaeModel(X.shape[1:], config.latent_dim, config.hidden, rng)
    opt = T.Adam(model.parameters(), lr=config.lr)
    shuffle, noise = rng.stream("shuffle"), rng.stream("vae-noise")
    history = []
    for _ in range(config.epochs):
        order = shuffle.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            batch = X[order[start : start + config.batch_size]]
            opt.zero_grad()
            T.backward(forward_loss(model, batch, noise, config.kl_weight))
            opt.step()
        history.append(epoch_loss(model, X, config))
    return model, history


def generate(model: VaeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Decode ``n`` draws from the latent prior; returns (n, rows, cols) float32 in [0, 1]."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.zeros((0,) + model.input_shape, dtype=np.float32)
    with T.no_grad():
        z = T.Tensor(rng.standard_normal((n, model.latent_dim)))
        return decode(model, z).data.astype(np.float32)


def reconstruct(model: VaeModel, x) -> np.ndarray:
    """Decode the posterior mean of each input (inference mode)."""
    with T.no_grad():
        mu, _ = encode(model, x, train=False)
        return decode(model, mu).data


def oversample_class(samples, n_new: int, config: VaeTrainConfig, seed: int) -> tuple[np.ndarray, list[float]]:
    """Train a fresh VAE on one class and draw ``n_new`` samples; also returns the loss history."""
    cfg = VaeTrainConfig(**{**config.__dict__, "seed": seed})
    model, history = train_vae(samples, cfg)
    return generate(model, n_new, Rng(seed).stream("generate")), history
