"""Minimal dense-network engine and the two neural detectors built on it.

Networks are stacks of affine layers with tanh on hidden layers and an
identity output. Gradients are computed by hand-written reverse-mode
accumulation over the layer stack; training uses Adam on shuffled
mini-batches drawn from a seeded generator, so a fixed seed reproduces the
whole parameter trajectory exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .detectors import AnomalyModel, _as_rows, _check_finite
from .errors import Diverged, NonFinite, ShapeMismatch, TooFewRows


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError(f"invalid training config {self}")


class DenseNet:
    """Feed-forward net: tanh hidden layers, identity output."""

    def __init__(self, widths, weights, biases=None):
        self.widths = tuple(int(w) for w in widths)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = None if biases is None else [np.asarray(b, dtype=np.float64) for b in biases]
        for i, W in enumerate(self.weights):
            if W.shape != (self.widths[i], self.widths[i + 1]):
                raise ShapeMismatch(f"layer {i}: weight shape {W.shape} vs widths {self.widths[i:i + 2]}")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, bias: bool = True) -> "DenseNet":
        # Glorot-uniform, drawn layer by layer in order; biases start at zero
        weights = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases = [np.zeros(w) for w in widths[1:]] if bias else None
        return cls(widths, weights, biases)

    @property
    def has_bias(self) -> bool:
        return self.biases is not None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return self.weights + (self.biases or [])

    def copy(self) -> "DenseNet":
        return DenseNet(self.widths, [w.copy() for w in self.weights], None if self.biases is None else [b.copy() for b in self.biases])

    def forward(self, x) -> list[np.ndarray]:
        """Activations of every layer, input first, output last."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.widths[0]}")
        acts = [x]
        h = x
        for i, W in enumerate(self.weights):
            z = h @ W
            if self.biases is not None:
                z = z + self.biases[i]
            h = np.tanh(z) if i < self.n_layers - 1 else z
            acts.append(h)
        if not np.all(np.isfinite(h)):
            raise NonFinite("forward pass produced non-finite activations")
        return acts

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[-1]

    def backward(self, acts: list[np.ndarray], loss_grad: np.ndarray) -> list[np.ndarray]:
        """Gradients of the loss w.r.t. :meth:`params`, given dL/d(output)."""
        g = np.asarray(loss_grad, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ShapeMismatch(f"loss gradient shape {g.shape} vs output {acts[-1].shape}")
        gw = [None] * self.n_layers
        gb = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        grads = gw + (gb if self.biases is not None else [])
        if not all(np.all(np.isfinite(x)) for x in grads):
            raise NonFinite("backward pass produced non-finite gradients")
        return grads


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


def mse_loss(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all entries of the squared error, and its gradient."""
    diff = out - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def center_loss(out: np.ndarray, center: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared distance to ``center``, and its gradient."""
    diff = out - center
    return float(np.mean(np.sum(diff**2, axis=1))), 2.0 * diff / len(diff)


def fit(
    net: DenseNet,
    X: np.ndarray,
    loss: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]],
    target: Callable[[np.ndarray], np.ndarray],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[float]:
    """Train ``net`` in place; returns the full-data loss after every epoch."""
    opt = Adam(net.params(), cfg)
    history = []
    n = len(X)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            xb = X[order[lo : lo + cfg.batch_size]]
            acts = net.forward(xb)
            value, grad = loss(acts[-1], target(xb))
            if not np.isfinite(value):
                raise Diverged("training loss became non-finite")
            opt.step(net.params(), net.backward(acts, grad))
        value, _ = loss(net(X), target(X))
        if not np.isfinite(value) or not all(np.all(np.isfinite(p)) for p in net.params()):
            raise Diverged("parameters became non-finite")
        history.append(value)
    return history


def _half(d: int) -> int:
    return max(2, d // 2)


def _quarter(d: int) -> int:
    return max(2, d // 4)


def _net_arrays(net: DenseNet) -> dict[str, np.ndarray]:
    out = {"widths": np.asarray(net.widths, dtype=np.int64)}
    for i, W in enumerate(net.weights):
        out[f"W{i}"] = W
    for i, b in enumerate(net.biases or []):
        out[f"b{i}"] = b
    return out


def _net_from_arrays(arrays: dict[str, np.ndarray]) -> DenseNet:
    widths = [int(w) for w in arrays["widths"]]
    L = len(widths) - 1
    weights = [arrays[f"W{i}"] for i in range(L)]
    biases = [arrays[f"b{i}"] for i in range(L)] if "b0" in arrays else None
    return DenseNet(widths, weights, biases)


class AutoencoderModel(AnomalyModel):
    kind = "autoencoder"

    def __init__(self, params, train_dim, seed, net: DenseNet, history=None):
        super().__init__(params, train_dim, seed)
        self.net = net
        self.history = history or []

    def _score(self, X):
        return np.mean((self.net(X) - X) ** 2, axis=1)

    def arrays(self):
        return _net_arrays(self.net)

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        return cls(params, train_dim, seed, _net_from_arrays(arrays))


def train_autoencoder(X, bottleneck: int | None = None, config: TrainConfig | None = None, seed: int = 0) -> AutoencoderModel:
    """Symmetric d -> d/2 -> d/4 -> d/2 -> d autoencoder trained on MSE.

    Score is the per-row mean squared reconstruction error.
    """
    X = _as_rows(X)
    cfg = config or TrainConfig()
    if len(X) < cfg.batch_size:
        raise TooFewRows(f"autoencoder needs at least batch_size={cfg.batch_size} rows, got {len(X)}")
    _check_finite(X, "training rows")
    d = X.shape[1]
    z = bottleneck or _quarter(d)
    h = max(_half(d), z)
    rng = np.random.default_rng(seed)
    net = DenseNet.init([d, h, z, h, d], rng, bias=True)
    history = fit(net, X, mse_loss, lambda xb: xb, cfg, rng)
    params = {"bottleneck": int(z), "hidden": int(h), **asdict(cfg)}
    return AutoencoderModel(params, d, seed, net, history)


def snap_center(c: np.ndarray, eps: float = 0.1) -> np.ndarray:
    """Push near-zero center coordinates out to +-eps (zero goes to +eps)."""
    c = np.asarray(c, dtype=np.float64).copy()
    small = np.abs(c) < eps
    c[small] = np.where(c[small] < 0, -eps, eps)
    return c


class DeepSvddModel(AnomalyModel):
    kind = "deepsvdd"

    def __init__(self, params, train_dim, seed, net: DenseNet, center: np.ndarray, history=None):
        super().__init__(params, train_dim, seed)
        self.net = net
        self.center = np.asarray(center, dtype=np.float64)
        self.history = history or []

    def _score(self, X):
        return np.sum((self.net(X) - self.center) ** 2, axis=1)

    def arrays(self):
        return {**_net_arrays(self.net), "center": self.center}

    @classmethod
    def from_arrays(cls, params, train_dim, seed, arrays):
        return cls(params, train_dim, seed, _net_from_arrays(arrays), arrays["center"])


def train_deepsvdd(X, embed_dim: int | None = None, config: TrainConfig | None = None, seed: int = 0) -> DeepSvddModel:
    """One-class Deep SVDD with a bias-free d -> d/2 -> embed network.

    The hypersphere center is the mean initial embedding with near-zero
    coordinates snapped to +-0.1; score is the squared distance to it.
    """
    X = _as_rows(X)
    cfg = config or TrainConfig()
    if len(X) < cfg.batch_size:
        raise TooFewRows(f"DeepSVDD needs at least batch_size={cfg.batch_size} rows, got {len(X)}")
    _check_finite(X, "training rows")
    d = X.shape[1]
    k = embed_dim or _quarter(d)
    h = max(_half(d), k)
    rng = np.random.default_rng(seed)
    net = DenseNet.init([d, h, k], rng, bias=False)
    center = snap_center(net(X).mean(axis=0))
    history = fit(net, X, center_loss, lambda xb: center, cfg, rng)
    params = {"embed_dim": int(k), "hidden": int(h), **asdict(cfg)}
    return DeepSvddModel(params, d, seed, net, center, history)
