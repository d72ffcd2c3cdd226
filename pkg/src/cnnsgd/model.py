"""Convolutional network class with max-pooling and a one-hidden-layer head.

A network maps an image ``x`` (d1 x d2) to ``g(max_{i,j} sum_s w_s o^(L)_{(i,j),s})``
where ``o^(r)`` are zero-padded convolution feature maps and
``g(z) = w_0 + sum_i w_i relu(w_{i,1} z + w_{i,0})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class ConfigError(ValueError):
    """Raised on inconsistent shapes or configuration values."""


def as_pixels(x) -> np.ndarray:
    """Return the pixel array of an ImageGrid or array-like as float64 2-D."""
    if isinstance(x, ImageGrid):
        return x.pixels
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"image must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ImageGrid:
    """A d1 x d2 grey-scale image with pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"image must be a non-empty 2-D array, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def d1(self) -> int:
        return self.pixels.shape[0]

    @property
    def d2(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CnnConfig:
    """Architecture of one network.

    ``channels[r]`` and ``filter_sizes[r]`` describe conv layer r+1; the input
    layer has a single channel. ``L2`` is the head width, ``beta`` the
    truncation level used by the ensemble.
    """

    channels: tuple
    filter_sizes: tuple
    L2: int
    beta: float = 1.0

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        ms = tuple(int(m) for m in self.filter_sizes)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "filter_sizes", ms)
        if len(ch) == 0 or len(ch) != len(ms):
            raise ConfigError("channels and filter_sizes must be non-empty and equal length")
        if min(ch) < 1 or min(ms) < 1:
            raise ConfigError("channel counts and filter sizes must be >= 1")
        if int(self.L2) < 1:
            raise ConfigError("L2 must be >= 1")
        object.__setattr__(self, "L2", int(self.L2))
        if not self.beta >= 0:
            raise ConfigError("beta must be >= 0")

    @property
    def L1(self) -> int:
        return len(self.channels)

    @property
    def kmax(self) -> int:
        return max(max(self.channels), 1)

    def check_image(self, d1: int, d2: int) -> None:
        if max(self.filter_sizes) > min(d1, d2):
            raise ConfigError(
                f"filter size {max(self.filter_sizes)} exceeds image side {min(d1, d2)}")

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "filter_sizes": list(self.filter_sizes),
                "L2": self.L2, "beta": float(self.beta)}

    @classmethod
    def from_dict(cls, d: dict) -> "CnnConfig":
        return cls(tuple(d["channels"]), tuple(d["filter_sizes"]), int(d["L2"]), float(d["beta"]))


@dataclass(frozen=True)
class Layout:
    """Offsets of every parameter group inside the flat vector."""

    layers: np.ndarray  # (L1, 5) int64: M, k_in, k_out, w_offset, b_offset
    out_off: int
    head_off: int
    size: int


def layout(config: CnnConfig) -> Layout:
    rows = []
    off = 0
    kin = 1
    for M, k in zip(config.filter_sizes, config.channels):
        w_off = off
        off += M * M * kin * k
        rows.append((M, kin, k, w_off, off))
        off += k
        kin = k
    out_off = off
    off += kin
    head_off = off
    off += 1 + 3 * config.L2
    return Layout(np.array(rows, dtype=np.int64), out_off, head_off, off)


def n_params(config: CnnConfig) -> int:
    """Number of scalar parameters of one network."""
    return layout(config).size


@dataclass
class CnnParams:
    """All weights of one network, held in one flat vector.

    The structured accessors return views into ``flat``.
    """

    config: CnnConfig
    flat: np.ndarray = field(default=None)

    def __post_init__(self):
        size = n_params(self.config)
        if self.flat is None:
            self.flat = np.zeros(size)
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (size,):
            raise ConfigError(f"expected {size} parameters, got shape {self.flat.shape}")

    @property
    def _lay(self) -> Layout:
        return layout(self.config)

    def conv_weights(self, r: int) -> np.ndarray:
        """Filter of layer r (0-based) with shape (M, M, k_in, k_out)."""
        M, kin, kout, wo, _ = self._lay.layers[r]
        return self.flat[wo:wo + M * M * kin * kout].reshape(M, M, kin, kout)

    def conv_bias(self, r: int) -> np.ndarray:
        _, _, kout, _, bo = self._lay.layers[r]
        return self.flat[bo:bo + kout]

    @property
    def out_weights(self) -> np.ndarray:
        lay = self._lay
        return self.flat[lay.out_off:lay.head_off]

    @property
    def head_out_bias(self) -> np.ndarray:
        """Length-1 view of w_0^(1)."""
        h = self._lay.head_off
        return self.flat[h:h + 1]

    @property
    def head_out(self) -> np.ndarray:
        h, L2 = self._lay.head_off, self.config.L2
        return self.flat[h + 1:h + 1 + L2]

    @property
    def head_bias(self) -> np.ndarray:
        h, L2 = self._lay.head_off, self.config.L2
        return self.flat[h + 1 + L2:h + 1 + 2 * L2]

    @property
    def head_in(self) -> np.ndarray:
        h, L2 = self._lay.head_off, self.config.L2
        return self.flat[h + 1 + 2 * L2:h + 1 + 3 * L2]

    def copy(self) -> "CnnParams":
        return CnnParams(self.config, self.flat.copy())


@dataclass
class FeatureStack:
    """Post-ReLU feature maps: ``maps[r]`` has shape (k_r, d1, d2); r = 0 is the input."""

    maps: list


def logistic_loss(z):
    """phi(z) = log(1 + exp(-z)), stable for large |z|. Works elementwise."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logistic_loss requires finite input")
    out = np.where(z >= 0, np.log1p(np.exp(-np.abs(z))), -z + np.log1p(np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def truncate(beta: float, z):
    """T_beta z = max(-beta, min(beta, z))."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    out = np.clip(z, -beta, beta)
    return float(out) if np.ndim(out) == 0 else out


def _buffers(config: CnnConfig, d1: int, d2: int):
    L, k = config.L1, config.kmax
    return (np.zeros((L, k, d1, d2)), np.zeros((L + 1, k, d1, d2)), np.zeros(config.L2))


def cnn_forward(config: CnnConfig, params: CnnParams, x):
    """Evaluate one network.

    Returns ``(value, features, pool_argmax, head_preactivations)`` where
    ``pool_argmax`` is the 0-based (i, j) of the first maximal window in
    row-major order.
    """
    px = as_pixels(x)
    config.check_image(*px.shape)
    if params.flat.shape != (n_params(config),):
        raise ConfigError("parameter vector does not match config")
    lay = layout(config)
    pre, post, hp = _buffers(config, *px.shape)
    val, _, bi, bj = _kernels.forward(params.flat, lay.layers, lay.out_off, lay.head_off,
                                      config.L2, px, pre, post, hp)
    maps = [post[0, :1].copy()] + [post[r + 1, :k].copy() for r, k in enumerate(config.channels)]
    return float(val), FeatureStack(maps), (int(bi), int(bj)), hp.copy()


def cnn_values(config: CnnConfig, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Values of one network (flat parameters) on images X of shape (n, d1, d2)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    config.check_image(X.shape[1], X.shape[2])
    lay = layout(config)
    return _kernels.forward_many(np.ascontiguousarray(theta, dtype=np.float64), lay.layers,
                                 lay.out_off, lay.head_off, config.L2, X, config.kmax)


def ensemble_eval(config: CnnConfig, ens, x) -> float:
    """f(x) = sum_k w_k T_beta(f_{theta_k}(x))."""
    px = as_pixels(x)
    w = np.asarray(ens.w, dtype=np.float64)
    thetas = np.asarray(ens.thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[0] != w.shape[0]:
        raise ConfigError("ensemble weight count does not match component count")
    vals = np.array([cnn_values(config, thetas[k], px[None])[0] for k in range(len(w))])
    return float(np.dot(w, np.clip(vals, -config.beta, config.beta)))


def ensemble_values(config: CnnConfig, w: np.ndarray, thetas: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Vectorised ensemble value on a stack of images."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.zeros(X.shape[0])
    for k in range(len(w)):
        if w[k] != 0.0:
            out += w[k] * np.clip(cnn_values(config, thetas[k], X), -config.beta, config.beta)
    return out


def pi_schedule(s: int, l: int, Q: int) -> int:
    """pi(s) = sum_{i=1}^{l} 1{s >= i + sum_{r=l-i+1}^{l-1} 4^r Q}."""
    total = 0
    for i in range(1, l + 1):
        thr = i + sum(4 ** r * Q for r in range(l - i + 1, l))
        total += int(s >= thr)
    return total


def theorem2_architecture(n: int, p: float, l: int, c5: float = 1.0, c6: float = 1.0,
                          c7: int = 8, c3: float = 1.0) -> CnnConfig:
    """Depth/width schedule of the rate theorem.

    L1 = (4^l - 1)/3 * Q + l with Q = ceil(c5 n^{2/(2p+4)}), L2 = ceil(c6 n^{1/4}),
    filter sizes 2^{pi(s)}, constant channel count c7 and beta = c3 log n.
    """
    if n < 1 or p < 1 or l < 1:
        raise ConfigError("need n >= 1, p >= 1, l >= 1")
    Q = math.ceil(c5 * n ** (2.0 / (2.0 * p + 4.0)) - 1e-12)
    L1 = (4 ** l - 1) // 3 * Q + l
    L2 = max(1, math.ceil(c6 * n ** 0.25 - 1e-12))
    ms = tuple(2 ** pi_schedule(s, l, Q) for s in range(1, L1 + 1))
    return CnnConfig(tuple([int(c7)] * L1), ms, L2, c3 * math.log(n))
