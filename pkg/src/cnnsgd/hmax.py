"""Hierarchical max-pooling model for the a-posteriori probability eta.

eta(x) = max over windows (i, j) + {0..2^l-1}^2 inside the image of
f_{l,1}(window), where f_{k,s} applies a 4-ary node g_{k,s} to the four
quadrant values f_{k-1,.} in the order top-left, top-right, bottom-left,
bottom-right (rows first index, columns second).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import ImageGrid, as_pixels

LOGIT_CAP = 50.0


# ---------------------------------------------------------------------------
# Node library. Each node maps R^4 -> [0, 1]; ``lipschitz`` is a Euclidean
# Lipschitz constant valid on [-2, 2]^4 and ``p`` the smoothness order.


@dataclass(frozen=True)
class Node:
    """A 4-ary node function with its smoothness descriptor (p, C)."""

    kind: str
    params: tuple = ()

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return _NODE_FUNCS[self.kind](z, *self.params)

    @property
    def lipschitz(self) -> float:
        return _NODE_LIP[self.kind](*self.params)

    @property
    def p(self) -> float:
        return _NODE_P[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(d["kind"], tuple(d.get("params", ())))


def _mean(z):
    return np.clip(z.mean(axis=-1), 0.0, 1.0)


def _smoothmax(z, gamma):
    m = z.max(axis=-1, keepdims=True)
    lme = m[..., 0] + np.log(np.exp(gamma * (z - m)).mean(axis=-1)) / gamma
    return np.clip(lme, 0.0, 1.0)


def _product(z):
    return np.clip(np.prod(z, axis=-1), 0.0, 1.0)


def _bump(z, lam, *center):
    c = np.asarray(center if center else (0.5, 0.5, 0.5, 0.5))
    return np.clip(1.0 - lam * np.sum((z - c) ** 2, axis=-1), 0.0, 1.0)


def _logistic(z, gamma, c):
    u = gamma * (z.mean(axis=-1) - c)
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _constant(z, c):
    return np.full(z.shape[:-1], float(c))


_NODE_FUNCS: dict[str, Callable] = {
    "mean": _mean, "smooth-max": _smoothmax, "product": _product,
    "bump": _bump, "logistic": _logistic, "constant": _constant,
}
# mean: gradient (1/4, ..) has norm 1/2; log-mean-exp has softmax gradient of
# norm <= 1; product partials on [-2,2]^4 are <= 8 each, norm <= 16; the bump
# has gradient 2 lam ||z - c|| <= 2 sqrt(lam) where it is positive; the
# logistic-of-mean has gradient norm gamma/4 * 1/2.
_NODE_LIP: dict[str, Callable] = {
    "mean": lambda: 0.5, "smooth-max": lambda gamma: 1.0, "product": lambda: 16.0,
    "bump": lambda lam, *c: 2.0 * math.sqrt(lam), "logistic": lambda gamma, c: gamma / 8.0,
    "constant": lambda c: 0.0,
}
_NODE_P = {"mean": 1.0, "smooth-max": 1.0, "product": 1.0, "bump": 1.0,
           "logistic": math.inf, "constant": math.inf}


@dataclass
class HierarchicalModel:
    """Level-l model; ``nodes[k-1][s-1]`` is g_{k,s} (4^{l-k} nodes at level k)."""

    level: int
    nodes: list

    def __post_init__(self):
        if self.level < 1 or len(self.nodes) != self.level:
            raise ValueError("need one node list per level")
        for k, row in enumerate(self.nodes, start=1):
            if len(row) != 4 ** (self.level - k):
                raise ValueError(f"level {k} needs {4 ** (self.level - k)} nodes")

    @property
    def side(self) -> int:
        return 2 ** self.level

    @property
    def lipschitz(self) -> float:
        return max(n.lipschitz for row in self.nodes for n in row)

    @classmethod
    def uniform(cls, level: int, node: Node) -> "HierarchicalModel":
        return cls(level, [[node] * 4 ** (level - k) for k in range(1, level + 1)])

    def descriptor(self) -> str:
        return json.dumps({"level": self.level,
                           "nodes": [[n.to_dict() for n in row] for row in self.nodes]},
                          separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_descriptor(cls, s: str) -> "HierarchicalModel":
        d = json.loads(s)
        return cls(d["level"], [[Node.from_dict(n) for n in row] for row in d["nodes"]])


def _eval_node_tree(model: HierarchicalModel, patches: np.ndarray, k: int, s: int,
                    nodes=None) -> np.ndarray:
    """f_{k,s} on a batch of patches of side 2^k (1-based k, s)."""
    if k == 0:
        return patches[..., 0, 0]
    nodes = model.nodes if nodes is None else nodes
    h = 2 ** (k - 1)
    quads = (patches[..., :h, :h], patches[..., :h, h:], patches[..., h:, :h], patches[..., h:, h:])
    vals = [_eval_node_tree(model, q, k - 1, 4 * (s - 1) + j + 1, nodes) for j, q in enumerate(quads)]
    return nodes[k - 1][s - 1](np.stack(vals, axis=-1))


def eval_hierarchy(model: HierarchicalModel, patch) -> float | np.ndarray:
    """f = f_{l,1} on one patch (2^l x 2^l) or a batch (..., 2^l, 2^l)."""
    arr = np.asarray(patch.pixels if isinstance(patch, ImageGrid) else patch, dtype=np.float64)
    if arr.shape[-2:] != (model.side, model.side):
        raise ValueError(f"patch must be {model.side}x{model.side}, got {arr.shape[-2:]}")
    out = _eval_node_tree(model, arr, model.level, 1)
    return float(out) if np.ndim(out) == 0 else out


def window_values(model: HierarchicalModel, X: np.ndarray) -> np.ndarray:
    """f on every window: shape (..., d1-2^l+1, d2-2^l+1)."""
    X = np.asarray(X, dtype=np.float64)
    side = model.side
    if side > min(X.shape[-2:]):
        raise ValueError(f"window side {side} exceeds image side {min(X.shape[-2:])}")
    wins = sliding_window_view(X, (side, side), axis=(-2, -1))
    return _eval_node_tree(model, wins, model.level, 1)


def eval_maxpool_model(model: HierarchicalModel, x) -> float | np.ndarray:
    """m(x) = max over all windows of f. Accepts one image or a batch (n, d1, d2)."""
    X = np.asarray(x.pixels if isinstance(x, ImageGrid) else x, dtype=np.float64)
    out = window_values(model, X).max(axis=(-2, -1))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Data generation


@dataclass(frozen=True)
class LabeledSample:
    x: ImageGrid
    y: int

    def __post_init__(self):
        if self.y not in (-1, 1):
            raise ValueError("label must be -1 or 1")


@dataclass
class GeneratorConfig:
    """Image size, model, pixel law ("iid-uniform" or "blockwise-smooth"), n and seed."""

    d1: int
    d2: int
    model: HierarchicalModel
    n: int
    pixel_law: str = "iid-uniform"
    seed: int = 0
    block: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.pixel_law not in ("iid-uniform", "blockwise-smooth"):
            raise ValueError(f"unknown pixel law {self.pixel_law!r}")


def sample_images(gen: GeneratorConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n images from the configured pixel law, shape (n, d1, d2)."""
    if gen.pixel_law == "iid-uniform":
        return rng.uniform(0.0, 1.0, size=(n, gen.d1, gen.d2))
    # bilinear interpolation of a coarse uniform grid with spacing ``block``
    c1 = (gen.d1 - 1) // gen.block + 2
    c2 = (gen.d2 - 1) // gen.block + 2
    coarse = rng.uniform(0.0, 1.0, size=(n, c1, c2))
    u = np.arange(gen.d1) / gen.block
    v = np.arange(gen.d2) / gen.block
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu = (u - i0)[:, None]
    fv = (v - j0)[None, :]
    a = coarse[:, i0][:, :, j0]
    b = coarse[:, i0 + 1][:, :, j0]
    c = coarse[:, i0][:, :, j0 + 1]
    d = coarse[:, i0 + 1][:, :, j0 + 1]
    out = (1 - fu) * (1 - fv) * a + fu * (1 - fv) * b + (1 - fu) * fv * c + fu * fv * d
    return np.clip(out, 0.0, 1.0)


def sample_arrays(gen: GeneratorConfig, rng: np.random.Generator, n: int | None = None):
    """Images (n, d1, d2), labels (n,) and eta (n,)."""
    n = gen.n if n is None else n
    X = sample_images(gen, n, rng)
    eta = eval_maxpool_model(gen.model, X)
    u = rng.uniform(size=n)
    y = np.where(u < eta, 1, -1)
    return X, y, np.atleast_1d(eta)


def sample_dataset(gen: GeneratorConfig, rng: np.random.Generator | None = None) -> list:
    """n labeled samples with P(Y = 1 | X) = m(X)."""
    rng = np.random.default_rng(gen.seed) if rng is None else rng
    X, y, _ = sample_arrays(gen, rng)
    return [LabeledSample(ImageGrid(X[i]), int(y[i])) for i in range(len(y))]


# ---------------------------------------------------------------------------
# Bayes references


def bayes_decide(model: HierarchicalModel, x) -> int | np.ndarray:
    """+1 iff eta(x) >= 1/2."""
    eta = eval_maxpool_model(model, x)
    out = np.where(np.asarray(eta) >= 0.5, 1, -1)
    return int(out) if out.ndim == 0 else out


def _labels_of(classifier, X: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(classifier(X))
        if out.shape == (len(X),):
            return out
    except Exception:
        pass
    return np.array([classifier(x) for x in X])


def regret_from_eta(pred: np.ndarray, eta: np.ndarray) -> float:
    """mean |2 eta - 1| 1{pred != bayes}."""
    bayes = np.where(eta >= 0.5, 1, -1)
    return float(np.mean(np.abs(2.0 * eta - 1.0) * (pred != bayes)))


def empirical_regret(classifier, model: HierarchicalModel, test_x, mc_labels: int = 0,
                     rng: np.random.Generator | None = None):
    """Exact conditional excess risk on the test points, plus a label-based MC estimate.

    ``classifier`` maps an image stack (n, d1, d2) or a single image to labels.
    Returns (exact, mc) where mc is None when mc_labels == 0.
    """
    X = np.stack([as_pixels(x) for x in test_x]) if not isinstance(test_x, np.ndarray) else test_x
    if len(X) == 0:
        raise ValueError("test set is empty")
    pred = _labels_of(classifier, X)
    eta = np.atleast_1d(eval_maxpool_model(model, X))
    exact = regret_from_eta(pred, eta)
    mc = None
    if mc_labels > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        bayes = np.where(eta >= 0.5, 1, -1)
        Y = np.where(rng.uniform(size=(mc_labels, len(eta))) < eta, 1, -1)
        mc = float(np.mean(pred != Y) - np.mean(bayes != Y))
    return exact, mc


def margin_condition_mc(model: HierarchicalModel, n: float, trials: int, gen: GeneratorConfig,
                        rng: np.random.Generator | None = None) -> float:
    """Fraction of X draws with max(eta/(1-eta), (1-eta)/eta) > n^{1/4}."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(gen.seed) if rng is None else rng
    g = GeneratorConfig(gen.d1, gen.d2, model, trials, gen.pixel_law, gen.seed, gen.block)
    eta = np.atleast_1d(eval_maxpool_model(model, sample_images(g, trials, rng)))
    with np.errstate(divide="ignore"):
        ratio = np.where((eta <= 0.0) | (eta >= 1.0), np.inf,
                         np.maximum(eta / (1.0 - eta), (1.0 - eta) / eta))
    return float(np.mean(ratio > n ** 0.25))


def _phi(z):
    return np.logaddexp(0.0, -z)


def logistic_excess(f: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Pointwise E[phi(Y f)|eta] - E[phi(Y f*)|eta] with f* = logit(eta) capped at +-50."""
    f = np.asarray(f, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    with np.errstate(divide="ignore"):
        fstar = np.clip(np.log(eta) - np.log1p(-eta), -LOGIT_CAP, LOGIT_CAP)
    risk = lambda g: eta * _phi(g) + (1.0 - eta) * _phi(-g)
    return np.maximum(risk(f) - risk(fstar), 0.0)


def surrogate_gap_check(f_scores, eta, constant: float = math.sqrt(2.0)):
    """(lhs, rhs) with lhs the excess misclassification of sign(f) and
    rhs = constant * sqrt(mean logistic excess risk).

    The default constant sqrt(2) is what the comparison inequality delivers for
    the logistic loss (KL(eta || 1/2) >= (2 eta - 1)^2 / 2).
    """
    f = np.asarray(f_scores, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    pred = np.where(f >= 0, 1, -1)
    lhs = regret_from_eta(pred, eta)
    rhs = constant * math.sqrt(float(np.mean(logistic_excess(f, eta))))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Dataset files


def save_dataset(path, gen: GeneratorConfig, X: np.ndarray, y: np.ndarray) -> None:
    """CSV: header row (tag, d1, d2, n, seed, model descriptor), then y and pixels per row."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["#cnnsgd-dataset", gen.d1, gen.d2, len(y), gen.seed, gen.model.descriptor()])
        for i in range(len(y)):
            wr.writerow([int(y[i])] + [repr(float(v)) for v in X[i].ravel()])


def load_dataset(path):
    """Inverse of save_dataset: returns (header dict, X, y)."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    tag, d1, d2, n, seed, desc = rows[0]
    if tag != "#cnnsgd-dataset":
        raise ValueError("not a dataset file")
    d1, d2, n = int(d1), int(d2), int(n)
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if body.shape != (n, 1 + d1 * d2):
        raise ValueError("dataset body does not match header")
    header = {"d1": d1, "d2": d2, "n": n, "seed": int(seed),
              "model": HierarchicalModel.from_descriptor(desc)}
    return header, body[:, 1:].reshape(n, d1, d2), body[:, 0].astype(int)


def load_pgm(path) -> np.ndarray:
    """Read a plain (P2) or binary (P5) PGM image scaled into [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError("not a PGM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    w, h, maxval = tokens
    pos += 1
    if magic == b"P2":
        vals = np.array(data[pos:].split(), dtype=np.float64)[: w * h]
    else:
        dt = np.uint8 if maxval < 256 else np.dtype(">u2")
        vals = np.frombuffer(data[pos:], dtype=dt, count=w * h).astype(np.float64)
    return (vals / maxval).reshape(h, w)
