"""Projected SGD over an ensemble of truncated convolutional networks.

Outer weights live in A = {w >= 0, sum w <= 1, ||w||^2 <= alpha}; the
stacked component parameters stay within distance 1 of their
initialization. The estimate averages the outer iterates w^(0)..w^(t-1).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .grad import GradEngine
from .model import CnnConfig, CnnParams, ConfigError, as_pixels, ensemble_values, n_params

CHECKPOINT_FORMAT = "cnnsgd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``lam`` defaults to 1/t and ``beta`` (when None) is taken from the
    network config. N and I are the block counts of the theory (K = N I).
    """

    K: int = 64
    t: int = 0
    alpha: float = 0.125
    B: float = 1.0
    lam: float | None = None
    beta: float | None = None
    N: int | None = None
    I: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("stepsize must be >= 0")
        if self.N is not None and self.I is not None and self.N * self.I != self.K:
            raise ConfigError("K must equal N * I")

    @property
    def stepsize(self) -> float:
        return 1.0 / self.t if self.lam is None else float(self.lam)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleParams:
    """Outer weights w (K,), component parameters thetas (K, P) and the
    initialization snapshot theta0 (K, P)."""

    w: np.ndarray
    thetas: np.ndarray
    theta0: np.ndarray

    def component(self, config: CnnConfig, k: int) -> CnnParams:
        return CnnParams(config, self.thetas[k])

    @property
    def K(self) -> int:
        return len(self.w)


@dataclass
class TrainTrace:
    """Per-step diagnostics of sgd_train."""

    loss: np.ndarray
    value: np.ndarray
    projA_shift: np.ndarray
    projB_active: np.ndarray
    w_iterates: np.ndarray | None = None


def init_params(config: CnnConfig, train: TrainConfig, rng: np.random.Generator) -> EnsembleParams:
    """theta_k coordinates iid Uniform[-B, B]; w = 0."""
    if train.B < 0:
        raise ConfigError("B must be >= 0")
    P = n_params(config)
    thetas = rng.uniform(-train.B, train.B, size=(train.K, P)) if train.B > 0 else np.zeros((train.K, P))
    return EnsembleParams(np.zeros(train.K), thetas, thetas.copy())


@njit(cache=True)
def _clamp_feasible(w, alpha):
    for i in range(w.size):
        if w[i] < 0.0:
            w[i] = 0.0
    s = w.sum()
    if s > 1.0:
        w /= s
    nn = np.dot(w, w)
    if nn > alpha:
        w *= math.sqrt(alpha / nn)
    # rounding can leave a hair above either bound, and sums evaluated in a
    # different order may differ by ~K ulps: keep that much slack
    slack = 1.0 - w.size * 2.3e-16
    while w.sum() > slack or np.dot(w, w) > alpha * slack:
        w *= 1.0 - 1e-15
    return w


@njit(cache=True)
def _dykstra(z, alpha, tol, max_rounds):
    n = z.size
    x = z.copy()
    p1 = np.zeros(n)
    p2 = np.zeros(n)
    p3 = np.zeros(n)
    r = math.sqrt(alpha)
    for _ in range(max_rounds):
        # orthant
        y1 = x + p1
        x1 = np.maximum(y1, 0.0)
        p1 = y1 - x1
        # halfspace sum <= 1
        y2 = x1 + p2
        s = y2.sum()
        x2 = y2 - (s - 1.0) / n if s > 1.0 else y2.copy()
        p2 = y2 - x2
        # ball of radius sqrt(alpha)
        y3 = x2 + p3
        nrm = math.sqrt(np.dot(y3, y3))
        x3 = y3 * (r / nrm) if nrm > r else y3.copy()
        p3 = y3 - x3
        move = math.sqrt(np.dot(x3 - x, x3 - x))
        x = x3
        if move < tol:
            break
    return x


@njit(cache=True)
def _is_feasible(w, alpha):
    for i in range(w.size):
        if w[i] < 0.0:
            return False
    return w.sum() <= 1.0 and np.dot(w, w) <= alpha


@njit(cache=True)
def _project_A(w, alpha):
    if _is_feasible(w, alpha):
        return w.copy()
    x = _dykstra(w, alpha, 1e-10, 10000)
    return _clamp_feasible(x, alpha)


def project_A(w, alpha: float) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w <= 1, ||w||^2 <= alpha}.

    Dykstra's alternating projections over the three sets, stopped when an
    iterate moves less than 1e-10 (at most 10,000 rounds), followed by a
    clamp pass that makes the result exactly feasible.
    """
    if not alpha >= 0.0:
        raise ValueError("alpha must be >= 0")
    if alpha > 1.0:
        raise ValueError("alpha must be <= 1")
    return _project_A(np.ascontiguousarray(w, dtype=np.float64), float(alpha))


def project_B(thetas, theta0) -> np.ndarray:
    """Project onto the unit Euclidean ball around theta0 (flat concatenation)."""
    th = np.asarray(thetas, dtype=np.float64)
    t0 = np.asarray(theta0, dtype=np.float64)
    if th.shape != t0.shape:
        raise ConfigError("theta and theta0 differ in shape")
    diff = th - t0
    nrm = math.sqrt(float(np.sum(diff * diff)))
    if nrm <= 1.0:
        return th.copy()
    out = t0 + diff / nrm
    return out


def sgd_train(data: Sequence, config: CnnConfig, train: TrainConfig, rng: np.random.Generator,
              params: EnsembleParams | None = None, keep_iterates: bool = False,
              check_feasible: bool = True):
    """Run exactly ``train.t`` projected SGD steps.

    Each pass over the n samples uses a fresh permutation from ``rng``.
    Returns ``(w_avg, thetas_final, trace)`` where ``w_avg`` is the mean of
    w^(0)..w^(t-1) and ``thetas_final`` is a (K, P) array of theta^(t).
    """
    n = len(data)
    if n == 0:
        raise ConfigError("training data is empty")
    if train.t % n != 0 or train.t < 1:
        raise ConfigError(f"t = {train.t} must be a positive multiple of n = {n}")
    if train.beta is not None and train.beta != config.beta:
        config = CnnConfig(config.channels, config.filter_sizes, config.L2, train.beta)
    X = np.stack([np.ascontiguousarray(as_pixels(s.x)) for s in data])
    Y = np.array([s.y for s in data], dtype=np.float64)
    config.check_image(X.shape[1], X.shape[2])
    if params is None:
        params = init_params(config, train, rng)
    w = params.w.copy()
    thetas = np.ascontiguousarray(params.thetas.copy())
    theta0 = params.theta0
    lam = train.stepsize
    alpha = float(train.alpha)
    engine = GradEngine(config)
    T = train.t
    w_sum = np.zeros_like(w)
    trace = TrainTrace(np.empty(T), np.empty(T), np.empty(T), np.zeros(T, dtype=bool),
                       np.empty((T, len(w))) if keep_iterates else None)
    step = 0
    for _ in range(T // n):
        order = rng.permutation(n)
        for j in order:
            w_sum += w
            if keep_iterates:
                trace.w_iterates[step] = w
            f, loss, gw, gtheta, _ = engine(w, thetas, X[j], Y[j])
            trace.loss[step] = loss
            trace.value[step] = f
            w_new = w - lam * gw
            w_proj = project_A(w_new, alpha)
            trace.projA_shift[step] = float(np.linalg.norm(w_proj - w_new))
            if lam != 0.0 and np.any(gtheta):
                th_new = thetas - lam * gtheta
                diff = th_new - theta0
                nrm = math.sqrt(float(np.sum(diff * diff)))
                if nrm > 1.0:
                    th_new = theta0 + diff / nrm
                    trace.projB_active[step] = True
                thetas = th_new
            w = w_proj
            if check_feasible:
                assert w.min() >= 0.0 and w.sum() <= 1.0 + 1e-12 and w @ w <= alpha + 1e-12
            step += 1
    w_avg = w_sum / T
    return w_avg, thetas, trace


def classify(config: CnnConfig, w_avg, thetas_final, x) -> int:
    """sign(f(x)) with sign(0) = +1."""
    f = ensemble_values(config, np.asarray(w_avg), np.asarray(thetas_final),
                        np.asarray(as_pixels(x))[None])[0]
    return 1 if f >= 0 else -1


def classify_many(config: CnnConfig, w_avg, thetas_final, X) -> np.ndarray:
    f = ensemble_values(config, np.asarray(w_avg), np.asarray(thetas_final), X)
    return np.where(f >= 0, 1, -1)


# ---------------------------------------------------------------------------
# Numerical check of the deterministic projected-iteration inequality


@dataclass
class QuadraticFamily:
    """F_t(u, v) = 0.5 (u - c_t - G_t v)^T Q_t (u - c_t - G_t v) with Q_t PSD.

    F is the average of the F_t.
    """

    Q: np.ndarray  # (T, m, m)
    c: np.ndarray  # (T, m)
    G: np.ndarray  # (T, m, k)

    def _r(self, t, u, v):
        return u - self.c[t] - self.G[t] @ v

    def Ft(self, t, u, v) -> float:
        r = self._r(t, u, v)
        return 0.5 * float(r @ self.Q[t] @ r)

    def grad_Ft(self, t, u, v) -> np.ndarray:
        return self.Q[t] @ self._r(t, u, v)

    def _R(self, u, v):
        return u[None, :] - self.c - self.G @ v

    def F(self, u, v) -> float:
        R = self._R(u, v)
        return 0.5 * float(np.einsum("ti,tij,tj->", R, self.Q, R)) / len(self.c)

    def grad_F(self, u, v) -> np.ndarray:
        return np.einsum("tij,tj->i", self.Q, self._R(u, v)) / len(self.c)


def random_quadratic_family(rng: np.random.Generator, dim: int, T: int, vdim: int = 2,
                            scale: float = 1.0) -> QuadraticFamily:
    A = rng.normal(size=(T, dim, dim)) * scale / math.sqrt(dim)
    Q = np.einsum("tij,tkj->tik", A, A)
    c = rng.normal(size=(T, dim)) * 0.5
    G = rng.normal(size=(T, dim, vdim)) * 0.3
    return QuadraticFamily(Q, c, G)


def lemma1_check(family, u0, u_star, vs, project: Callable, D: float | None = None,
                 lam: float | None = None):
    """Run u_{t+1} = P(u_t - lam grad_u F_t(u_t, v_t)) for t < T and return (lhs, rhs).

    lhs = (1/T) sum_t F(u_t, v_t); rhs = F(u*, v_0) + (1/T) sum_{t>=1} |F(u*, v_t) - F(u*, v_0)|
    + ||u* - u_0||^2 / 2 + D^2 / (2T) + (1/T) sum_t <grad F - grad F_t, u_t - u*>.

    ``family`` needs methods F, grad_F, Ft, grad_Ft. ``vs`` holds v_0..v_{T-1}.
    When D is None, the largest gradient norm along the visited iterates is used,
    which is the quantity the inequality's argument actually consumes. The
    stepsize defaults to 1/T, for which the derivation is stated.
    """
    T = len(vs)
    lam = 1.0 / T if lam is None else lam
    u = np.array(u0, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    lhs = 0.0
    resid = 0.0
    dmax = 0.0
    for t in range(T):
        v = vs[t]
        lhs += family.F(u, v)
        g_t = family.grad_Ft(t, u, v)
        resid += float((family.grad_F(u, v) - g_t) @ (u - u_star))
        dmax = max(dmax, float(np.linalg.norm(g_t)))
        u = project(u - lam * g_t)
    if D is None:
        D = dmax
    F0 = family.F(u_star, vs[0])
    drift = sum(abs(family.F(u_star, vs[t]) - F0) for t in range(1, T))
    d0 = u_star - np.asarray(u0, dtype=np.float64)
    rhs = (F0 + drift / T + float(d0 @ d0) / 2.0 + D * D / (2.0 * T) + resid / T)
    return lhs / T, rhs


# ---------------------------------------------------------------------------
# Checkpoints


def _fmt(arr) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(arr))


def _parse(s: str, shape) -> np.ndarray:
    vals = np.array([float(t) for t in s.split()], dtype=np.float64) if s else np.zeros(0)
    return vals.reshape(shape)


def save_checkpoint(path, config: CnnConfig, train: TrainConfig, w_avg, thetas, theta0=None,
                    rng: np.random.Generator | None = None, extra: dict | None = None) -> None:
    """Write a versioned JSON checkpoint; arrays are 17-significant-digit decimals."""
    thetas = np.asarray(thetas)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "cnn_config": config.to_dict(),
        "train_config": train.to_dict(),
        "K": int(thetas.shape[0]),
        "P": int(thetas.shape[1]),
        "w_avg": _fmt(w_avg),
        "thetas": _fmt(thetas),
        "theta0": _fmt(theta0) if theta0 is not None else None,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    """Inverse of save_checkpoint. Returns a dict with config objects and arrays."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError("not a supported checkpoint file")
    K, P = doc["K"], doc["P"]
    out = {
        "cnn_config": CnnConfig.from_dict(doc["cnn_config"]),
        "train_config": TrainConfig(**doc["train_config"]),
        "w_avg": _parse(doc["w_avg"], (K,)),
        "thetas": _parse(doc["thetas"], (K, P)),
        "theta0": _parse(doc["theta0"], (K, P)) if doc["theta0"] is not None else None,
        "extra": doc["extra"],
        "rng": None,
    }
    if doc["rng_state"] is not None:
        state = doc["rng_state"]
        bg = getattr(np.random, state["bit_generator"])()
        bg.state = state
        out["rng"] = np.random.Generator(bg)
    return out
