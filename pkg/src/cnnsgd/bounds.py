"""Closed-form capacity bounds and their empirical counterparts.

Formula values are returned as floats (``inf`` on overflow) together with
log-space versions for sizes where the float overflows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grad import GradEngine
from .model import CnnConfig, layout, n_params
from .sgd import project_A


@dataclass(frozen=True)
class BoundReport:
    name: str
    formula_value: float
    empirical_value: float | None = None

    @property
    def margin(self) -> float | None:
        if self.empirical_value is None:
            return None
        return self.formula_value - self.empirical_value

    @property
    def ok(self) -> bool:
        return self.margin is None or self.margin >= 0

    def csv_row(self) -> str:
        buf = io.StringIO()
        emp = "" if self.empirical_value is None else repr(float(self.empirical_value))
        mar = "" if self.margin is None else repr(float(self.margin))
        csv.writer(buf, lineterminator="\n").writerow(
            [self.name, repr(float(self.formula_value)), emp, mar])
        return buf.getvalue()


REPORT_HEADER = "name,formula_value,empirical_value,margin\n"


@dataclass(frozen=True)
class StructuralValue:
    """A bound evaluated with an unspecified leading constant set to 1."""
    value: float
    constant_specified: bool = False


def _dims(config: CnnConfig):
    return config.L1, config.L2, config.kmax, max(config.filter_sizes)


def _product(integer_part: int, base: float, power: int) -> float:
    """integer_part * base**power in floating point, inf on overflow."""
    try:
        return float(integer_part) * base ** power
    except OverflowError:
        return math.inf


def log_lipschitz_bound(config: CnnConfig, B: float) -> float:
    L1, L2, k, M = _dims(config)
    return (math.log(7 * L2 * L1) + (L1 + 1) * math.log(k) + L1 * math.log(M * M + 1)
            + (L1 + 3) * math.log(B + 1))


def lipschitz_bound(config: CnnConfig, B: float) -> float:
    """7 L2 L1 k^(L1+1) (M^2+1)^L1 (B+1)^(L1+3): sup-norm change of f per unit
    change of the weights in max norm."""
    if B < 0:
        raise ValueError("B must be >= 0")
    L1, L2, k, M = _dims(config)
    return _product(7 * L2 * L1 * k ** (L1 + 1) * (M * M + 1) ** L1, B + 1.0, L1 + 3)


def log_grad_sup_bound(config: CnnConfig, B: float) -> float:
    L1, L2, k, M = _dims(config)
    return (math.log(L2) + (2 * L1 + 1) * math.log(k) + (2 * L1 + 2) * math.log(M * M + 1)
            + (2 * L1 + 2) * math.log(B))


def grad_sup_bound(config: CnnConfig, B: float) -> float:
    """L2 k^(2L1+1) (M^2+1)^(2L1+2) B^(2L1+2): max-norm of the theta gradient of
    the ensemble loss for weights bounded by B >= 1."""
    if B < 1:
        raise ValueError("B must be >= 1")
    L1, L2, k, M = _dims(config)
    return _product(L2 * k ** (2 * L1 + 1) * (M * M + 1) ** (2 * L1 + 2), float(B), 2 * L1 + 2)


def vc_structural_bound(L1: int, L2: int) -> StructuralValue:
    """(L1^2 + L1 L2) log max(L1, L2), leading constant unspecified."""
    if L1 < 2 or L2 < 2:
        raise ValueError("need L1, L2 >= 2")
    return StructuralValue((L1 * L1 + L1 * L2) * math.log(max(L1, L2)))


def hierarchy_error_bound(t: int, C: float, l: int, eps: float) -> float:
    """sqrt(t) (2C + 1)^l eps: propagation of node errors through l levels."""
    if C <= 0 or eps < 0:
        raise ValueError("need C > 0 and eps >= 0")
    return math.sqrt(t) * (2.0 * C + 1.0) ** l * eps


# ---------------------------------------------------------------------------
# Empirical counterparts


def _values(config: CnnConfig, theta, X) -> np.ndarray:
    lay = layout(config)
    return _kernels.forward_many(np.ascontiguousarray(theta, dtype=np.float64), lay.layers,
                                 lay.out_off, lay.head_off, config.L2,
                                 np.ascontiguousarray(X, dtype=np.float64), config.kmax)


def empirical_lipschitz(config: CnnConfig, theta, theta_bar, images) -> float:
    """max_x |f_theta(x) - f_theta_bar(x)| / ||theta - theta_bar||_inf."""
    th = np.asarray(theta, dtype=np.float64)
    tb = np.asarray(theta_bar, dtype=np.float64)
    delta = float(np.max(np.abs(th - tb))) if th.size else 0.0
    if delta == 0.0:
        return 0.0
    if delta > 1.0:
        raise ValueError("parameters must differ by at most 1 in max norm")
    X = np.asarray(images, dtype=np.float64)
    return float(np.max(np.abs(_values(config, th, X) - _values(config, tb, X)))) / delta


def empirical_grad_sup(config: CnnConfig, w, thetas, images, labels) -> float:
    """max over samples of ||grad_theta phi(y f(x))||_inf."""
    eng = GradEngine(config)
    best = 0.0
    for x, y in zip(np.asarray(images, dtype=np.float64), labels):
        _, _, _, g, _ = eng(np.asarray(w, dtype=np.float64), np.asarray(thetas, dtype=np.float64),
                            np.ascontiguousarray(x), int(y))
        best = max(best, float(np.max(np.abs(g))))
    return best


def random_bounded_instance(config: CnnConfig, K: int, B: float, rng, alpha: float = 1.0):
    """Feasible outer weights and component weights iid Uniform[-B, B]."""
    w = project_A(rng.uniform(0, 1, K), alpha)
    thetas = rng.uniform(-B, B, (K, n_params(config)))
    return w, thetas


# ---------------------------------------------------------------------------
# Rademacher complexity


def _sup_search(config, X, eps, beta, B, budget, rng, step=0.5):
    """Lower estimate of sup_theta |mean(eps * T_beta f_theta(X))| over ||theta||_inf <= B.

    Half of the budget goes to random restarts; the best restarts are then
    improved by coordinate perturbation hill-climbing.
    """
    n = len(eps)
    P = n_params(config)

    def score(th):
        v = np.clip(_values(config, th, X), -beta, beta)
        return abs(float(eps @ v)) / n

    n_starts = max(1, budget // 2)
    starts = rng.uniform(-B, B, (n_starts, P))
    scores = np.array([score(th) for th in starts])
    best_i = int(np.argmax(scores))
    th = starts[best_i].copy()
    best = float(scores[best_i])
    for _ in range(budget - n_starts):
        cand = th.copy()
        idx = rng.integers(P, size=max(1, P // 8))
        cand[idx] = np.clip(cand[idx] + rng.normal(0.0, step * B, idx.size), -B, B)
        s = score(cand)
        if s > best:
            best, th = s, cand
    return best


def rademacher_mc(config: CnnConfig, B: float, images, beta: float, trials: int,
                  search_budget: int, rng) -> float:
    """Monte-Carlo estimate of E sup_theta |(1/n) sum_i eps_i T_beta f_theta(x_i)|.

    The class is all networks with weights in [-B, B]. The supremum is
    approximated by random search, so the result is a lower estimate.
    """
    if trials < 1 or search_budget < 1:
        raise ValueError("trials and search_budget must be >= 1")
    if beta <= 0:
        return 0.0
    X = np.asarray(images, dtype=np.float64)
    vals = []
    for _ in range(trials):
        eps = rng.choice(np.array([-1.0, 1.0]), size=len(X))
        vals.append(_sup_search(config, X, eps, beta, B, search_budget, rng))
    return float(np.mean(vals))
