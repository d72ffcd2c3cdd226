"""Experiment driver: verification suites, rate sweeps and CSV output.

Every CSV written here is a pure function of the configuration and the seeds:
floats are written with ``repr`` and rows are sorted before writing. Wall
clock times go to a separate timings file so that result files can be
compared byte for byte between runs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .approx.embed import cnn_from_ffnets, ffnet_hierarchy_values, linear_node_net
from .approx.ffnet import FeedForwardNet, eval_exact, net_weight_stats
from .approx.gadgets import (build_indicator_net, build_mult_net, build_multd_net,
                             build_square_net, build_trunc_net, in_safe_region,
                             indicator_weight_bound, mult_error_bound, multd_threshold,
                             multd_weight_bound, square_error_bound, test_gadget,
                             trunc_weight_bound)
from .approx.taylor import TaylorConfig, build_taylor_net, interior_points
from .bounds import (BoundReport, empirical_grad_sup, empirical_lipschitz, grad_sup_bound,
                     lipschitz_bound, rademacher_mc, random_bounded_instance)
from .grad import GradEngine, finite_diff_grad, kink_margin
from .hmax import (GeneratorConfig, HierarchicalModel, Node, eval_maxpool_model,
                   empirical_regret, sample_arrays)
from .model import CnnConfig, ConfigError, cnn_values, n_params, theorem2_architecture
from .sgd import (TrainConfig, classify_many, lemma1_check, project_A, random_quadratic_family,
                  sgd_train)


class InfeasibleArchitecture(ConfigError):
    """The requested network ensemble exceeds the configured memory cap."""


# ---------------------------------------------------------------------------
# CSV helpers


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_manifest(out_dir, command: str, cfg: dict, seeds) -> Path:
    lines = [f"command: {command}", f"library_version: {__version__}",
             f"config_sha256: {config_hash(cfg)}",
             "seeds: " + " ".join(str(int(s)) for s in seeds),
             "config: " + json.dumps(cfg, sort_keys=True)]
    return write_text(Path(out_dir) / "manifest.txt", "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Verification reports


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    relation: str = "<="   # also ">=", ">" and "in" (tolerance <= measured <= upper)
    upper: float | None = None

    @property
    def ok(self) -> bool:
        m = self.measured
        if self.relation == "<=":
            return m <= self.tolerance
        if self.relation == ">=":
            return m >= self.tolerance
        if self.relation == ">":
            return m > self.tolerance
        if self.relation == "in":
            return self.tolerance <= m <= self.upper
        raise ValueError(self.relation)

    def row(self):
        tol = self.tolerance if self.relation != "in" else f"[{self.tolerance!r}, {self.upper!r}]"
        return [self.name, float(self.measured), tol, self.relation, self.ok]


@dataclass
class VerifyReport:
    suite: str
    checks: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def n_failed(self) -> int:
        return sum(not c.ok for c in self.checks)

    def add(self, name, measured, tolerance, relation="<=", upper=None) -> Check:
        c = Check(name, measured, tolerance, relation, upper)
        self.checks.append(c)
        return c

    def csv(self) -> str:
        return csv_text(["check", "measured", "tolerance", "relation", "passed"],
                        [c.row() for c in self.checks])

    def summary(self) -> str:
        worst = [c for c in self.checks if not c.ok]
        head = f"{self.suite}: {len(self.checks) - len(worst)}/{len(self.checks)} checks passed"
        return head + "".join(f"\n  FAILED {c.name}: measured {float(c.measured)!r}, "
                              f"{c.relation} {c.tolerance!r}" for c in worst[:10])


# ---------------------------------------------------------------------------
# Suite: gradients


def random_grad_instance(rng, max_side=6, max_L1=2, max_k=3, max_L2=4, max_K=4):
    """Random tiny architecture, ensemble, image and label."""
    L1 = int(rng.integers(1, max_L1 + 1))
    chans = tuple(int(c) for c in rng.integers(1, max_k + 1, size=L1))
    ms = tuple(int(m) for m in rng.integers(1, 4, size=L1))
    d1 = int(rng.integers(max(ms), max_side + 1))
    d2 = int(rng.integers(max(ms), max_side + 1))
    cfg = CnnConfig(chans, ms, int(rng.integers(1, max_L2 + 1)), float(rng.uniform(0.5, 3.0)))
    K = int(rng.integers(1, max_K + 1))
    w = rng.uniform(0.0, 1.0, K) / K
    thetas = rng.normal(0.0, 1.0, (K, n_params(cfg)))
    x = rng.uniform(0.0, 1.0, (d1, d2))
    y = int(rng.choice([-1, 1]))
    return cfg, w, thetas, x, y


def verify_gradients(seed: int = 0, instances: int = 100, h: float = 1e-5, tol: float = 1e-4,
                     min_margin: float = 1e-3) -> VerifyReport:
    """Analytic gradient against central differences on kink-avoiding instances.

    Instances whose kink margin (see ``kink_margin``) is below ``min_margin``
    for some component are redrawn.
    """
    rng = np.random.default_rng([seed, 1])
    rep = VerifyReport("gradients")
    done = 0
    while done < instances:
        cfg, w, thetas, x, y = random_grad_instance(rng)
        if min(kink_margin(cfg, th, x) for th in thetas) < min_margin:
            continue
        eng = GradEngine(cfg)
        K, P = thetas.shape
        _, _, gw, gth, _ = eng(w, thetas, x, y)
        analytic = np.concatenate([gw, gth.ravel()])

        def loss(v):
            return eng(v[:K].copy(), np.ascontiguousarray(v[K:].reshape(K, P)), x, y,
                       want_grad=False)[1]

        fd = finite_diff_grad(loss, np.concatenate([w, thetas.ravel()]), h)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(fd))
        rel = 0.0 if scale == 0 else float(np.linalg.norm(analytic - fd) / scale)
        rep.add(f"instance {done} L1={cfg.L1} K={K} P={P}", rel, tol)
        done += 1
    return rep


# ---------------------------------------------------------------------------
# Suite: projections


_GRID_CACHE: dict = {}


def _simplex_grid(dim: int, step: float):
    """Grid points of the simplex with their coordinate sums and norms."""
    key = (dim, step)
    if key not in _GRID_CACHE:
        m = int(round(1.0 / step))
        axes = np.meshgrid(*[np.arange(m + 1) * step] * dim, indexing="ij")
        G = np.stack([a.ravel() for a in axes], axis=1)
        G = G[G.sum(axis=1) <= 1.0 + 1e-12]
        _GRID_CACHE[key] = (G, G.sum(axis=1), np.sqrt(np.einsum("ij,ij->i", G, G)))
    return _GRID_CACHE[key]


def _shrink_factors(tot, nrm, alpha):
    """Largest t <= 1 with t * tot <= 1 and t * nrm <= sqrt(alpha)."""
    with np.errstate(divide="ignore"):
        return np.minimum(1.0, np.minimum(np.where(tot > 0, 1.0 / tot, 1.0),
                                          np.where(nrm > 0, math.sqrt(alpha) / nrm, 1.0)))


def _feasible(w, alpha) -> bool:
    return bool(np.all(w >= 0) and w.sum() <= 1.0 and w @ w <= alpha)


def _retract(C, alpha):
    """Scale every nonnegative point toward 0 until it is feasible."""
    C = np.maximum(C, 0.0)
    t = _shrink_factors(C.sum(axis=1), np.sqrt(np.einsum("ij,ij->i", C, C)), alpha)
    R = C * t[:, None]
    # guard against rounding above the constraints
    ok = (R.sum(axis=1) <= 1.0) & (np.einsum("ij,ij->i", R, R) <= alpha)
    return R[ok]


def grid_projection(z, alpha: float, step: float = 0.005, refine_to: float = 1e-9):
    """Brute-force projection onto {w >= 0, sum w <= 1, |w|^2 <= alpha}.

    Candidates are the points of a grid together with the radial
    retractions of the grid and of the grid scaled by 1.5, so that
    candidates are dense on the curved boundary too. The exhaustive search
    at the given step is followed by local searches (window of +-5 steps)
    around the incumbent, repeated at one scale until it stops moving and
    then at half the step.
    """
    z = np.asarray(z, dtype=np.float64)
    dim = z.size
    G, tot, nrm = _simplex_grid(dim, step)
    gz = G @ z
    zz = float(z @ z)
    best, best_d = np.zeros(dim), zz
    for scale in (1.0, 1.5):
        c = scale * _shrink_factors(scale * tot, scale * nrm, alpha)
        d = c * c * nrm * nrm - 2.0 * c * gz + zz
        i = int(np.argmin(d))
        cand = c[i] * G[i]
        if d[i] < best_d and _feasible(cand, alpha):
            best, best_d = cand, float(np.sum((cand - z) ** 2))
    offs = np.arange(-5, 6, dtype=np.float64)
    s = step
    while s > refine_to:
        axes = np.meshgrid(*[best[i] + offs * s for i in range(dim)], indexing="ij")
        C = np.stack([a.ravel() for a in axes], axis=1)
        C = _retract(C, alpha)
        dc = np.sum((C - z) ** 2, axis=1)
        i = int(np.argmin(dc))
        if dc[i] < best_d:
            best, best_d = C[i], float(dc[i])
        else:
            s /= 2.0
    return best


def verify_projections(seed: int = 0, instances: int = 100, step: float = 0.005,
                       tol: float = 1e-3, tol_exact: float = 1e-10) -> VerifyReport:
    rng = np.random.default_rng([seed, 2])
    rep = VerifyReport("projections")
    for i in range(instances):
        dim = int(rng.integers(1, 4))
        alpha = float(rng.uniform(0.05, 1.0))
        z = rng.normal(0.3, 0.8, dim)
        p = project_A(z, alpha)
        rep.add(f"{i} dim={dim} grid distance", float(np.linalg.norm(p - grid_projection(z, alpha, step))), tol)
        viol = max(float(-p.min()), float(p.sum() - 1.0), float(p @ p - alpha), 0.0)
        rep.add(f"{i} feasibility violation", viol, 0.0)
        rep.add(f"{i} idempotence", float(np.linalg.norm(project_A(p, alpha) - p)), tol_exact)
        v = rng.normal(0.3, 0.8, dim)
        gap = float(np.linalg.norm(project_A(v, alpha) - p) - np.linalg.norm(v - z))
        rep.add(f"{i} nonexpansiveness excess", gap, tol_exact)
    return rep


# ---------------------------------------------------------------------------
# Suite: lemma1


def _ball(u, radius=1.0):
    n = np.linalg.norm(u)
    return u if n <= radius else u * (radius / n)


def verify_lemma1(seed: int = 0, instances: int = 50, dim: int = 5, T: int = 200,
                  tol: float = 1e-9) -> VerifyReport:
    """Projected-iteration inequality on random convex quadratics (unit ball)."""
    rng = np.random.default_rng([seed, 3])
    rep = VerifyReport("lemma1")
    for i in range(instances):
        fam = random_quadratic_family(rng, dim, T)
        vdim = fam.G.shape[2]
        u0 = _ball(rng.normal(size=dim))
        u_star = _ball(rng.normal(size=dim))
        vs = rng.normal(size=(T, vdim)) * 0.1
        lhs, rhs = lemma1_check(fam, u0, u_star, vs, _ball)
        rep.add(f"instance {i} lhs - rhs", lhs - rhs, tol)
    return rep


# ---------------------------------------------------------------------------
# Suite: gadgets


def verify_gadgets(seed: int = 0, Rs=range(2, 9), As=(1.0, 2.0)) -> VerifyReport:
    rng = np.random.default_rng([seed, 4])
    rep = VerifyReport("gadgets")
    for a in As:
        for R in Rs:
            tag = f"R={R} a={a:g}"
            sq = build_square_net(R, a)
            # the error of the interpolant is largest at the dyadic midpoints;
            # evaluate there in exact arithmetic, elsewhere in floats
            mids = np.array([-a + 2.0 * a * (k + 0.5) / 2 ** R for k in range(2 ** R)])
            exact = max(abs(v[0] - Fraction(float(x)) ** 2)
                        for v, x in zip(eval_exact(sq, mids[:, None]), mids))
            rep.add(f"square exact error {tag}", float(exact), square_error_bound(R, a))
            rep.add(f"square exact error is within bound {tag}",
                    float(exact <= Fraction(a * a) / 4 ** R), 1.0, ">=")
            g = np.linspace(-a, a, 20001)
            err = float(np.max(np.abs(sq(g[:, None])[:, 0] - g * g)))
            # float evaluation may add a few rounding errors of size eps * 4a^2
            rep.add(f"square grid error {tag}", err, square_error_bound(R, a) + 8 * np.finfo(float).eps * 4 * a * a)
            st = net_weight_stats(sq)
            rep.add(f"square sup weight {tag}", st.sup_norm, 4 * a * a)
            rep.add(f"square input-layer sup {tag}", st.input_layer_sup_nooffset, 1.0)

            mu = build_mult_net(R, a)
            u = np.linspace(-a, a, 201)
            P = np.array(np.meshgrid(u, u, indexing="ij")).reshape(2, -1).T
            err = float(np.max(np.abs(mu(P)[:, 0] - P[:, 0] * P[:, 1])))
            rep.add(f"mult grid error {tag}", err, mult_error_bound(R, a))
            st = net_weight_stats(mu)
            rep.add(f"mult sup weight {tag}", st.sup_norm, 4 * a * a)
            rep.add(f"mult |output offset| {tag}", abs(st.output_offset), 0.0)

            for d in (1, 2):
                lo = rng.uniform(-a, 0.0, d)
                hi = lo + rng.uniform(2.0 / R + 0.1, a + 1.0, d)
                x = rng.uniform(-a - 1, a + 1, (4000, d))
                inside = np.all((x >= lo) & (x < hi), axis=1).astype(float)
                dist = np.min(np.minimum(np.abs(x - lo), np.abs(x - hi)), axis=1)
                safe = dist >= 1.0 / R
                ind = build_indicator_net(lo, hi, R)
                v = ind(x)[:, 0]
                rep.add(f"indicator d={d} max error on K_1/R {tag}",
                        float(np.max(np.abs(v - inside)[safe], initial=0.0)), 1e-12)
                rep.add(f"indicator d={d} max deviation elsewhere {tag}",
                        float(np.max(np.abs(v - inside), initial=0.0)), 1.0)
                rep.add(f"indicator d={d} sup weight {tag}", net_weight_stats(ind).sup_norm,
                        indicator_weight_bound(lo, hi, R))
                s = float(rng.uniform(-R, R))
                tg = test_gadget(d, R)
                inp = np.column_stack([x, np.tile(lo, (len(x), 1)), np.tile(hi, (len(x), 1)),
                                       np.full(len(x), s)])
                v = tg(inp)[:, 0]
                rep.add(f"test d={d} max error on K_1/R {tag}",
                        float(np.max(np.abs(v - s * inside)[safe], initial=0.0)), 1e-12)
                rep.add(f"test d={d} max deviation elsewhere {tag}",
                        float(np.max(np.abs(v - s * inside), initial=0.0)), abs(s))
                rep.add(f"test d={d} sup weight {tag}", net_weight_stats(tg).sup_norm, float(R) ** 2)

        for d in (2, 3):
            R = math.ceil(multd_threshold(d, a))
            st = net_weight_stats(build_multd_net(R, d, a))
            rep.add(f"multd d={d} a={a:g} sup weight", st.sup_norm, multd_weight_bound(d, a))
            rep.add(f"multd d={d} a={a:g} |output offset|", abs(st.output_offset), 0.0)

    for B in (1, 2, 4):
        for R in (4.0, 10.0, 100.0):
            tr = build_trunc_net(R, B)
            z = np.linspace(-0.5, B + 1.5, 20001)
            safe = in_safe_region(z, R, B)
            v = tr(z[:, None])[:, 0]
            rep.add(f"trunc B={B} R={R:g} max error on safe region",
                    float(np.max(np.abs(v - np.floor(z))[safe])), 1e-12)
            st = net_weight_stats(tr)
            rep.add(f"trunc B={B} R={R:g} sup weight", st.sup_norm, trunc_weight_bound(R, B))
            rep.add(f"trunc B={B} R={R:g} input weights are +-1",
                    float(np.max(np.abs(np.abs(tr.weights[0][:, 1:]) - 1.0))), 0.0)
            rep.add(f"trunc B={B} R={R:g} |output offset|", abs(st.output_offset), 0.0)
    return rep


# ---------------------------------------------------------------------------
# Suite: taylor


def _sin_derivative(x, l):
    k = sum(l) % 4
    return float((np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))[k](x[0]))


def verify_taylor(seed: int = 0, Ms=(2, 3, 4), points: int = 2000, tol: float = 1e-6) -> VerifyReport:
    """f = sin on [-1, 1], d = q = 1, p = 2: network, recursion and direct formula
    agree at interior points and the interior error decreases strictly in M."""
    rng = np.random.default_rng([seed, 5])
    rep = VerifyReport("taylor")
    errors = []
    for M in Ms:
        cfg = TaylorConfig(_sin_derivative, d=1, a=1.0, M=M, q=1, p=2.0, C=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tn = build_taylor_net(cfg)
        x = rng.uniform(-1.0, 1.0, (points, 1))
        x = x[interior_points(cfg, x)]
        deep = tn.deep(x)[:, 0]
        orc = np.array([tn.oracle(v) for v in x])
        dr = np.array([tn.direct(v) for v in x])
        rep.add(f"M={M} |net - recursion|", float(np.max(np.abs(deep - orc))), tol)
        rep.add(f"M={M} |recursion - direct|", float(np.max(np.abs(orc - dr))), tol)
        rep.add(f"M={M} |net - direct|", float(np.max(np.abs(deep - dr))), tol)
        errors.append(float(np.max(np.abs(deep - np.sin(x[:, 0])))))
        rep.add(f"M={M} sup interior error vs e*c36*h^p", errors[-1],
                math.e * cfg.c36 * cfg.h ** cfg.p)
    for (M0, e0), (M1, e1) in zip(zip(Ms, errors), zip(Ms[1:], errors[1:])):
        rep.add(f"error decrease M={M0}->{M1}", e0 - e1, 0.0, ">")
    return rep


# ---------------------------------------------------------------------------
# Suite: embedding


def verify_embedding(seed: int = 0, images: int = 100, tol: float = 1e-9) -> VerifyReport:
    rng = np.random.default_rng([seed, 6])
    rep = VerifyReport("embedding")
    X = rng.uniform(0.0, 1.0, (images, 4, 4))
    cfg, params = cnn_from_ffnets(linear_node_net([0.25] * 4), 1)
    cnn = cnn_values(cfg, params.flat, X)
    ref = eval_maxpool_model(HierarchicalModel.uniform(1, Node("mean")), X)
    rep.add("l=1 mean node: CNN vs max-pool model", float(np.max(np.abs(cnn - ref))), tol)
    # generic random node nets at two levels
    for l in (1, 2):
        nets = [[FeedForwardNet([rng.normal(size=(3, 5)), rng.normal(size=(1, 4))])
                 for _ in range(4 ** (l - k))] for k in range(1, l + 1)]
        side = 2 ** l + 1
        Xl = rng.uniform(0.0, 1.0, (images, side, side))
        cfg, params = cnn_from_ffnets(nets, l)
        diff = np.abs(cnn_values(cfg, params.flat, Xl) - ffnet_hierarchy_values(nets, l, Xl))
        rep.add(f"l={l} random node nets: CNN vs composed nets", float(np.max(diff)), tol)
    return rep


# ---------------------------------------------------------------------------
# Suite: bounds and rademacher


def _tiny_config(rng) -> CnnConfig:
    L = int(rng.integers(1, 3))
    return CnnConfig(tuple(int(c) for c in rng.integers(1, 4, size=L)),
                     tuple(int(m) for m in rng.integers(1, 3, size=L)),
                     int(rng.integers(1, 4)), float(rng.uniform(0.5, 2.0)))


def bound_reports(seed: int = 0, instances: int = 50, images: int = 20) -> list:
    """Paired (formula, empirical) reports for the Lipschitz and gradient bounds."""
    rng = np.random.default_rng([seed, 7])
    out = []
    for i in range(instances):
        cfg = _tiny_config(rng)
        B = float(rng.uniform(0.5, 2.0))
        P = n_params(cfg)
        th = rng.uniform(-B, B, P)
        tb = np.clip(th + rng.uniform(-1.0, 1.0, P) * rng.uniform(0.0, 1.0), -B, B)
        X = rng.uniform(0.0, 1.0, (images, 4, 4))
        out.append(BoundReport(f"lipschitz {i}", lipschitz_bound(cfg, B),
                               empirical_lipschitz(cfg, th, tb, X)))
    for i in range(instances):
        cfg = _tiny_config(rng)
        B = float(rng.uniform(1.0, 2.0))
        w, thetas = random_bounded_instance(cfg, int(rng.integers(1, 5)), B, rng)
        X = rng.uniform(0.0, 1.0, (images, 4, 4))
        y = rng.choice([-1, 1], images)
        out.append(BoundReport(f"grad_sup {i}", grad_sup_bound(cfg, B),
                               empirical_grad_sup(cfg, w, thetas, X, y)))
    return out


def verify_bounds(seed: int = 0, instances: int = 50) -> VerifyReport:
    rep = VerifyReport("bounds")
    for r in bound_reports(seed, instances):
        rep.add(f"{r.name} empirical / formula", r.empirical_value / r.formula_value, 1.0)
        rep.add(f"{r.name} margin", r.margin, 0.0, ">=")
    return rep


RADEMACHER_CONFIG = CnnConfig((2,), (2,), 2, 1.0)


def verify_rademacher(seed: int = 0, ns=(1024, 4096), trials: int = 20, budget: int = 60,
                      B: float = 1.0, beta: float = 1.0) -> VerifyReport:
    rng = np.random.default_rng([seed, 8])
    X = rng.uniform(0.0, 1.0, (max(ns), 4, 4))
    rep = VerifyReport("rademacher")
    est = []
    for n in ns:
        est.append(rademacher_mc(RADEMACHER_CONFIG, B, X[:n], beta, trials, budget,
                                 np.random.default_rng([seed, 8, n])))
        rep.add(f"estimate n={n} in [0, beta]", est[-1], 0.0, "in", beta)
    rep.add(f"ratio n={ns[1]} / n={ns[0]}", est[1] / est[0], 0.3, "in", 0.8)
    return rep


SUITES = {
    "gradients": verify_gradients,
    "projections": verify_projections,
    "lemma1": verify_lemma1,
    "gadgets": verify_gadgets,
    "taylor": verify_taylor,
    "embedding": verify_embedding,
    "bounds": verify_bounds,
    "rademacher": verify_rademacher,
}


def run_verify(suite: str, seed: int = 0, out_dir=None, **kwargs) -> VerifyReport:
    """Run one named suite; optionally write ``verify_<suite>.csv`` and timings."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    t0 = time.perf_counter()
    rep = SUITES[suite](seed=seed, **kwargs)
    rep.elapsed = time.perf_counter() - t0
    if out_dir is not None:
        write_text(Path(out_dir) / f"verify_{suite}.csv", rep.csv())
        write_text(Path(out_dir) / f"timings_verify_{suite}.csv",
                   csv_text(["suite", "wallclock_s"], [[suite, round(rep.elapsed, 3)]]))
    return rep


# ---------------------------------------------------------------------------
# Configuration documents


DEFAULT_CONFIG = {
    "generator": {"d1": 4, "d2": 4, "level": 1,
                  "node": {"kind": "logistic", "params": [20.0, 0.6922]},
                  "pixel_law": "blockwise-smooth", "block": 2, "n": 500},
    "architecture": {"p": 2.0, "c5": 1.0, "c6": 1.0, "c7": 8, "c3": 1.0},
    "train": {"K": 64, "B": 1.0, "alpha": 0.125, "t_per_n": 10, "lam_mult": 1.0},
    "sweep": {"n": [250, 500, 1000, 2000], "seeds": 10, "test_size": 20000,
              "test_seed": 999, "mc_labels": 1, "workers": 1},
    "evaluate": {"test_size": 20000, "test_seed": 999, "mc_labels": 1},
    "bounds": {"B": 1.0, "instances": 50},
    "max_params": 20_000_000,
}

# Desk-scale settings of the learning-trend experiment. The rate theorem's
# constants are unspecified; c5 = 0.29 keeps the conv depth at 3 over the
# whole grid and lam_mult scales the default stepsize 1/t.
ACCEPTANCE_SWEEP = {
    "architecture": {"p": 2.0, "c5": 0.29, "c6": 1.0, "c7": 2, "c3": 1.0},
    "train": {"K": 64, "B": 1.0, "alpha": 0.125, "t_per_n": 10, "lam_mult": 100.0},
    "sweep": {"n": [250, 500, 1000, 2000], "seeds": 10},
}

CONSTANTS_NOTICE = ("note: the rate theorem leaves c5, c6, c7 unspecified; "
                    "the values used here are desk-scale choices")


def merge_config(base: dict, override: dict | None) -> dict:
    """Recursive dict merge; values of ``override`` win."""
    out = json.loads(json.dumps(base))
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    if path is None:
        return merge_config(DEFAULT_CONFIG, {})
    with open(path, encoding="utf-8") as fh:
        return merge_config(DEFAULT_CONFIG, json.load(fh))


def generator_from(cfg: dict, n: int | None = None, seed: int = 0) -> GeneratorConfig:
    g = cfg["generator"]
    node = Node(g["node"]["kind"], tuple(g["node"].get("params", ())))
    model = HierarchicalModel.uniform(int(g["level"]), node)
    return GeneratorConfig(int(g["d1"]), int(g["d2"]), model, int(n if n is not None else g["n"]),
                           g.get("pixel_law", "iid-uniform"), int(seed), int(g.get("block", 2)))


def architecture_for(cfg: dict, n: int) -> CnnConfig:
    """An explicit ``cnn`` block if given, else the rate-theorem schedule for n."""
    if "cnn" in cfg:
        return CnnConfig.from_dict(cfg["cnn"])
    a = cfg["architecture"]
    return theorem2_architecture(n, float(a["p"]), int(cfg["generator"]["level"]),
                                 float(a["c5"]), float(a["c6"]), int(a["c7"]), float(a["c3"]))


def train_config_for(cfg: dict, n: int, seed: int = 0) -> TrainConfig:
    t = cfg["train"]
    T = int(t["t_per_n"]) * n
    return TrainConfig(K=int(t["K"]), t=T, alpha=float(t["alpha"]), B=float(t["B"]),
                       lam=float(t["lam_mult"]) / T, seed=int(seed))


def check_feasible(config: CnnConfig, K: int, cap: int) -> None:
    P = n_params(config)
    if K * P > cap:
        raise InfeasibleArchitecture(
            f"ensemble needs K * P = {K} * {P} = {K * P} parameters "
            f"(L1 = {config.L1}, k = {config.kmax}, L2 = {config.L2}); the cap is {cap}")


# ---------------------------------------------------------------------------
# Rate sweep


SWEEP_HEADER = ["n", "seed", "L1", "L2", "params_per_net", "empirical_regret", "mc_regret",
                "train_loss"]


@dataclass
class SweepResult:
    rows: list
    summary: list           # (n, median_regret, mean_regret, median_train_loss)
    slope: float
    intercept: float
    timings: list           # (n, seed, wallclock seconds)

    def rows_csv(self) -> str:
        return csv_text(SWEEP_HEADER, self.rows)

    def summary_csv(self) -> str:
        return csv_text(["n", "median_regret", "mean_regret", "median_train_loss"], self.summary)

    def fit_csv(self) -> str:
        return csv_text(["slope", "intercept"], [[self.slope, self.intercept]])

    def timings_csv(self) -> str:
        return csv_text(["n", "seed", "wallclock_s"], self.timings)


def _test_set(cfg: dict):
    s = cfg["sweep"]
    gen = generator_from(cfg, int(s["test_size"]))
    X, _, eta = sample_arrays(gen, np.random.default_rng(int(s["test_seed"])))
    return X, eta


def _sweep_cell(cfg: dict, n: int, seed: int, X_test, eta_test):
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, n])
    gen = generator_from(cfg, n, seed)
    X, y, _ = sample_arrays(gen, rng)
    arch = architecture_for(cfg, n)
    tc = train_config_for(cfg, n, seed)
    w, thetas, trace = sgd_train(list(_samples(X, y)), arch, tc, rng, check_feasible=False)
    pred = classify_many(arch, w, thetas, X_test)
    exact, mc = empirical_regret(lambda Z: pred if Z is X_test else classify_many(arch, w, thetas, Z),
                                 gen.model, X_test, int(cfg["sweep"].get("mc_labels", 0)),
                                 np.random.default_rng([seed, n, 1]))
    train_loss = float(np.mean(trace.loss[-n:]))
    row = [n, seed, arch.L1, arch.L2, n_params(arch), exact, "" if mc is None else mc, train_loss]
    return row, time.perf_counter() - t0


def _samples(X, y):
    from .hmax import LabeledSample
    from .model import ImageGrid

    for i in range(len(y)):
        yield LabeledSample(ImageGrid(X[i]), int(y[i]))


def _cell_star(args):
    return _sweep_cell(*args)


def run_rate_sweep(cfg: dict, base_seed: int = 0, progress=None) -> SweepResult:
    """Train and evaluate one classifier per (n, seed) cell.

    Cells are independent (RNG stream [seed, n]) and are merged in (n, seed)
    order, so the result does not depend on the number of workers.
    """
    s = cfg["sweep"]
    ns = [int(n) for n in s["n"]]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("sweep n values must be strictly increasing")
    seeds = [base_seed + i for i in range(int(s["seeds"]))]
    for n in ns:
        check_feasible(architecture_for(cfg, n), int(cfg["train"]["K"]), int(cfg["max_params"]))
    X_test, eta_test = _test_set(cfg)
    jobs = [(cfg, n, sd, X_test, eta_test) for n in ns for sd in seeds]
    workers = int(s.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_cell_star, jobs))
    else:
        results = []
        for j in jobs:
            results.append(_sweep_cell(*j))
            if progress:
                progress(results[-1][0])
    order = sorted(range(len(jobs)), key=lambda i: (jobs[i][1], jobs[i][2]))
    rows = [results[i][0] for i in order]
    timings = [[jobs[i][1], jobs[i][2], round(results[i][1], 3)] for i in order]
    summary = []
    for n in ns:
        reg = np.array([r[5] for r in rows if r[0] == n])
        loss = np.array([r[7] for r in rows if r[0] == n])
        summary.append([n, float(np.median(reg)), float(np.mean(reg)), float(np.median(loss))])
    med = np.array([r[1] for r in summary])
    if np.all(med > 0) and len(ns) > 1:
        slope, intercept = np.polyfit(np.log(ns), np.log(med), 1)
    else:
        slope = intercept = math.nan
    return SweepResult(rows, summary, float(slope), float(intercept), timings)


def write_sweep(result: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    write_text(out / "sweep.csv", result.rows_csv())
    write_text(out / "sweep_summary.csv", result.summary_csv())
    write_text(out / "sweep_fit.csv", result.fit_csv())
    write_text(out / "timings_sweep.csv", result.timings_csv())


# ---------------------------------------------------------------------------
# Single-run commands


def cmd_generate(cfg: dict, out_dir, seed: int = 0) -> Path:
    from .hmax import save_dataset

    gen = generator_from(cfg, seed=seed)
    X, y, _ = sample_arrays(gen, np.random.default_rng(seed))
    path = Path(out_dir) / "dataset.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(path, gen, X, y)
    write_manifest(out_dir, "generate", cfg, [seed])
    return path


def cmd_train(cfg: dict, out_dir, seed: int = 0) -> Path:
    from .hmax import load_dataset
    from .sgd import save_checkpoint

    if "dataset" not in cfg:
        raise ConfigError("train needs a 'dataset' path in the config")
    header, X, y = load_dataset(cfg["dataset"])
    n = len(y)
    arch = architecture_for(cfg, n)
    tc = train_config_for(cfg, n, seed)
    check_feasible(arch, tc.K, int(cfg["max_params"]))
    rng = np.random.default_rng(seed)
    w, thetas, trace = sgd_train(list(_samples(X, y)), arch, tc, rng)
    path = Path(out_dir) / "checkpoint.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, arch, tc, w, thetas, extra={"n": n, "dataset_seed": header["seed"],
                                                       "model": header["model"].descriptor()})
    epochs = tc.t // n
    write_text(Path(out_dir) / "train_loss.csv",
               csv_text(["epoch", "mean_loss"],
                        [[e + 1, float(np.mean(trace.loss[e * n:(e + 1) * n]))] for e in range(epochs)]))
    write_manifest(out_dir, "train", cfg, [seed])
    return path


def cmd_evaluate(cfg: dict, out_dir, seed: int = 0) -> Path:
    from .sgd import load_checkpoint

    if "checkpoint" not in cfg:
        raise ConfigError("evaluate needs a 'checkpoint' path in the config")
    ck = load_checkpoint(cfg["checkpoint"])
    arch, w, thetas = ck["cnn_config"], ck["w_avg"], ck["thetas"]
    e = cfg["evaluate"]
    gen = generator_from(cfg, int(e["test_size"]))
    X, y, eta = sample_arrays(gen, np.random.default_rng(int(e["test_seed"])))
    exact, mc = empirical_regret(lambda Z: classify_many(arch, w, thetas, Z), gen.model, X,
                                 int(e.get("mc_labels", 0)), np.random.default_rng(seed))
    pred = classify_many(arch, w, thetas, X)
    path = write_text(Path(out_dir) / "evaluate.csv",
                      csv_text(["test_size", "empirical_regret", "mc_regret", "test_error"],
                               [[len(y), exact, "" if mc is None else mc, float(np.mean(pred != y))]]))
    write_manifest(out_dir, "evaluate", cfg, [seed])
    return path


def cmd_bounds(cfg: dict, out_dir, seed: int = 0) -> Path:
    from .bounds import REPORT_HEADER, vc_structural_bound

    b = cfg["bounds"]
    B = float(b["B"])
    arch = architecture_for(cfg, int(cfg["generator"]["n"]))
    reports = [BoundReport("lipschitz_bound", lipschitz_bound(arch, B))]
    if B >= 1:
        reports.append(BoundReport("grad_sup_bound", grad_sup_bound(arch, B)))
    if arch.L1 >= 2 and arch.L2 >= 2:
        reports.append(BoundReport("vc_structural_bound (constant unspecified)",
                                   vc_structural_bound(arch.L1, arch.L2).value))
    reports += bound_reports(seed, int(b["instances"]))
    path = write_text(Path(out_dir) / "bounds.csv",
                      REPORT_HEADER + "".join(r.csv_row() for r in reports))
    write_manifest(out_dir, "bounds", cfg, [seed])
    return path
