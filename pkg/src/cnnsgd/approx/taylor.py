"""Piecewise Taylor networks on a two-level cube partition.

The domain [-a, a)^d is split into M^d coarse cubes of side 2a/M and M^{2d}
fine cubes of side h = 2a/M^2. Inside every coarse cube the fine cubes are
visited along a fixed path; derivative values at consecutive fine corners
are propagated by Taylor steps plus an integer correction b, and the
corrections of one coarse cube are packed into a single base-(4 + 2ceil(e^d))
number. A deep ReLU network then unpacks the digits, locates the fine cube
of x and evaluates the local Taylor polynomial.

Three evaluators of the same quantity are provided:
  * ``TaylorNet.deep``: the ReLU network,
  * ``phi_recursion``: the digit recursion in exact rational arithmetic,
  * ``taylor_direct``: the closed-form local polynomial with propagated
    derivative values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .ffnet import (FeedForwardNet, WeightStats, affine, compose, identity_net,
                    net_weight_stats, pad_depth, parallel, select)
from .gadgets import (build_indicator_net, build_mult_net, build_multd_net, build_poly_net,
                      build_trunc_net, monomials, mult_error_bound, multd_error_bound,
                      multd_threshold, poly_error_bound, test_gadget)


class UnsupportedScaleError(ValueError):
    pass


class SizeConditionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TaylorConfig:
    """Inputs of the construction.

    derivative_oracle(x, l) returns the partial derivative of f with
    multi-index l (a tuple of length d) at the point x (array of length d).
    C is the Hoelder constant of the q-th derivatives; f_norm, when None, is
    estimated on a grid. R_factor multiplies the indicator slope M^(2p+2) and
    so narrows the strip near cube faces where the output is attenuated.
    """
    derivative_oracle: Callable
    d: int = 1
    a: float = 1.0
    M: int = 2
    q: int = 1
    p: float = 2.0
    C: float = 1.0
    f_norm: float | None = None
    tol: float = 1e-9
    R_factor: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise UnsupportedScaleError("only d in {1, 2} is supported")
        if not 0 <= self.q <= 2:
            raise UnsupportedScaleError("only q <= 2 is supported")
        if not 2 <= self.M <= 4:
            raise UnsupportedScaleError("M must lie in {2, 3, 4}")
        if self.a < 1:
            raise ValueError("a must be >= 1")
        if not self.q < self.p <= self.q + 1:
            raise ValueError("need p = q + s with s in (0, 1]")
        if self.C < 0 or self.tol <= 0:
            raise ValueError("C must be >= 0 and tol > 0")
        if self.R_factor < 1:
            raise ValueError("R_factor must be >= 1")
        # digits are peeled off a float by repeated multiplication; the floor
        # gadgets need slopes ~ base^(M^d) so rounding grows like base^(2 M^d)
        if np.finfo(float).eps * float(self.base) ** (2 * (self.M ** self.d - 1)) > 1e-6:
            raise UnsupportedScaleError(
                f"{self.M ** self.d - 1} base-{self.base} digits exceed double precision")

    @property
    def ceil_ed(self) -> int:
        return math.ceil(math.e ** self.d)

    @property
    def base(self) -> int:
        return 4 + 2 * self.ceil_ed

    @property
    def b_max(self) -> int:
        return math.floor(math.e ** self.d + 1)

    @property
    def h(self) -> float:
        return 2.0 * self.a / self.M ** 2

    @property
    def R_ind(self) -> float:
        return self.R_factor * float(self.M) ** (2 * self.p + 2)

    def strip_error_bound(self) -> float:
        """Tent weight times |f| where the check net is between 0 and 1."""
        return 4.0 / (self.h * self.R_ind) * self.f_sup()

    @property
    def multi_indices(self) -> list:
        return monomials(self.d, self.q)

    def c35(self, q: int) -> float:
        return self.d ** (q / 2.0) / math.factorial(q)

    @property
    def c36(self) -> float:
        return self.C * self.d ** self.p * max(self.c35(j) for j in range(self.q + 1))

    def f_sup(self) -> float:
        """max_{|l| <= q} sup |d^l f| on the domain (grid estimate if not given)."""
        if self.f_norm is not None:
            return float(self.f_norm)
        g = np.linspace(-self.a, self.a, 201 if self.d == 1 else 61)
        pts = np.array(np.meshgrid(*[g] * self.d, indexing="ij")).reshape(self.d, -1).T
        return max(abs(self.derivative_oracle(x, l)) for x in pts for l in self.multi_indices)


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """Coarse corners in row-major order and the fine-cube path inside a coarse cube.

    ``offsets[k]`` is the corner of the (k+1)-th fine cube relative to the
    coarse corner; ``steps[k] = offsets[k] - offsets[k-1]`` (steps[0] = 0).
    """
    d: int
    a: float
    M: int
    coarse: np.ndarray
    offsets: np.ndarray
    steps: np.ndarray

    @property
    def H(self) -> float:
        return 2.0 * self.a / self.M

    @property
    def h(self) -> float:
        return 2.0 * self.a / self.M ** 2

    def coarse_index(self, x) -> int:
        k = np.floor((np.asarray(x, dtype=np.float64) + self.a) / self.H).astype(int)
        if np.any(k < 0) or np.any(k >= self.M):
            raise ValueError("point outside [-a, a)^d")
        return int(np.ravel_multi_index(tuple(k), (self.M,) * self.d))

    def fine_position(self, x) -> int:
        """Index k of the fine cube along the path of the coarse cube holding x."""
        x = np.asarray(x, dtype=np.float64)
        rel = x - self.coarse[self.coarse_index(x)]
        cell = np.clip(np.floor(rel / self.h).astype(int), 0, self.M - 1)
        hits = np.nonzero(np.all(np.rint(self.offsets / self.h).astype(int) == cell, axis=1))[0]
        return int(hits[0])


def make_partition(d: int, a: float, M: int) -> Partition:
    H, h = 2.0 * a / M, 2.0 * a / M ** 2
    grid = np.array(list(np.ndindex(*(M,) * d)), dtype=np.float64)
    coarse = -a + H * grid
    if d == 1:
        path = [(k,) for k in range(M)]
    else:
        # snake: sweep the first coordinate, alternate direction per row
        path = []
        for r in range(M):
            cols = range(M) if r % 2 == 0 else range(M - 1, -1, -1)
            path.extend((c, r) for c in cols)
    offsets = h * np.array(path, dtype=np.float64)
    steps = np.vstack([np.zeros(d), np.diff(offsets, axis=0)])
    return Partition(d, float(a), M, coarse, offsets, steps)


def distance_to_fine_faces(part: Partition, x) -> np.ndarray:
    """Distance of each row of x to the nearest face of its fine cube."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rel = (x + part.a) / part.h
    frac = rel - np.floor(rel)
    return np.min(np.minimum(frac, 1.0 - frac), axis=1) * part.h


def interior_points(cfg: TaylorConfig, x, margin: float | None = None) -> np.ndarray:
    """Mask of points in [-a, a)^d at least ``margin`` (default 2/R_ind) from fine faces."""
    part = make_partition(cfg.d, cfg.a, cfg.M)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = 2.0 / cfg.R_ind if margin is None else margin
    inside = np.all((x >= -cfg.a) & (x < cfg.a), axis=1)
    return inside & (distance_to_fine_faces(part, x) >= m)


# ---------------------------------------------------------------------------
# Coefficients


def _lfact(l) -> int:
    return math.prod(math.factorial(v) for v in l)


def _pow(v, s):
    out = 1.0
    for vi, si in zip(v, s):
        out *= vi ** si
    return out


@dataclass(frozen=True)
class Coefficients:
    """b[i, k, j]: correction between fine cubes k and k+1 of coarse cube i for
    multi-index j; fhat[i, k, j]: propagated derivative at the k-th fine corner."""
    b: np.ndarray
    fhat: np.ndarray
    u_max: float


def _shift_terms(ls, q):
    """For each l, the list of (index of l+s, s) with |s| <= q - |l|."""
    pos = {l: i for i, l in enumerate(ls)}
    out = []
    for l in ls:
        terms = []
        for s in ls:
            if sum(s) <= q - sum(l):
                terms.append((pos[tuple(a + b for a, b in zip(l, s))], s))
        out.append(terms)
    return out


def taylor_coefficients(cfg: TaylorConfig, part: Partition | None = None) -> Coefficients:
    """Walk every coarse cube along the fine path choosing integer corrections.

    b = clamp(round(u), +-floor(e^d + 1)) where u is the scaled gap between
    the true derivative and the Taylor-propagated one.
    """
    part = part or make_partition(cfg.d, cfg.a, cfg.M)
    ls = cfg.multi_indices
    J, n = len(ls), cfg.M ** cfg.d
    terms = _shift_terms(ls, cfg.q)
    scale = np.array([cfg.c36 * cfg.h ** (cfg.p - sum(l)) for l in ls])
    b = np.zeros((n, n - 1, J), dtype=np.int64)
    fhat = np.zeros((n, n, J))
    u_max = 0.0
    for i in range(n):
        c0 = part.coarse[i]
        fhat[i, 0] = [cfg.derivative_oracle(c0, l) for l in ls]
        for k in range(n - 1):
            v = part.steps[k + 1]
            nxt = c0 + part.offsets[k + 1]
            for j, l in enumerate(ls):
                pred = sum(fhat[i, k, t] / _lfact(s) * _pow(v, s) for t, s in terms[j])
                if scale[j] > 0:
                    u = (cfg.derivative_oracle(nxt, l) - pred) / scale[j]
                    u_max = max(u_max, abs(u))
                    bb = int(np.clip(np.rint(u), -cfg.b_max, cfg.b_max))
                else:
                    bb = 0
                b[i, k, j] = bb
                fhat[i, k + 1, j] = pred + bb * scale[j]
    return Coefficients(b, fhat, u_max)


def encode_digits(cfg: TaylorConfig, b_row, guard: bool = False) -> Fraction:
    """sum_k (b_k + ceil(e^d) + 2) base^-k, optionally plus half a digit after the last one."""
    B = cfg.base
    val = sum(Fraction(int(bk) + cfg.ceil_ed + 2, B ** (k + 1)) for k, bk in enumerate(b_row))
    if guard:
        val += Fraction(1, 2 * B ** len(b_row))
    return val


# ---------------------------------------------------------------------------
# Arithmetic oracles


def taylor_direct(cfg: TaylorConfig, coef: Coefficients, x, part: Partition | None = None) -> float:
    """Local Taylor polynomial at the fine corner of x with propagated derivatives."""
    part = part or make_partition(cfg.d, cfg.a, cfg.M)
    x = np.asarray(x, dtype=np.float64).reshape(cfg.d)
    i = part.coarse_index(x)
    k = part.fine_position(x)
    corner = part.coarse[i] + part.offsets[k]
    return float(sum(coef.fhat[i, k, j] / _lfact(l) * _pow(x - corner, l)
                     for j, l in enumerate(cfg.multi_indices)))


def phi_recursion(cfg: TaylorConfig, coef: Coefficients, x, part: Partition | None = None) -> float:
    """The six-component recursion with exact indicators and exact floors (rational arithmetic)."""
    part = part or make_partition(cfg.d, cfg.a, cfg.M)
    ls = cfg.multi_indices
    J, n, d = len(ls), cfg.M ** cfg.d, cfg.d
    terms = _shift_terms(ls, cfg.q)
    F = Fraction
    xf = [F(float(v)) for v in np.asarray(x, dtype=np.float64).reshape(d)]
    H, h = F(part.H), F(part.h)
    B = cfg.base
    shift = cfg.ceil_ed + 2
    scale = [F(cfg.c36 * cfg.h ** (cfg.p - sum(l))) for l in ls]
    phi2 = [F(0)] * d
    phi3 = [F(0)] * J
    phi4 = [F(0)] * J
    for jcell in range(n):
        left = [F(float(v)) for v in part.coarse[jcell]]
        ind = all(left[t] <= xf[t] < left[t] + H for t in range(d))
        if ind:
            phi2 = [phi2[t] + left[t] for t in range(d)]
            phi3 = [phi3[j] + F(cfg.derivative_oracle(part.coarse[jcell], l))
                    for j, l in enumerate(ls)]
            phi4 = [phi4[j] + encode_digits(cfg, coef.b[jcell, :, j]) for j in range(J)]
    steps = [[F(float(s)) for s in row] for row in part.steps]
    phi5 = [F(0)] * d
    phi6 = [F(0)] * J
    for j in range(1, n + 1):
        inA = all(phi2[t] <= xf[t] < phi2[t] + h for t in range(d))
        new5 = [phi5[t] + (phi2[t] if inA else 0) for t in range(d)]
        new6 = [phi6[i] + (phi3[i] if inA else 0) for i in range(J)]
        if j < n:
            v = steps[j]
            new3, new4 = [], []
            for i, l in enumerate(ls):
                z = B * phi4[i]
                fl = math.floor(z)
                acc = sum(phi3[t] / _lfact(s) * math.prod(v[c] ** s[c] for c in range(d))
                          for t, s in terms[i])
                new3.append(acc + (fl - shift) * scale[i])
                new4.append(z - fl)
            phi2 = [phi2[t] + v[t] for t in range(d)]
            phi3, phi4 = new3, new4
        phi5, phi6 = new5, new6
    z = [xf[t] - phi5[t] for t in range(d)]
    out = sum(phi6[i] / _lfact(l) * math.prod(z[c] ** l[c] for c in range(d))
              for i, l in enumerate(ls))
    return float(out)


# ---------------------------------------------------------------------------
# Network construction


class _State:
    """Named slices of the state vector carried between stages."""

    def __init__(self, sizes):
        self.idx = {}
        pos = 0
        for name, size in sizes:
            self.idx[name] = list(range(pos, pos + size))
            pos += size
        self.n = pos

    def __getitem__(self, name):
        return self.idx[name]


def _stage(n: int, branches, out_rows, out_bias=None) -> FeedForwardNet:
    """Depth-2 stage: identity rails for the whole state plus gadget branches.

    ``out_rows`` has shape (n_out, n + total branch outputs): the new state
    is a linear function of the carried state and the branch outputs.
    """
    nets = [identity_net(n, 2)] + [pad_depth(br, 2) for br in branches]
    body = parallel(nets)
    return compose(affine(out_rows, out_bias), body)


def _embed(n: int, cols: dict, bias=None) -> FeedForwardNet:
    """Affine map from the state: {output_row: {state_index: coefficient}}."""
    A = np.zeros((len(cols), n))
    for r, row in cols.items():
        for c, v in row.items():
            A[r, c] += v
    return affine(A, bias)


@dataclass
class TaylorNet:
    cfg: TaylorConfig
    net: FeedForwardNet          # approximates w(x) * f(x)
    deep: FeedForwardNet         # approximates the local Taylor polynomial
    weight: FeedForwardNet       # approximates the tent weight w(x)
    check: FeedForwardNet        # 1 near fine faces, 0 well inside
    certificate: WeightStats
    certificate_c: float
    coefficients: Coefficients
    partition: Partition
    R: dict
    B_true: float
    size_condition: dict
    error_budget: float = field(default=0.0)

    def oracle(self, x) -> float:
        return phi_recursion(self.cfg, self.coefficients, x, self.partition)

    def direct(self, x) -> float:
        return taylor_direct(self.cfg, self.coefficients, x, self.partition)


def _size_condition(cfg: TaylorConfig, fs: float) -> dict:
    """The lower bound on M^{2p} (unspecified constants set to 1)."""
    q, d = cfg.q, cfg.d
    rhs = (2.0 ** (4 * (q + 1) + 1)
           * max((6 + 2 * cfg.ceil_ed) ** (4 * (q + 1)), cfg.c36 * math.e ** d)
           * max(cfg.a, fs) ** (4 * (q + 1)))
    lhs = float(cfg.M) ** (2 * cfg.p)
    return {"lhs": lhs, "rhs": rhs, "holds": lhs >= rhs}


def _smallest_R(bound: Callable[[int], float], tol: float, lo: int) -> int:
    R = max(1, lo)
    while bound(R) > tol:
        R += 1
    return R


def build_taylor_net(cfg: TaylorConfig) -> TaylorNet:
    """Assemble mult(true(x), w(x)) with true = deep Taylor net gated by the check net."""
    d, M, q = cfg.d, cfg.M, cfg.q
    part = make_partition(d, cfg.a, M)
    coef = taylor_coefficients(cfg, part)
    ls = cfg.multi_indices
    J, n = len(ls), M ** d
    fs = cfg.f_sup()
    size = _size_condition(cfg, fs)
    if not size["holds"]:
        warnings.warn(f"size condition unmet: M^(2p) = {size['lhs']:.3g} < {size['rhs']:.3g}",
                      SizeConditionWarning, stacklevel=2)
    Rind = cfg.R_ind
    h = cfg.h
    base = cfg.base
    shift = cfg.ceil_ed + 2
    scale = [cfg.c36 * h ** (cfg.p - sum(l)) for l in ls]
    terms = _shift_terms(ls, q)

    S = _State([("x", d), ("p2", d), ("p3", J), ("p4", J), ("f1", 1),
                ("p5", d), ("p6", J), ("chk", 1)])
    init = np.zeros((S.n, d))
    init[S["x"], range(d)] = 1.0
    bias0 = np.zeros(S.n)
    bias0[S["f1"][0]] = 1.0
    stages = [affine(init, bias0)]

    # phase 1: coarse cube lookup
    for jc in range(n):
        lo = part.coarse[jc]
        hi = lo + part.H
        sel_x = select(S.n, S["x"])
        ind = compose(build_indicator_net(lo, hi, Rind), sel_x)
        ind_in = compose(build_indicator_net(lo + 1.0 / Rind, hi - 1.0 / Rind, Rind), sel_x)
        digits = [float(encode_digits(cfg, coef.b[jc, :, j], guard=True)) for j in range(J)]
        W = np.zeros((S.n, S.n + 2))
        W[:, :S.n] = np.eye(S.n)
        gi, go = S.n, S.n + 1
        for t in range(d):
            W[S["p2"][t], gi] = lo[t]
        for j, l in enumerate(ls):
            W[S["p3"][j], gi] = cfg.derivative_oracle(lo, l)
            W[S["p4"][j], gi] = digits[j]
        W[S["f1"][0], go] = -1.0
        stages.append(_stage(S.n, [ind, ind_in], W))

    # phase 2: walk the fine path, peel digits, collect the active fine cube
    for j in range(1, n + 1):
        branches = []
        cols = []
        p2 = S["p2"]

        def box_test(s_col, lo_off, hi_off, s_const=0.0):
            rows = {}
            for t in range(d):
                rows[t] = {S["x"][t]: 1.0}
                rows[d + t] = {p2[t]: 1.0}
                rows[2 * d + t] = {p2[t]: 1.0}
            rows[3 * d] = {} if s_col is None else {s_col: 1.0}
            bias = np.concatenate([np.zeros(d), np.full(d, lo_off), np.full(d, hi_off), [s_const]])
            return compose(test_gadget(d, Rind), _embed(S.n, rows, bias))

        for t in range(d):
            branches.append(box_test(p2[t], 0.0, h))
            cols.append(("p5", t))
        for i in range(J):
            branches.append(box_test(S["p3"][i], 0.0, h))
            cols.append(("p6", i))
        branches.append(box_test(None, 1.0 / Rind, h - 1.0 / Rind, 1.0))
        cols.append(("chk", 0))
        if j < n:
            R_j = 4.0 * base ** (n - j - 1)
            tr = build_trunc_net(R_j, base)
            for i in range(J):
                branches.append(compose(tr, _embed(S.n, {0: {S["p4"][i]: float(base)}})))
                cols.append(("trunc", i))
        W = np.zeros((S.n, S.n + len(branches)))
        bias = np.zeros(S.n)
        for name in ("x", "p5", "p6", "chk", "f1"):
            for r in S[name]:
                W[r, r] = 1.0
        if j < n:
            v = part.steps[j]
            for t in range(d):
                W[p2[t], p2[t]] = 1.0
                bias[p2[t]] = v[t]
            for i, l in enumerate(ls):
                for tidx, s in terms[i]:
                    W[S["p3"][i], S["p3"][tidx]] += _pow(v, s) / _lfact(s)
                W[S["p4"][i], S["p4"][i]] = float(base)
                bias[S["p3"][i]] = -shift * scale[i]
        for c, (name, i) in enumerate(cols):
            col = S.n + c
            if name == "trunc":
                W[S["p3"][i], col] = scale[i]
                W[S["p4"][i], col] = -1.0
            else:
                W[S[name][i], col] = 1.0
        stages.append(_stage(S.n, branches, W, bias))

    core = stages[0]
    for st in stages[1:]:
        core = compose(st, core)

    # heads on the final state
    fh = coef.fhat
    a_poly = max(1.0, h, float(np.abs(fh).max()))
    r = [1.0 / _lfact(l) for l in ls]
    B_Mp = math.ceil((2 * cfg.p + 4 * d * (q + 1)) * math.log(M, 4)
                     + 4 * (q + 1) * (n - 1) / math.log(4))
    R_poly = _smallest_R(lambda R: poly_error_bound(R, q, d, r, a_poly), cfg.tol / 4,
                         max(B_Mp, math.ceil(multd_threshold(q + 1, a_poly))))
    zsel = {}
    for t in range(d):
        zsel[t] = {S["x"][t]: 1.0, S["p5"][t]: -1.0}
    for i in range(J):
        zsel[d + i] = {S["p6"][i]: 1.0}
    deep_head = compose(build_poly_net(R_poly, q, d, r, a_poly), _embed(S.n, zsel))

    kM = M ** 2 / cfg.a
    tent_in = np.zeros((3 * d, S.n + 1))
    tent_out = np.zeros((d, 3 * d + 1))
    for t in range(d):
        for m, (off, w) in enumerate(((0.0, 1.0), (-1.0, -2.0), (-2.0, 1.0))):
            row = 3 * t + m
            tent_in[row, 1 + S["x"][t]] = kM
            tent_in[row, 1 + S["p5"][t]] = -kM
            tent_in[row, 0] = off
            tent_out[t, 1 + row] = w
    tents = FeedForwardNet([tent_in, tent_out])
    R_w = 0
    if d == 1:
        w_head = tents
    else:
        R_w = _smallest_R(lambda R: multd_error_bound(R, d, 1.0), cfg.tol / 4,
                          max(math.ceil(2 * cfg.p * math.log(M, 4)),
                              math.ceil(multd_threshold(d, 1.0))))
        w_head = compose(build_multd_net(R_w, d, 1.0), tents)

    chk_first = np.zeros((1, S.n + 1))
    chk_first[0, 1 + S["chk"][0]] = 1.0
    chk_first[0, 1 + S["f1"][0]] = -float(n)
    chk_head = FeedForwardNet([chk_first, np.array([[1.0, -1.0]]), np.array([[0.0, 1.0]])])

    depth = max(deep_head.depth, w_head.depth, chk_head.depth)
    heads = parallel([pad_depth(deep_head, depth), pad_depth(w_head, depth),
                      pad_depth(chk_head, depth)])
    trio = compose(heads, core)  # (f_deep, w, check)

    B_true = 1.0 + (fs * math.e ** (n - 1) + base * (n - 1) * math.e ** (n - 2)) * math.e ** (2 * cfg.a * d)
    gate = FeedForwardNet([
        np.array([[0.0, 1.0, 0.0, -B_true], [0.0, -1.0, 0.0, -B_true],
                  [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, -1.0, 0.0]]),
        np.array([[0.0, 1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, -1.0]]),
    ])
    R_mult = _smallest_R(lambda R: mult_error_bound(R, B_true), cfg.tol / 4,
                         math.ceil(2 * cfg.p * math.log(M, 4)))
    net = compose(build_mult_net(R_mult, B_true), compose(gate, trio))

    pick = lambda k: compose(affine(np.eye(3)[k:k + 1]), trio)  # noqa: E731
    stats = net_weight_stats(net)
    c_cert = math.log(max(stats.sup_norm, 1.0)) / ((cfg.p + 1) * n)
    budget = (poly_error_bound(R_poly, q, d, r, a_poly) + mult_error_bound(R_mult, B_true)
              + (B_true * multd_error_bound(R_w, d, 1.0) if d > 1 else 0.0))
    return TaylorNet(cfg=cfg, net=net, deep=compose(deep_head, core), weight=pick(1),
                     check=pick(2), certificate=stats, certificate_c=c_cert, coefficients=coef,
                     partition=part,
                     R={"ind": Rind, "poly": R_poly, "weight": R_w, "mult": R_mult, "B_Mp": B_Mp},
                     B_true=B_true, size_condition=size, error_budget=budget)


# ---------------------------------------------------------------------------
# Tent weights and shifted partitions


def bspline_weight(cfg: TaylorConfig, x, shift=None) -> np.ndarray:
    """Tensor-product tent on the fine cube of x - shift, peaking at its center."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s = np.zeros(cfg.d) if shift is None else np.asarray(shift, dtype=np.float64)
    u = x - s
    h = cfg.h
    left = -cfg.a + np.floor((u + cfg.a) / h) * h
    return np.prod(np.maximum(1.0 - (2.0 / h) * np.abs(left + h / 2.0 - u), 0.0), axis=1)


def partition_shifts(cfg: TaylorConfig) -> np.ndarray:
    """The 2^d shift vectors with entries in {0, h/2}."""
    return np.array(list(np.ndindex(*(2,) * cfg.d)), dtype=np.float64) * (cfg.h / 2.0)


@dataclass
class ShiftedCombination:
    """Sum of the 2^d weighted networks, each evaluated on x - shift.

    Valid on [-a + h/2, a)^d where every shifted grid covers x and the tent
    weights form a partition of unity.
    """
    cfg: TaylorConfig
    shifts: np.ndarray
    nets: list

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return sum(tn.net(x - s)[:, 0] for s, tn in zip(self.shifts, self.nets))

    def weight_sum(self, x) -> np.ndarray:
        return sum(bspline_weight(self.cfg, x, s) for s in self.shifts)

    def valid(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.all((x >= -self.cfg.a + self.cfg.h / 2.0) & (x < self.cfg.a), axis=1)


def shifted_configs(cfg: TaylorConfig) -> list:
    """Configs for g_s(u) = f(u + s), one per shift."""
    out = []
    for s in partition_shifts(cfg):
        oracle = (lambda s_: (lambda u, l: cfg.derivative_oracle(np.asarray(u) + s_, l)))(s.copy())
        out.append(TaylorConfig(oracle, cfg.d, cfg.a, cfg.M, cfg.q, cfg.p, cfg.C,
                                cfg.f_sup(), cfg.tol, cfg.R_factor))
    return out


def shifted_partition_combine(nets, cfg: TaylorConfig | None = None) -> ShiftedCombination:
    """Combine 2^d TaylorNets built by ``shifted_configs`` (same order as partition_shifts)."""
    nets = list(nets)
    cfg = cfg or nets[0].cfg
    shifts = partition_shifts(cfg)
    if len(nets) != len(shifts):
        raise ValueError(f"expected {len(shifts)} networks, got {len(nets)}")
    return ShiftedCombination(cfg, shifts, nets)


def build_shifted_taylor(cfg: TaylorConfig) -> ShiftedCombination:
    return shifted_partition_combine([build_taylor_net(c) for c in shifted_configs(cfg)], cfg)
