"""ReLU gadgets: tooth, square, product, polynomial, indicator, test, floor.

Each builder returns an explicit FeedForwardNet. Error and weight bounds
are exposed as companion functions so tests can compare measured values
against the stated formulas.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .ffnet import FeedForwardNet, affine, compose, identity_net, parallel, select


class PreconditionError(ValueError):
    pass


def tooth_net() -> FeedForwardNet:
    """g(x) = 2 sigma(x) - 4 sigma(x - 1/2) + 2 sigma(x - 1)."""
    first = np.array([[0.0, 1.0], [-0.5, 1.0], [-1.0, 1.0]])
    last = np.array([[0.0, 2.0, -4.0, 2.0]])
    return FeedForwardNet([first, last])


def _square_layers(R: int, scale: float, shift: float, x_rails: bool):
    """Hidden layers of the scaled tooth cascade.

    Neuron order per layer: u+, u-, A, B, C, acc+, acc- [, x+, x-] where
    u = scale * x + shift, (A, B, C) are the three tooth neurons whose
    combination A/2 - B + C/2 equals g_l(u) / 4^l, and acc = -sum_{s<l} g_s(u)/4^s.
    """
    w = 9 if x_rails else 7
    first = np.zeros((w, 2))
    first[0] = (shift, scale)
    first[1] = (-shift, -scale)
    first[2] = (shift, scale)
    first[3] = (shift - 0.5, scale)
    first[4] = (shift - 1.0, scale)
    if x_rails:
        first[7] = (0.0, 1.0)
        first[8] = (0.0, -1.0)
    layers = [first]
    tooth = np.array([0.5, -1.0, 0.5])
    for l in range(1, R):
        V = np.zeros((w, w + 1))
        V[0, 1:3] = (1.0, -1.0)
        V[1, 1:3] = (-1.0, 1.0)
        for r, off in zip((2, 3, 4), (0.0, 0.5 * 4.0 ** -l, 4.0 ** -l)):
            V[r, 0] = -off
            V[r, 3:6] = tooth
        V[5, 6:8] = (1.0, -1.0)
        V[5, 3:6] = -tooth
        V[6, 6:8] = (-1.0, 1.0)
        V[6, 3:6] = tooth
        if x_rails:
            V[7, 8:10] = (1.0, -1.0)
            V[8, 8:10] = (-1.0, 1.0)
        layers.append(V)
    return layers


def square01_net(R: int) -> FeedForwardNet:
    """S_R(u) = u - sum_{s=1}^R g_s(u)/4^s on [0, 1]; all weights bounded by 1."""
    if R < 1:
        raise PreconditionError("R must be >= 1")
    layers = _square_layers(R, 1.0, 0.0, False)
    out = np.zeros((1, 8))
    out[0, 1:3] = (1.0, -1.0)
    out[0, 3:6] = (-0.5, 1.0, -0.5)
    out[0, 6:8] = (1.0, -1.0)
    return FeedForwardNet(layers + [out])


def build_square_net(R: int, a: float = 1.0) -> FeedForwardNet:
    """Approximates x^2 on [-a, a] with error <= a^2 4^-R via
    4a^2 S_R(x/(2a) + 1/2) - (2a x + a^2). Width 9, depth R."""
    if R < 1 or a < 1:
        raise PreconditionError("need R >= 1 and a >= 1")
    layers = _square_layers(R, 1.0 / (2.0 * a), 0.5, True)
    c = 4.0 * a * a
    out = np.zeros((1, 10))
    out[0, 0] = -a * a
    out[0, 1:3] = (c, -c)
    out[0, 3:6] = (-0.5 * c, c, -0.5 * c)
    out[0, 6:8] = (c, -c)
    out[0, 8:10] = (-2.0 * a, 2.0 * a)
    return FeedForwardNet(layers + [out])


def square_error_bound(R: int, a: float) -> float:
    return a * a * 4.0 ** -R


def build_mult_net(R: int, a: float = 1.0) -> FeedForwardNet:
    """xy ~ (sq(x + y) - sq(x - y)) / 4 on [-a, a]^2, sq built for [-2a, 2a].

    Error <= 2 a^2 4^-R, sup weight <= 4 a^2, output offset exactly 0.
    """
    if R < 1 or a < 1:
        raise PreconditionError("need R >= 1 and a >= 1")
    sq = build_square_net(R, 2.0 * a)
    both = parallel([compose(sq, affine([[1.0, 1.0]])), compose(sq, affine([[1.0, -1.0]]))])
    net = compose(affine([[0.25, -0.25]]), both)
    net.weights[-1][0, 0] = 0.0  # the two offsets cancel exactly
    return net


def mult_error_bound(R: int, a: float) -> float:
    return 2.0 * a * a * 4.0 ** -R


def multd_threshold(d: int, a: float) -> float:
    return math.log(2.0 * 4.0 ** (2 * d) * a ** (2 * d), 4)


def _tree_levels(d: int) -> int:
    return max(1, math.ceil(math.log2(d))) if d > 1 else 1


def build_multd_net(R: int, d: int, a: float = 1.0, check: bool = True) -> FeedForwardNet:
    """Product of d inputs in [-a, a] by a binary tree of product gadgets.

    Inputs are padded with constant ones to 2^q leaves, q = max(1, ceil(log2 d)).
    Level t multiplies numbers bounded by a_t where a_1 = a and
    a_{t+1} = a_t^2 + 1, which stays below 4^d a^d.
    """
    if d < 1:
        raise PreconditionError("d must be >= 1")
    if check and R < multd_threshold(d, a):
        raise PreconditionError(
            f"R = {R} is below the required threshold {multd_threshold(d, a):.4f}")
    q = _tree_levels(d)
    leaves = 2 ** q
    net = select(d, list(range(d)) + [None] * (leaves - d), [0.0] * d + [1.0] * (leaves - d))
    at = float(a)
    width = leaves
    for _ in range(q):
        m = build_mult_net(R, at)
        pairs = [compose(m, select(width, [2 * i, 2 * i + 1])) for i in range(width // 2)]
        net = compose(parallel(pairs), net)
        width //= 2
        at = at * at + 1.0
    return net


def multd_error_bound(R: int, d: int, a: float) -> float:
    return 4.0 ** (4 * d + 1) * a ** (4 * d) * d * 4.0 ** -R


def multd_weight_bound(d: int, a: float) -> float:
    return 4.0 * 4.0 ** (2 * d) * a ** (2 * d)


def monomials(d: int, N: int) -> list:
    """Exponent tuples of all monomials of degree <= N in d variables,
    graded lexicographic order (degree first, then lexicographic descending)."""
    out = []
    for deg in range(N + 1):
        deg_terms = [e for e in itertools.product(range(deg, -1, -1), repeat=d) if sum(e) == deg]
        out.extend(sorted(deg_terms, reverse=True))
    return out


def build_poly_net(R: int, N: int, d: int, coefficients, a: float = 1.0,
                   check: bool = True) -> FeedForwardNet:
    """Network for p(x, y) = sum_i r_i y_i m_i(x) with inputs (x_1..x_d, y_1..y_J).

    m_i runs over monomials of degree <= N in graded lexicographic order. Each
    term is a product of N + 1 factors (y_i, the x factors, ones as padding).
    """
    mons = monomials(d, N)
    r = np.asarray(coefficients, dtype=np.float64)
    if r.shape != (len(mons),):
        raise ValueError(f"need {len(mons)} coefficients, got {r.shape}")
    if check and R < multd_threshold(N + 1, a):
        raise PreconditionError(
            f"R = {R} is below the required threshold {multd_threshold(N + 1, a):.4f}")
    n_in = d + len(mons)
    terms = []
    for i, e in enumerate(mons):
        idx = [d + i] + [k for k in range(d) for _ in range(e[k])]
        idx += [None] * (N + 1 - len(idx))
        sel = select(n_in, idx, [1.0] * len(idx))
        terms.append(compose(build_multd_net(R, N + 1, a, check=False), sel))
    return compose(affine(r[None, :]), parallel(terms))


def poly_error_bound(R: int, N: int, d: int, coefficients, a: float) -> float:
    """Sum of the per-term product bounds weighted by |r_i|."""
    r = np.abs(np.asarray(coefficients, dtype=np.float64))
    return float(r.sum() * multd_error_bound(R, N + 1, a))


def build_indicator_net(a_vec, b_vec, R: float) -> FeedForwardNet:
    """sigma(1 - R sum_i (sigma(a_i + 1/R - x_i) + sigma(x_i - b_i + 1/R))).

    Equals 1_{[a, b)}(x) whenever every coordinate is at least 1/R away
    from both a_i and b_i (up to the half-open convention at the edges).
    """
    a = np.atleast_1d(np.asarray(a_vec, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b_vec, dtype=np.float64))
    d = a.size
    if np.any(b - a < 2.0 / R):
        raise PreconditionError("box side must be at least 2/R")
    first = np.zeros((2 * d, d + 1))
    for i in range(d):
        first[2 * i, 0] = a[i] + 1.0 / R
        first[2 * i, 1 + i] = -1.0
        first[2 * i + 1, 0] = -b[i] + 1.0 / R
        first[2 * i + 1, 1 + i] = 1.0
    second = np.column_stack([[1.0], np.full((1, 2 * d), -float(R))])
    out = np.array([[0.0, 1.0]])
    return FeedForwardNet([first, second, out])


def indicator_weight_bound(a_vec, b_vec, R: float) -> float:
    a = np.abs(np.atleast_1d(a_vec)).max()
    b = np.abs(np.atleast_1d(b_vec)).max()
    return max(a + 1.0 / R, b + 1.0 / R, float(R))


def test_gadget(d: int, R: float) -> FeedForwardNet:
    """Network of (x, a, b, s) in R^{3d+1} computing
    sigma(s - R^2 S) - sigma(-s - R^2 S), S = sum_i sigma(a_i + 1/R - x_i) + sigma(x_i - b_i + 1/R).

    Equals s 1_{[a, b)}(x) on points 1/R away from the box faces when |s| <= R.
    """
    n = 3 * d + 1
    first = np.zeros((2 * d + 2, n + 1))
    for i in range(d):
        first[2 * i, 0] = 1.0 / R
        first[2 * i, 1 + d + i] = 1.0
        first[2 * i, 1 + i] = -1.0
        first[2 * i + 1, 0] = 1.0 / R
        first[2 * i + 1, 1 + i] = 1.0
        first[2 * i + 1, 1 + 2 * d + i] = -1.0
    first[2 * d, n] = 1.0
    first[2 * d + 1, n] = -1.0
    R2 = float(R) ** 2
    second = np.zeros((2, 2 * d + 3))
    second[0, 1:2 * d + 1] = -R2
    second[0, 2 * d + 1:2 * d + 3] = (1.0, -1.0)
    second[1, 1:2 * d + 1] = -R2
    second[1, 2 * d + 1:2 * d + 3] = (-1.0, 1.0)
    out = np.array([[0.0, 1.0, -1.0]])
    return FeedForwardNet([first, second, out])


def build_test_net(a_vec, b_vec, s: float, R: float) -> FeedForwardNet:
    """test_gadget with a fixed box [a, b) and scale s: input x only."""
    a = np.atleast_1d(np.asarray(a_vec, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b_vec, dtype=np.float64))
    d = a.size
    if np.any(b - a < 2.0 / R):
        raise PreconditionError("box side must be at least 2/R")
    if abs(s) > R:
        raise PreconditionError("|s| must not exceed R")
    A = np.vstack([np.eye(d), np.zeros((2 * d + 1, d))])
    c = np.concatenate([np.zeros(d), a, b, [s]])
    return compose(test_gadget(d, R), affine(A, c))


def build_trunc_net(R: float, B: int) -> FeedForwardNet:
    """floor(z) on [0, B + 1) away from the integers by 1/R:
    sum_{j=1}^B R sigma(z - j) - R sigma(z - j - 1/R)."""
    if R <= 0 or B < 1:
        raise PreconditionError("need R > 0 and B >= 1")
    first = np.zeros((2 * B, 2))
    out = np.zeros((1, 2 * B + 1))
    for j in range(1, B + 1):
        first[2 * (j - 1)] = (-j, 1.0)
        first[2 * (j - 1) + 1] = (-j - 1.0 / R, 1.0)
        out[0, 1 + 2 * (j - 1)] = R
        out[0, 2 + 2 * (j - 1)] = -R
    return FeedForwardNet([first, out])


def trunc_weight_bound(R: float, B: int) -> float:
    return max(float(R), B + 1.0 / R)


def in_safe_region(z, R: float, B: int) -> np.ndarray:
    """z in [0, B+1) with distance >= 1/R from every positive integer."""
    z = np.asarray(z, dtype=np.float64)
    ints = np.arange(1, B + 2)
    dist = np.min(np.abs(z[..., None] - ints), axis=-1)
    return (z >= 0) & (z < B + 1) & (dist >= 1.0 / R)
