"""Explicit fully connected ReLU networks and their algebra.

A network with depth L stores L + 1 weight matrices. ``V[l]`` has shape
(k_{l+1}, k_l + 1); column 0 holds the offsets. Hidden layers apply ReLU,
the last matrix is an affine read-out (possibly multi-dimensional while
networks are being assembled). Depth 0 means a plain affine map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class FeedForwardNet:
    weights: list

    def __post_init__(self):
        self.weights = [np.array(v, dtype=np.float64) for v in self.weights]
        if not self.weights:
            raise ValueError("a network needs at least the output layer")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0] + 1:
                raise ValueError("layer shapes are inconsistent")

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1] - 1

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list:
        """k_0 (input), k_1..k_L (hidden) and the output dimension."""
        return [self.n_in] + [v.shape[0] for v in self.weights]

    def __call__(self, x) -> np.ndarray:
        """Evaluate on x of shape (n_in,) or (n, n_in); returns (..., n_out)."""
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.n_in:
            raise ValueError(f"expected input dimension {self.n_in}, got {h.shape[-1]}")
        for v in self.weights[:-1]:
            h = np.maximum(h @ v[:, 1:].T + v[:, 0], 0.0)
        v = self.weights[-1]
        return h @ v[:, 1:].T + v[:, 0]


def eval_ffnet(net: FeedForwardNet, x):
    """Scalar output for one input vector; array of outputs otherwise."""
    out = net(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    if out.ndim == 1 and out.shape[0] == 1:
        return float(out[0])
    if out.ndim == 2 and out.shape[1] == 1:
        return out[:, 0]
    return out


@dataclass(frozen=True)
class WeightStats:
    sup_norm: float
    output_offset: float
    input_layer_sup: float
    output_layer_sup: float
    input_layer_sup_nooffset: float
    output_layer_sup_nooffset: float


def net_weight_stats(net: FeedForwardNet) -> WeightStats:
    """Exact maxima of |weight| over the whole net and over its first/last layers."""
    first, last = net.weights[0], net.weights[-1]
    return WeightStats(
        sup_norm=max(float(np.abs(v).max(initial=0.0)) for v in net.weights),
        output_offset=float(last[0, 0]),
        input_layer_sup=float(np.abs(first).max(initial=0.0)),
        output_layer_sup=float(np.abs(last).max(initial=0.0)),
        input_layer_sup_nooffset=float(np.abs(first[:, 1:]).max(initial=0.0)),
        output_layer_sup_nooffset=float(np.abs(last[:, 1:]).max(initial=0.0)),
    )


def eval_exact(net: FeedForwardNet, x) -> list:
    """Evaluate in rational arithmetic; weights and inputs are converted exactly.

    ``x`` of shape (n_in,) gives one list of output Fractions; shape
    (n, n_in) gives a list of such lists.
    """
    from fractions import Fraction

    X = np.asarray(x, dtype=np.float64)
    single = X.ndim <= 1
    X = np.atleast_2d(X.reshape(-1)) if single else X
    if X.shape[1] != net.n_in:
        raise ValueError(f"expected input dimension {net.n_in}, got {X.shape[1]}")
    rows = [[(Fraction(float(r[0])), [(j, Fraction(float(w))) for j, w in enumerate(r[1:]) if w != 0])
             for r in v] for v in net.weights]
    zero = Fraction(0)
    out = []
    for xv in X:
        h = [Fraction(float(u)) for u in xv]
        for V in rows[:-1]:
            h = [max(b + sum(w * h[j] for j, w in r), zero) for b, r in V]
        out.append([b + sum(w * h[j] for j, w in r) for b, r in rows[-1]])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Algebra


def affine(A, b=None) -> FeedForwardNet:
    """Depth-0 network x -> A x + b."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=np.float64).reshape(-1)
    return FeedForwardNet([np.column_stack([b, A])])


def compose(outer: FeedForwardNet, inner: FeedForwardNet) -> FeedForwardNet:
    """outer(inner(x)), merging inner's read-out into outer's first layer.

    Depth is the sum of both depths. The merged layer's weights are the
    products (outer first layer) x (inner read-out).
    """
    if outer.n_in != inner.n_out:
        raise ValueError(f"cannot feed {inner.n_out} outputs into {outer.n_in} inputs")
    lo = inner.weights[-1]
    fi = outer.weights[0]
    W = fi[:, 1:]
    merged = np.column_stack([fi[:, 0] + W @ lo[:, 0], W @ lo[:, 1:]])
    return FeedForwardNet(inner.weights[:-1] + [merged] + outer.weights[1:])


def parallel(nets, n_in: int | None = None) -> FeedForwardNet:
    """Stack equal-depth networks that read the same input; outputs concatenate."""
    nets = list(nets)
    L = nets[0].depth
    if any(n.depth != L for n in nets):
        raise ValueError("parallel networks must share depth")
    k0 = nets[0].n_in if n_in is None else n_in
    if any(n.n_in != k0 for n in nets):
        raise ValueError("parallel networks must share the input dimension")
    layers = [np.vstack([n.weights[0] for n in nets])]
    for l in range(1, L + 1):
        rows = sum(n.weights[l].shape[0] for n in nets)
        cols = sum(n.weights[l].shape[1] - 1 for n in nets)
        V = np.zeros((rows, cols + 1))
        r = c = 0
        for n in nets:
            v = n.weights[l]
            V[r:r + v.shape[0], 0] = v[:, 0]
            V[r:r + v.shape[0], 1 + c:1 + c + v.shape[1] - 1] = v[:, 1:]
            r += v.shape[0]
            c += v.shape[1] - 1
        layers.append(V)
    return FeedForwardNet(layers)


def compose_nets(f0: FeedForwardNet, parts) -> FeedForwardNet:
    """f0(f_1(x), ..., f_k(x)) for parts of equal depth and input dimension."""
    parts = list(parts)
    if len(parts) != f0.n_in:
        raise ValueError(f"f0 takes {f0.n_in} inputs but {len(parts)} parts were given")
    if len({p.depth for p in parts}) != 1:
        raise ValueError("parts must share depth")
    return compose(f0, parallel(parts))


def identity_net(m: int = 1, t: int = 1) -> FeedForwardNet:
    """f_id^t on R^m: t hidden layers holding sigma(z) and sigma(-z)."""
    if t < 1:
        return affine(np.eye(m))
    I = np.eye(m)
    first = np.column_stack([np.zeros(2 * m), np.vstack([I, -I])])
    mid = np.column_stack([np.zeros(2 * m), np.block([[I, -I], [-I, I]])])
    last = np.column_stack([np.zeros(m), np.hstack([I, -I])])
    return FeedForwardNet([first] + [mid] * (t - 1) + [last])


def pad_depth(net: FeedForwardNet, depth: int) -> FeedForwardNet:
    """Append identity layers on the outputs until ``depth`` is reached."""
    if depth < net.depth:
        raise ValueError("cannot reduce depth")
    if depth == net.depth:
        return net
    return compose(identity_net(net.n_out, depth - net.depth), net)


def select(n_in: int, idx, const=None) -> FeedForwardNet:
    """Affine map picking coordinates ``idx``; entries equal to None in idx take
    the matching value from ``const`` instead."""
    rows = []
    b = []
    for r, i in enumerate(idx):
        row = np.zeros(n_in)
        if i is None:
            b.append(const[r])
        else:
            row[i] = 1.0
            b.append(0.0)
        rows.append(row)
    return affine(np.array(rows).reshape(len(idx), n_in), b)


# ---------------------------------------------------------------------------
# Composition weight bounds (cases a, b, c)


def composition_bounds(f0: FeedForwardNet, parts) -> dict:
    """The three sup-norm bounds for f0(parts); values are None where a case
    does not apply."""
    s0 = net_weight_stats(f0)
    sp = [net_weight_stats(p) for p in parts]
    k = len(parts)
    vbar = max(s.sup_norm for s in sp)
    vbar_last = max(s.output_layer_sup for s in sp)
    vbar_last_w = max(s.output_layer_sup_nooffset for s in sp)
    v0_first = s0.input_layer_sup
    v0_first_w = s0.input_layer_sup_nooffset
    out = {"a": max(s0.sup_norm, vbar, v0_first * (k * vbar_last + 1.0)), "b": None, "c": None}
    if all(s.output_offset == 0.0 for s in sp):
        out["b"] = max(s0.sup_norm, vbar, v0_first_w * vbar_last_w)
        if v0_first_w <= 1.0 or vbar_last_w <= 1.0:
            out["c"] = max(s0.sup_norm, vbar)
    return out


# ---------------------------------------------------------------------------
# Serialization


def dumps_net(net: FeedForwardNet) -> str:
    """JSON text with depth, widths and row-major weight arrays (lossless)."""
    doc = {"format": "cnnsgd-ffnet", "version": 1, "depth": net.depth, "widths": net.widths,
           "weights": [[[repr(float(x)) for x in row] for row in v] for v in net.weights]}
    return json.dumps(doc)


def loads_net(text: str) -> FeedForwardNet:
    doc = json.loads(text)
    if doc.get("format") != "cnnsgd-ffnet":
        raise ValueError("not a serialized network")
    net = FeedForwardNet([np.array([[float(x) for x in row] for row in v]) for v in doc["weights"]])
    if net.depth != doc["depth"] or net.widths != doc["widths"]:
        raise ValueError("serialized header does not match weights")
    return net
