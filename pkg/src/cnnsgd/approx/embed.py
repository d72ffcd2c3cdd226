"""Embedding a hierarchy of 4-input feedforward nets into the CNN class.

Channel layout (identical in every conv layer):
  0, 1            pixel rails sigma(x), sigma(-x)
  2 + 2g, 3 + 2g  output rails sigma(+-v) of node number g (levels in order)
  then r_net      working channels for the node currently being evaluated

Nodes are evaluated one after another. A node with L_net hidden layers uses
L_net conv layers for its hidden layers; its output rails are written in the
following layer, which is also the first layer of the next node. Each level
ends with one extra layer so that the next level can read all outputs.
Finished outputs are carried forward with 1x1 unit weights (sigma of a
nonnegative value is itself).
"""

from __future__ import annotations

import numpy as np

from ..hmax import _eval_node_tree, HierarchicalModel
from ..model import CnnConfig, CnnParams, n_params, pi_schedule
from .ffnet import FeedForwardNet


def linear_node_net(w, b: float = 0.0) -> FeedForwardNet:
    """Exact one-hidden-layer net for z -> w.z + b on R^4."""
    w = np.asarray(w, dtype=np.float64).reshape(4)
    first = np.array([np.concatenate([[b], w]), np.concatenate([[-b], -w])])
    return FeedForwardNet([first, np.array([[0.0, 1.0, -1.0]])])


def _normalize(g_nets, l: int) -> list:
    if isinstance(g_nets, FeedForwardNet):
        return [[g_nets] * 4 ** (l - k) for k in range(1, l + 1)]
    levels = [list(row) for row in g_nets]
    if len(levels) != l:
        raise ValueError(f"need {l} levels of node nets, got {len(levels)}")
    for k, row in enumerate(levels, start=1):
        if len(row) != 4 ** (l - k):
            raise ValueError(f"level {k} needs {4 ** (l - k)} node nets")
    return levels


def embedding_architecture(L_net: int, r_net: int, l: int) -> CnnConfig:
    n_nodes = (4 ** l - 1) // 3
    L1 = n_nodes * L_net + l
    k = (2 * 4 ** l + 4) // 3 + r_net
    ms = tuple(2 ** pi_schedule(s, l, L_net) for s in range(1, L1 + 1))
    return CnnConfig(tuple([k] * L1), ms, 2, 1.0)


def cnn_from_ffnets(g_nets, l: int) -> tuple:
    """Return (CnnConfig, CnnParams) whose network equals the max over windows
    of the hierarchy built from ``g_nets`` (one net, or nets[level-1][s-1]).

    All node nets need 4 inputs, one output and the same depth L_net; r_net
    is their largest hidden width.
    """
    levels = _normalize(g_nets, l)
    nets = [n for row in levels for n in row]
    L_net = nets[0].depth
    if L_net < 1 or any(n.depth != L_net for n in nets):
        raise ValueError("node nets must share a depth >= 1")
    if any(n.n_in != 4 or n.n_out != 1 for n in nets):
        raise ValueError("node nets must map R^4 to R")
    r_net = max(max(n.widths[1:-1]) for n in nets)
    config = embedding_architecture(L_net, r_net, l)
    params = CnnParams(config, np.zeros(n_params(config)))
    K = config.channels[0]
    work = 2 + 2 * len(nets)
    P_POS, P_NEG = 0, 1

    def W(s):  # conv weights of 1-based layer s
        return params.conv_weights(s - 1)

    def bias(s):
        return params.conv_bias(s - 1)

    gid = {}
    g = 0
    for k, row in enumerate(levels, start=1):
        for s in range(1, len(row) + 1):
            gid[(k, s)] = g
            g += 1

    written = {}  # channel -> layer it was first written in
    W(1)[0, 0, 0, P_POS] = 1.0
    W(1)[0, 0, 0, P_NEG] = -1.0
    written[P_POS] = written[P_NEG] = 1

    cur = 1
    for k, row in enumerate(levels, start=1):
        h = 2 ** (k - 1)
        taps = ((0, 0), (0, h), (h, 0), (h, h))
        for s, net in enumerate(row, start=1):
            V = net.weights
            first = cur
            # first hidden layer reads the four children at the quadrant taps
            Wl, bl = W(first), bias(first)
            width = V[0].shape[0]
            bl[work:work + width] = V[0][:, 0]
            for q, (t1, t2) in enumerate(taps):
                col = V[0][:, 1 + q]
                if k == 1 and first == 1:
                    Wl[t1, t2, 0, work:work + width] += col
                elif k == 1:
                    Wl[t1, t2, P_POS, work:work + width] += col
                    Wl[t1, t2, P_NEG, work:work + width] -= col
                else:
                    c = 2 + 2 * gid[(k - 1, 4 * (s - 1) + q + 1)]
                    Wl[t1, t2, c, work:work + width] += col
                    Wl[t1, t2, c + 1, work:work + width] -= col
            for m in range(1, L_net):
                Vm = V[m]
                Wl, bl = W(first + m), bias(first + m)
                bl[work:work + Vm.shape[0]] = Vm[:, 0]
                Wl[0, 0, work:work + Vm.shape[1] - 1, work:work + Vm.shape[0]] = Vm[:, 1:].T
            out = first + L_net
            Vo = V[L_net]
            c = 2 + 2 * gid[(k, s)]
            Wl, bl = W(out), bias(out)
            bl[c], bl[c + 1] = Vo[0, 0], -Vo[0, 0]
            Wl[0, 0, work:work + Vo.shape[1] - 1, c] = Vo[0, 1:]
            Wl[0, 0, work:work + Vo.shape[1] - 1, c + 1] = -Vo[0, 1:]
            written[c] = written[c + 1] = out
            cur = out
        cur += 1

    L1 = config.L1
    assert cur - 1 == L1, (cur, L1)
    for c, s0 in written.items():
        for s in range(s0 + 1, L1 + 1):
            W(s)[0, 0, c, c] = 1.0

    root = 2 + 2 * gid[(l, 1)]
    params.out_weights[root] = 1.0
    params.out_weights[root + 1] = -1.0
    params.head_out[:] = (1.0, -1.0)
    params.head_in[:] = (1.0, -1.0)
    assert K == work + r_net
    return config, params


def ffnet_hierarchy_values(g_nets, l: int, X) -> np.ndarray:
    """Max over windows of the composed feedforward nets (reference evaluation)."""
    from numpy.lib.stride_tricks import sliding_window_view

    levels = _normalize(g_nets, l)

    def wrap(net):
        return lambda z: net(z.reshape(-1, 4))[:, 0].reshape(z.shape[:-1])

    nodes = [[wrap(n) for n in row] for row in levels]
    X = np.asarray(X, dtype=np.float64)
    side = 2 ** l
    wins = sliding_window_view(X, (side, side), axis=(-2, -1))
    shell = HierarchicalModel.__new__(HierarchicalModel)
    vals = _eval_node_tree(shell, wins, l, 1, nodes)
    return vals.max(axis=(-2, -1))
