"""Compiled forward/backward kernels for the convolutional class.

A network is a flat float64 vector ``theta`` plus an integer ``layers``
table with one row per conv layer: (M, k_in, k_out, w_offset, b_offset).
Filter weights are stored row-major with shape (M, M, k_in, k_out).
After the conv stack come the pooling weights (k_L entries) and the head:
w_0^(1), then w_i^(1), then w_{i,0}^(0), then w_{i,1}^(0) for i < L2.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def forward(theta, layers, out_off, head_off, L2, x, pre, post, head_pre):
    """Evaluate one network on one image.

    ``pre`` has shape (L, kmax, d1, d2), ``post`` (L+1, kmax, d1, d2) and
    ``head_pre`` (L2,). Returns (value, pool_value, argmax_i, argmax_j).
    """
    d1, d2 = x.shape
    L = layers.shape[0]
    for i in range(d1):
        for j in range(d2):
            post[0, 0, i, j] = x[i, j]
    for r in range(L):
        M = layers[r, 0]
        kin = layers[r, 1]
        kout = layers[r, 2]
        wo = layers[r, 3]
        bo = layers[r, 4]
        for s2 in range(kout):
            b = theta[bo + s2]
            for i in range(d1):
                for j in range(d2):
                    z = b
                    for t1 in range(M):
                        ii = i + t1
                        if ii >= d1:
                            break
                        for t2 in range(M):
                            jj = j + t2
                            if jj >= d2:
                                break
                            base = wo + (t1 * M + t2) * kin * kout + s2
                            for s1 in range(kin):
                                z += theta[base + s1 * kout] * post[r, s1, ii, jj]
                    pre[r, s2, i, j] = z
                    post[r + 1, s2, i, j] = z if z > 0.0 else 0.0
    ML = layers[L - 1, 0]
    kL = layers[L - 1, 2]
    best = -np.inf
    bi = 0
    bj = 0
    for i in range(d1 - ML + 1):
        for j in range(d2 - ML + 1):
            v = 0.0
            for s in range(kL):
                v += theta[out_off + s] * post[L, s, i, j]
            if v > best:
                best = v
                bi = i
                bj = j
    val = theta[head_off]
    for h in range(L2):
        a = theta[head_off + 1 + 2 * L2 + h] * best + theta[head_off + 1 + L2 + h]
        head_pre[h] = a
        if a > 0.0:
            val += theta[head_off + 1 + h] * a
    return val, best, bi, bj


@njit(cache=True)
def backward(theta, layers, out_off, head_off, L2, pre, post, head_pre,
             pool, bi, bj, gval, grad, dcur, dnext):
    """Accumulate gval * d(value)/d(theta) into ``grad``.

    Uses sigma'(z) = 1 iff z >= 0 and routes the pool derivative to the
    stored argmax (bi, bj). ``dcur``/``dnext`` are (kmax, d1, d2) scratch.
    """
    L = layers.shape[0]
    d1 = post.shape[2]
    d2 = post.shape[3]
    grad[head_off] += gval
    dP = 0.0
    for h in range(L2):
        a = head_pre[h]
        if a > 0.0:
            grad[head_off + 1 + h] += gval * a
        if a >= 0.0:
            da = gval * theta[head_off + 1 + h]
            grad[head_off + 1 + L2 + h] += da
            grad[head_off + 1 + 2 * L2 + h] += da * pool
            dP += da * theta[head_off + 1 + 2 * L2 + h]
    kL = layers[L - 1, 2]
    kmax = dcur.shape[0]
    for s in range(kmax):
        for i in range(d1):
            for j in range(d2):
                dcur[s, i, j] = 0.0
    for s in range(kL):
        grad[out_off + s] += dP * post[L, s, bi, bj]
        dcur[s, bi, bj] = dP * theta[out_off + s]
    for r in range(L - 1, -1, -1):
        M = layers[r, 0]
        kin = layers[r, 1]
        kout = layers[r, 2]
        wo = layers[r, 3]
        bo = layers[r, 4]
        if r > 0:
            for s in range(kin):
                for i in range(d1):
                    for j in range(d2):
                        dnext[s, i, j] = 0.0
        for s2 in range(kout):
            for i in range(d1):
                for j in range(d2):
                    g = dcur[s2, i, j]
                    if g == 0.0 or pre[r, s2, i, j] < 0.0:
                        continue
                    grad[bo + s2] += g
                    for t1 in range(M):
                        ii = i + t1
                        if ii >= d1:
                            break
                        for t2 in range(M):
                            jj = j + t2
                            if jj >= d2:
                                break
                            base = wo + (t1 * M + t2) * kin * kout + s2
                            for s1 in range(kin):
                                grad[base + s1 * kout] += g * post[r, s1, ii, jj]
                                if r > 0:
                                    dnext[s1, ii, jj] += g * theta[base + s1 * kout]
        if r > 0:
            for s in range(kin):
                for i in range(d1):
                    for j in range(d2):
                        dcur[s, i, j] = dnext[s, i, j]


@njit(cache=True)
def forward_many(theta, layers, out_off, head_off, L2, X, kmax):
    """Values of one network on a stack of images X with shape (n, d1, d2)."""
    n, d1, d2 = X.shape
    L = layers.shape[0]
    pre = np.empty((L, kmax, d1, d2))
    post = np.empty((L + 1, kmax, d1, d2))
    hp = np.empty(L2)
    out = np.empty(n)
    for m in range(n):
        v, _, _, _ = forward(theta, layers, out_off, head_off, L2, X[m], pre, post, hp)
        out[m] = v
    return out


@njit(cache=True)
def _phi_prime(z):
    # d/dz log(1 + exp(-z)) = -1 / (1 + exp(z))
    if z >= 0.0:
        e = np.exp(-z)
        return -e / (1.0 + e)
    return -1.0 / (1.0 + np.exp(z))


@njit(cache=True)
def _phi(z):
    if z >= 0.0:
        return np.log1p(np.exp(-z))
    return -z + np.log1p(np.exp(z))


@njit(cache=True)
def ensemble_value_grad(thetas, w, x, y, beta, layers, out_off, head_off, L2,
                        kmax, want_grad, gtheta, gw, comp_vals):
    """Ensemble value f = sum_k w_k T_beta(f_k(x)) and, optionally, the
    gradient of phi(y f) written into ``gw`` (K,) and ``gtheta`` (K, P).

    Returns (f, loss). ``comp_vals`` receives the untruncated f_k(x).
    """
    K = thetas.shape[0]
    d1, d2 = x.shape
    L = layers.shape[0]
    pre = np.empty((K, L, kmax, d1, d2))
    post = np.empty((K, L + 1, kmax, d1, d2))
    hp = np.empty((K, L2))
    pools = np.empty(K)
    am = np.empty((K, 2), dtype=np.int64)
    f = 0.0
    for k in range(K):
        v, p, bi, bj = forward(thetas[k], layers, out_off, head_off, L2, x,
                               pre[k], post[k], hp[k])
        comp_vals[k] = v
        pools[k] = p
        am[k, 0] = bi
        am[k, 1] = bj
        tv = v
        if tv > beta:
            tv = beta
        elif tv < -beta:
            tv = -beta
        f += w[k] * tv
    loss = _phi(y * f)
    if want_grad:
        dphi = y * _phi_prime(y * f)
        dcur = np.empty((kmax, d1, d2))
        dnext = np.empty((kmax, d1, d2))
        for k in range(K):
            v = comp_vals[k]
            tv = v
            if tv > beta:
                tv = beta
            elif tv < -beta:
                tv = -beta
            gw[k] = dphi * tv
            for c in range(gtheta.shape[1]):
                gtheta[k, c] = 0.0
            if w[k] != 0.0 and abs(v) <= beta:
                backward(thetas[k], layers, out_off, head_off, L2, pre[k], post[k],
                         hp[k], pools[k], am[k, 0], am[k, 1], dphi * w[k],
                         gtheta[k], dcur, dnext)
    return f, loss
