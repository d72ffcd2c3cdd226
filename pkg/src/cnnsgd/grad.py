"""Gradients of the ensemble logistic loss phi(y f(x)).

Conventions: relu'(z) = 1 iff z >= 0, dT_beta(z) = 1 iff |z| <= beta, and
the pool maximum passes its derivative to the first maximal window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import CnnConfig, ConfigError, as_pixels, layout


@dataclass
class GradBundle:
    """d_w has shape (K,); d_theta has shape (K, P), aligned with the thetas."""

    d_w: np.ndarray
    d_theta: np.ndarray
    value: float = 0.0
    loss: float = 0.0


class GradEngine:
    """Reusable evaluator for one architecture (avoids re-deriving the layout)."""

    def __init__(self, config: CnnConfig):
        self.config = config
        self.lay = layout(config)

    def __call__(self, w, thetas, x, y, want_grad=True):
        K = thetas.shape[0]
        gtheta = np.zeros((K, self.lay.size)) if want_grad else np.zeros((K, 0))
        gw = np.zeros(K)
        comp = np.zeros(K)
        f, loss = _kernels.ensemble_value_grad(
            thetas, w, x, float(y), float(self.config.beta), self.lay.layers,
            self.lay.out_off, self.lay.head_off, self.config.L2, self.config.kmax,
            want_grad, gtheta, gw, comp)
        return f, loss, gw, gtheta, comp


def grad_ensemble(config: CnnConfig, ens, x, y: int) -> GradBundle:
    """Analytic gradient of phi(y * f_(w,theta)(x)) w.r.t. w and every theta_k.

    d_w[j] = -y T_beta(f_j(x)) / (1 + exp(y f)); d_theta[k] is the backprop
    through head, pooled argmax, conv stack and truncation gate, scaled by w_k.
    """
    if y not in (-1, 1):
        raise ValueError("label must be -1 or 1")
    px = np.ascontiguousarray(as_pixels(x))
    config.check_image(*px.shape)
    w = np.ascontiguousarray(ens.w, dtype=np.float64)
    thetas = np.ascontiguousarray(ens.thetas, dtype=np.float64)
    if thetas.shape != (len(w), layout(config).size):
        raise ConfigError("ensemble parameters do not match config")
    f, loss, gw, gtheta, _ = GradEngine(config)(w, thetas, px, y)
    return GradBundle(gw, gtheta, float(f), float(loss))


def finite_diff_grad(loss_fn, point, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(p + h e_i) - f(p - h e_i)) / (2h) per coordinate."""
    if h <= 0:
        raise ValueError("step must be positive")
    p = np.array(point, dtype=np.float64).ravel()
    g = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        fp = loss_fn(p.copy())
        p[i] = old - h
        fm = loss_fn(p.copy())
        p[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def kink_margin(config: CnnConfig, theta, x) -> float:
    """Distance of one network from its nondifferentiable points at x.

    The minimum over |conv pre-activation|, |head pre-activation|, the gap
    between the best and second-best pooled window, and |f| - beta (distance
    to the truncation corners). Central differences with step h are valid
    when this margin is well above h times the local Lipschitz constant.
    """
    px = np.ascontiguousarray(as_pixels(x), dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    lay = layout(config)
    d1, d2 = px.shape
    L, k = config.L1, config.kmax
    pre = np.zeros((L, k, d1, d2))
    post = np.zeros((L + 1, k, d1, d2))
    hp = np.zeros(config.L2)
    val, _, _, _ = _kernels.forward(theta, lay.layers, lay.out_off, lay.head_off, config.L2,
                                    px, pre, post, hp)
    m = min(float(np.min(np.abs(pre[r, :kr]))) for r, kr in enumerate(config.channels))
    m = min(m, float(np.min(np.abs(hp))))
    ML = config.filter_sizes[-1]
    kL = config.channels[-1]
    pooled = np.einsum("s,sij->ij", theta[lay.out_off:lay.out_off + kL],
                       post[L, :kL, :d1 - ML + 1, :d2 - ML + 1]).ravel()
    if pooled.size > 1:
        top = np.sort(pooled)[-2:]
        m = min(m, float(top[1] - top[0]))
    return min(m, abs(abs(float(val)) - config.beta))
