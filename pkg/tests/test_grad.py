import numpy as np
import pytest

from cnnsgd.grad import GradEngine, finite_diff_grad, grad_ensemble, kink_margin
from cnnsgd.harness import random_grad_instance
from cnnsgd.model import CnnConfig, CnnParams, logistic_loss, n_params
from cnnsgd.sgd import EnsembleParams


def ens_of(w, thetas):
    return EnsembleParams(np.asarray(w, float), np.asarray(thetas, float), np.asarray(thetas, float))


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda v: float(v @ v), np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        assert np.all(finite_diff_grad(lambda v: 3.0, np.zeros(4)) == 0.0)

    def test_logistic_slope(self):
        g = finite_diff_grad(lambda v: logistic_loss(v[0]), np.zeros(1))
        assert abs(g[0] + 0.5) < 1e-9

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.zeros(1), h=0.0)


class TestClosedForms:
    def test_outer_gradient_at_zero_weights(self, rng):
        cfg = CnnConfig((2,), (2,), 2, 0.8)
        thetas = rng.normal(size=(3, n_params(cfg)))
        x = rng.uniform(size=(3, 3))
        for y in (-1, 1):
            gb = grad_ensemble(cfg, ens_of(np.zeros(3), thetas), x, y)
            comp = np.array([np.clip(GradEngine(cfg)(np.zeros(3), thetas, x, y)[4][k], -0.8, 0.8)
                             for k in range(3)])
            np.testing.assert_array_equal(gb.d_w, -y * comp / 2.0)
            assert np.all(gb.d_theta == 0.0)  # scaled by w_k = 0

    def test_truncated_component_has_zero_gradient(self):
        cfg = CnnConfig((1,), (1,), 1, 1.0)
        big = CnnParams(cfg)
        big.head_out_bias[0] = 5.0  # value 5 > beta
        small = CnnParams(cfg)
        small.head_out_bias[0] = 0.3
        gb = grad_ensemble(cfg, ens_of([0.5, 0.5], [big.flat, small.flat]), np.zeros((2, 2)), 1)
        assert np.all(gb.d_theta[0] == 0.0)
        assert np.any(gb.d_theta[1] != 0.0)

    def test_outer_gradient_norm_bound(self, rng):
        for _ in range(20):
            cfg, w, thetas, x, y = random_grad_instance(rng)
            gb = grad_ensemble(cfg, ens_of(w, thetas), x, y)
            assert gb.d_w @ gb.d_w <= len(w) * cfg.beta ** 2 + 1e-12

    def test_label_must_be_sign(self, rng):
        cfg = CnnConfig((1,), (1,), 1)
        with pytest.raises(ValueError):
            grad_ensemble(cfg, ens_of([1.0], np.zeros((1, n_params(cfg)))), np.zeros((2, 2)), 0)


def test_small_instance_matches_finite_differences(rng):
    cfg = CnnConfig((2,), (2,), 2, 3.0)
    done = 0
    while done < 5:
        w = rng.uniform(0, 0.5, 2)
        thetas = rng.normal(size=(2, n_params(cfg)))
        x = rng.uniform(size=(3, 3))
        if min(kink_margin(cfg, th, x) for th in thetas) < 1e-3:
            continue
        eng = GradEngine(cfg)
        _, _, gw, gth, _ = eng(w, thetas, x, 1)
        P = thetas.shape[1]
        fd = finite_diff_grad(lambda v: eng(v[:2].copy(), np.ascontiguousarray(v[2:].reshape(2, P)), x, 1,
                                            want_grad=False)[1],
                              np.concatenate([w, thetas.ravel()]))
        an = np.concatenate([gw, gth.ravel()])
        assert np.linalg.norm(an - fd) <= 1e-4 * np.linalg.norm(fd)
        done += 1


def test_kink_margin_detects_ties():
    cfg = CnnConfig((1,), (1,), 1)
    p = CnnParams(cfg)
    p.conv_weights(0)[0, 0, 0, 0] = 1.0
    p.out_weights[0] = 1.0
    p.head_in[0] = 1.0
    p.head_out[0] = 1.0
    assert kink_margin(cfg, p.flat, np.full((2, 2), 0.5)) == 0.0
