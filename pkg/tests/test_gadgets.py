from fractions import Fraction

import numpy as np
import pytest

from cnnsgd.approx import gadgets as G
from cnnsgd.approx.ffnet import eval_exact, eval_ffnet, net_weight_stats


def test_tooth():
    g = G.tooth_net()
    x = np.linspace(-1, 2, 301)[:, None]
    expect = np.where((x >= 0) & (x <= 0.5), 2 * x, np.where((x > 0.5) & (x <= 1), 2 * (1 - x), 0))
    np.testing.assert_allclose(g(x), expect, atol=1e-14)


@pytest.mark.parametrize("R", [1, 2, 4, 6])
def test_square01_exact_at_dyadics(R):
    net = G.square01_net(R)
    pts = np.arange(2 ** R + 1) / 2 ** R
    for u, v in zip(pts, eval_exact(net, pts[:, None])):
        assert v[0] == Fraction(u) ** 2
    assert net_weight_stats(net).sup_norm <= 1.0


@pytest.mark.parametrize("R,a", [(2, 1.0), (4, 1.0), (5, 2.0), (8, 2.0)])
def test_square_error(R, a):
    net = G.build_square_net(R, a)
    x = np.linspace(-a, a, 4001)
    err = np.abs(eval_ffnet(net, x[:, None]) - x * x).max()
    # float evaluation adds a few ulps of the largest intermediate, 4a^2
    assert err <= G.square_error_bound(R, a) + 8 * np.finfo(float).eps * 4 * a * a
    assert net.depth == R and max(net.widths[1:-1]) == 9


def test_square_weights_and_preconditions():
    assert net_weight_stats(G.build_square_net(3, 2.0)).sup_norm <= 4 * 2.0 ** 2
    with pytest.raises(G.PreconditionError):
        G.build_square_net(0)
    with pytest.raises(G.PreconditionError):
        G.build_square_net(3, 0.5)


@pytest.mark.parametrize("R,a", [(3, 1.0), (6, 1.0), (6, 2.0)])
def test_mult(R, a, rng):
    net = G.build_mult_net(R, a)
    XY = rng.uniform(-a, a, (3000, 2))
    err = np.abs(eval_ffnet(net, XY) - XY[:, 0] * XY[:, 1]).max()
    assert err <= G.mult_error_bound(R, a) + 1e-12
    s = net_weight_stats(net)
    assert s.sup_norm <= 4 * a * a and s.output_offset == 0.0


def test_mult_zero_row():
    net = G.build_mult_net(4, 1.0)
    assert np.abs(eval_ffnet(net, np.column_stack([np.zeros(50), np.linspace(-1, 1, 50)]))).max() < 1e-12


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_multd(d, rng):
    R = int(np.ceil(G.multd_threshold(d, 1.0)))
    net = G.build_multd_net(R, d, 1.0)
    X = rng.uniform(-1, 1, (500, d))
    err = np.abs(eval_ffnet(net, X) - X.prod(axis=1)).max()
    assert err <= G.multd_error_bound(R, d, 1.0)
    assert net_weight_stats(net).sup_norm <= G.multd_weight_bound(d, 1.0)


def test_multd_threshold_guard():
    with pytest.raises(G.PreconditionError):
        G.build_multd_net(2, 3, 1.0)


def test_monomials():
    assert G.monomials(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(G.monomials(3, 3)) == 20


def test_poly(rng):
    d, N = 2, 1
    mons = G.monomials(d, N)
    r = rng.normal(size=len(mons))
    R = int(np.ceil(G.multd_threshold(N + 1, 1.0)))
    net = G.build_poly_net(R, N, d, r, 1.0)
    Z = rng.uniform(-1, 1, (300, d + len(mons)))
    x, y = Z[:, :d], Z[:, d:]
    exact = sum(r[i] * y[:, i] * np.prod(x ** np.array(e), axis=1) for i, e in enumerate(mons))
    assert np.abs(eval_ffnet(net, Z) - exact).max() <= G.poly_error_bound(R, N, d, r, 1.0)


def test_indicator(rng):
    a, b, R = np.array([0.2, -0.5]), np.array([0.7, 0.1]), 40.0
    net = G.build_indicator_net(a, b, R)
    X = rng.uniform(-1, 1, (5000, 2))
    far = np.all((np.abs(X - a) >= 1 / R) & (np.abs(X - b) >= 1 / R), axis=1)
    inside = np.all((X >= a) & (X < b), axis=1).astype(float)
    np.testing.assert_allclose(eval_ffnet(net, X)[far], inside[far], atol=1e-12)
    v = eval_ffnet(net, X)
    assert np.all((v >= 0) & (v <= 1))
    assert net_weight_stats(net).sup_norm <= G.indicator_weight_bound(a, b, R)
    with pytest.raises(G.PreconditionError):
        G.build_indicator_net([0.0], [0.01], R)


def test_test_net(rng):
    a, b, R, s = np.array([0.1]), np.array([0.6]), 20.0, -3.5
    net = G.build_test_net(a, b, s, R)
    x = rng.uniform(-1, 1, 4000)
    far = (np.abs(x - a[0]) >= 1 / R) & (np.abs(x - b[0]) >= 1 / R)
    expect = s * ((x >= a[0]) & (x < b[0]))
    np.testing.assert_allclose(eval_ffnet(net, x[:, None])[far], expect[far], atol=1e-12)
    with pytest.raises(G.PreconditionError):
        G.build_test_net(a, b, 30.0, R)


def test_trunc(rng):
    R, B = 50.0, 5
    net = G.build_trunc_net(R, B)
    z = rng.uniform(0, B + 1, 5000)
    safe = G.in_safe_region(z, R, B)
    np.testing.assert_allclose(eval_ffnet(net, z[:, None])[safe], np.floor(z[safe]), atol=1e-10)
    assert net_weight_stats(net).sup_norm <= G.trunc_weight_bound(R, B)
