from fractions import Fraction

import numpy as np
import pytest

from cnnsgd.approx.ffnet import (FeedForwardNet, affine, compose, compose_nets, composition_bounds,
                                 dumps_net, eval_exact, eval_ffnet, identity_net, loads_net,
                                 net_weight_stats, pad_depth, parallel, select)


def random_net(rng, widths):
    return FeedForwardNet([rng.normal(size=(b, a + 1)) for a, b in zip(widths[:-1], widths[1:])])


def naive(net, x):
    h = np.asarray(x, dtype=float)
    for l, V in enumerate(net.weights):
        z = np.array([V[i, 0] + sum(V[i, j + 1] * h[j] for j in range(len(h))) for i in range(V.shape[0])])
        h = z if l == net.depth else np.maximum(z, 0)
    return h


def test_affine_depth_zero():
    net = affine([[2.0, -1.0]], [0.5])
    assert net.depth == 0 and eval_ffnet(net, [1.0, 3.0]) == pytest.approx(-0.5)


def test_relu_unit():
    net = FeedForwardNet([np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]])])
    assert eval_ffnet(net, [-2.0]) == 0.0 and eval_ffnet(net, [1.5]) == 1.5


def test_matches_naive_loop(rng):
    net = random_net(rng, [3, 5, 4, 2])
    x = rng.normal(size=3)
    np.testing.assert_allclose(net(x), naive(net, x), rtol=1e-12)
    X = rng.normal(size=(10, 3))
    np.testing.assert_allclose(net(X)[4], naive(net, X[4]), rtol=1e-12)


def test_shape_errors():
    with pytest.raises(ValueError):
        FeedForwardNet([np.zeros((3, 2)), np.zeros((1, 3))])
    with pytest.raises(ValueError):
        affine([[1.0, 2.0]])(np.zeros(3))


def test_widths_and_stats(rng):
    net = random_net(rng, [3, 5, 1])
    assert net.widths == [3, 5, 1]
    s = net_weight_stats(net)
    assert s.sup_norm == max(np.abs(v).max() for v in net.weights)
    assert s.output_offset == net.weights[-1][0, 0]


def test_compose_parallel(rng):
    inner = random_net(rng, [2, 4, 3])
    outer = random_net(rng, [3, 5, 1])
    X = rng.normal(size=(20, 2))
    c = compose(outer, inner)
    assert c.depth == 2
    np.testing.assert_allclose(c(X), outer(inner(X)), rtol=1e-10, atol=1e-12)
    a, b = random_net(rng, [2, 3, 1]), random_net(rng, [2, 6, 2])
    np.testing.assert_allclose(parallel([a, b])(X), np.hstack([a(X), b(X)]), rtol=1e-12)


def test_compose_nets(rng):
    f0 = random_net(rng, [2, 3, 1])
    parts = [random_net(rng, [4, 2, 1]), random_net(rng, [4, 5, 1])]
    X = rng.normal(size=(15, 4))
    np.testing.assert_allclose(compose_nets(f0, parts)(X),
                               f0(np.hstack([p(X) for p in parts])), rtol=1e-10, atol=1e-12)
    with pytest.raises(ValueError):
        compose_nets(f0, parts[:1])
    with pytest.raises(ValueError):
        compose_nets(f0, [parts[0], random_net(rng, [4, 2, 2, 1])])


@pytest.mark.parametrize("t", [1, 2, 5])
def test_identity(t, rng):
    X = rng.normal(size=(30, 3))
    net = identity_net(3, t)
    assert net.depth == t
    np.testing.assert_array_equal(net(X), X)


def test_pad_depth(rng):
    net = random_net(rng, [2, 3, 1])
    X = rng.normal(size=(10, 2))
    p = pad_depth(net, 4)
    assert p.depth == 4
    np.testing.assert_allclose(p(X), net(X), rtol=1e-12)
    with pytest.raises(ValueError):
        pad_depth(p, 1)


def test_select():
    s = select(3, [2, None, 0], [0.0, 7.0, 0.0])
    np.testing.assert_array_equal(s(np.array([1.0, 2.0, 3.0])), [3.0, 7.0, 1.0])


def test_composition_bounds(rng):
    f0 = random_net(rng, [2, 3, 1])
    parts = [random_net(rng, [3, 2, 1]), random_net(rng, [3, 4, 1])]
    whole = net_weight_stats(compose_nets(f0, parts)).sup_norm
    b = composition_bounds(f0, parts)
    assert whole <= b["a"] + 1e-12
    for p in parts:
        p.weights[-1][:, 0] = 0.0
    b = composition_bounds(f0, parts)
    assert b["b"] is not None and net_weight_stats(compose_nets(f0, parts)).sup_norm <= b["b"] + 1e-12


def test_composition_case_c(rng):
    f0 = random_net(rng, [2, 3, 1])
    f0.weights[0][:, 1:] = rng.uniform(-1, 1, (3, 2))
    parts = [random_net(rng, [3, 2, 1]) for _ in range(2)]
    for p in parts:
        p.weights[-1][:, 0] = 0.0
    b = composition_bounds(f0, parts)
    assert b["c"] is not None
    assert net_weight_stats(compose_nets(f0, parts)).sup_norm <= b["c"] + 1e-12


def test_serialization_lossless(rng):
    net = random_net(rng, [3, 4, 2, 1])
    back = loads_net(dumps_net(net))
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, back.weights))
    with pytest.raises(ValueError):
        loads_net('{"format": "other"}')


def test_eval_exact(rng):
    net = random_net(rng, [2, 3, 1])
    x = rng.normal(size=2)
    v = eval_exact(net, x)
    assert isinstance(v[0], Fraction)
    assert float(v[0]) == pytest.approx(eval_ffnet(net, x), rel=1e-12, abs=1e-12)
    assert len(eval_exact(net, rng.normal(size=(4, 2)))) == 4
