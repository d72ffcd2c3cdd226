import math

import numpy as np
import pytest

from cnnsgd.bounds import hierarchy_error_bound
from cnnsgd.hmax import (GeneratorConfig, HierarchicalModel, Node, bayes_decide, empirical_regret,
                         eval_hierarchy, eval_maxpool_model, load_dataset, load_pgm,
                         logistic_excess, margin_condition_mc, sample_arrays, sample_dataset,
                         save_dataset, surrogate_gap_check)

MEAN1 = HierarchicalModel.uniform(1, Node("mean"))


def const_model(c, level=1):
    return HierarchicalModel.uniform(level, Node("constant", (c,)))


class TestHierarchy:
    def test_mean_patch(self):
        assert eval_hierarchy(MEAN1, np.array([[0.2, 0.4], [0.6, 0.8]])) == pytest.approx(0.5)

    def test_level_two_mean_is_patch_mean(self, rng):
        p = rng.uniform(size=(4, 4))
        m = HierarchicalModel.uniform(2, Node("mean"))
        assert eval_hierarchy(m, p) == pytest.approx(p.mean())

    def test_fixed_point(self):
        assert eval_hierarchy(MEAN1, np.full((2, 2), 0.37)) == pytest.approx(0.37)

    def test_quadrant_order(self):
        # a node that reads its inputs as digits exposes the child order
        class Digits:
            def __call__(self, z):
                return z @ np.array([1000.0, 100.0, 10.0, 1.0])
        m = HierarchicalModel(1, [[Digits()]])
        assert eval_hierarchy(m, np.array([[1.0, 2.0], [3.0, 4.0]])) == 1234.0

    def test_wrong_patch(self):
        with pytest.raises(ValueError):
            eval_hierarchy(MEAN1, np.zeros((3, 3)))

    def test_node_count(self):
        with pytest.raises(ValueError):
            HierarchicalModel(2, [[Node("mean")] * 3, [Node("mean")]])


class TestMaxPool:
    def test_constant_image(self):
        assert eval_maxpool_model(MEAN1, np.full((5, 4), 0.3)) == pytest.approx(0.3)

    def test_brute_force(self, rng):
        x = rng.uniform(size=(4, 4))
        ref = max(x[i:i + 2, j:j + 2].mean() for i in range(3) for j in range(3))
        assert eval_maxpool_model(MEAN1, x) == pytest.approx(ref)

    def test_bright_block_and_translation(self):
        x = np.zeros((5, 5))
        x[1:3, 2:4] = 1.0
        assert eval_maxpool_model(MEAN1, x) == 1.0
        assert eval_maxpool_model(MEAN1, np.roll(x, 1, axis=0)) == 1.0

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            eval_maxpool_model(HierarchicalModel.uniform(2, Node("mean")), np.zeros((3, 5)))

    def test_range(self, rng):
        for node in (Node("mean"), Node("smooth-max", (4.0,)), Node("product"), Node("bump", (2.0,)),
                     Node("logistic", (10.0, 0.5))):
            v = eval_maxpool_model(HierarchicalModel.uniform(2, node), rng.uniform(size=(50, 6, 6)))
            assert np.all((v >= 0) & (v <= 1))


class TestNodes:
    @pytest.mark.parametrize("node", [Node("mean"), Node("smooth-max", (4.0,)), Node("product"),
                                      Node("bump", (2.0,)), Node("logistic", (10.0, 0.5))])
    def test_lipschitz_constants(self, node, rng):
        z = rng.uniform(-2, 2, (4000, 4))
        dz = rng.normal(size=(4000, 4)) * 1e-3
        ok = np.all(np.abs(z + dz) <= 2, axis=1)
        ratio = np.abs(node(z + dz) - node(z))[ok] / np.linalg.norm(dz, axis=1)[ok]
        assert ratio.max() <= node.lipschitz * (1 + 1e-6)

    def test_unit_range(self, rng):
        z = rng.uniform(-2, 2, (1000, 4))
        for node in (Node("mean"), Node("smooth-max", (3.0,)), Node("product"), Node("bump", (1.0,))):
            v = node(z)
            assert np.all((v >= 0) & (v <= 1))

    def test_descriptor_roundtrip(self):
        m = HierarchicalModel(2, [[Node("mean"), Node("product"), Node("bump", (1.5, 0.1, 0.2, 0.3, 0.4)),
                                   Node("mean")], [Node("logistic", (5.0, 0.4))]])
        assert HierarchicalModel.from_descriptor(m.descriptor()) == m


class TestSampling:
    gen = staticmethod(lambda model, n, law="iid-uniform": GeneratorConfig(4, 4, model, n, law))

    def test_degenerate_models(self, rng):
        assert all(s.y == 1 for s in sample_dataset(self.gen(const_model(1.0), 200), rng))
        assert all(s.y == -1 for s in sample_dataset(self.gen(const_model(0.0), 200), rng))

    def test_half(self, rng):
        n = 10_000
        _, y, _ = sample_arrays(self.gen(const_model(0.5), n), rng)
        assert abs(y.mean()) <= 3 / math.sqrt(n)

    def test_region_frequencies(self, rng):
        gen = self.gen(MEAN1, 20000)
        _, y, eta = sample_arrays(gen, rng)
        for lo, hi in ((0.5, 0.6), (0.6, 0.7), (0.7, 1.0)):
            sel = (eta >= lo) & (eta < hi)
            freq = np.mean(y[sel] == 1)
            sd = math.sqrt(0.25 / sel.sum())
            assert abs(freq - eta[sel].mean()) <= 4 * sd

    def test_seeded(self):
        gen = GeneratorConfig(4, 4, MEAN1, 30, seed=9)
        a, b = sample_dataset(gen), sample_dataset(gen)
        assert all(np.array_equal(s.x.pixels, t.x.pixels) and s.y == t.y for s, t in zip(a, b))

    def test_blockwise_law(self, rng):
        gen = self.gen(MEAN1, 100, "blockwise-smooth")
        X, _, _ = sample_arrays(gen, rng)
        assert X.shape == (100, 4, 4) and X.min() >= 0 and X.max() <= 1
        # neighbours are interpolated, so horizontal differences are small on average
        assert np.abs(np.diff(X, axis=2)).mean() < np.abs(rng.uniform(size=(100, 4, 3)) - rng.uniform(size=(100, 4, 3))).mean()

    def test_unknown_law(self):
        with pytest.raises(ValueError):
            GeneratorConfig(4, 4, MEAN1, 1, "gaussian")


class TestBayesAndRegret:
    def test_bayes(self):
        assert bayes_decide(const_model(0.7), np.zeros((2, 2))) == 1
        assert bayes_decide(const_model(0.2), np.zeros((2, 2))) == -1
        assert bayes_decide(const_model(0.5), np.zeros((2, 2))) == 1

    def test_regret_examples(self, rng):
        X = rng.uniform(size=(50, 4, 4))
        exact, _ = empirical_regret(lambda Z: bayes_decide(MEAN1, Z), MEAN1, X)
        assert exact == 0.0
        m02 = const_model(0.2)
        assert empirical_regret(lambda Z: np.ones(len(Z), int), m02, X)[0] == pytest.approx(0.6)
        m05 = const_model(0.5)
        assert empirical_regret(lambda Z: -bayes_decide(m05, Z), m05, X)[0] == 0.0

    def test_mc_regret_close(self, rng):
        X = rng.uniform(size=(400, 4, 4))
        exact, mc = empirical_regret(lambda Z: -bayes_decide(MEAN1, Z), MEAN1, X, mc_labels=200, rng=rng)
        assert abs(exact - mc) < 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_regret(lambda Z: Z, MEAN1, np.zeros((0, 4, 4)))


class TestMarginCondition:
    def test_examples(self, rng):
        gen = GeneratorConfig(4, 4, MEAN1, 1)
        assert margin_condition_mc(const_model(1.0), 100, 50, gen, rng) == 1.0
        assert margin_condition_mc(const_model(0.5), 16, 50, gen, rng) == 0.0

    def test_two_level_regions(self, rng):
        m = HierarchicalModel.uniform(1, Node("logistic", (1000.0, 0.5)))
        gen = GeneratorConfig(2, 2, m, 1)
        v = margin_condition_mc(m, 1e4, 500, gen, rng)
        assert v > 0.95

    def test_trials(self, rng):
        with pytest.raises(ValueError):
            margin_condition_mc(MEAN1, 10, 0, GeneratorConfig(4, 4, MEAN1, 1), rng)


class TestSurrogate:
    def test_bayes_logit(self, rng):
        eta = rng.uniform(0.01, 0.99, 100)
        lhs, rhs = surrogate_gap_check(np.log(eta / (1 - eta)), eta)
        assert lhs == 0.0 and rhs == pytest.approx(0.0, abs=1e-6)

    def test_zero_score(self):
        lhs, rhs = surrogate_gap_check(np.zeros(10), np.full(10, 0.8))
        assert lhs == 0.0 and rhs > 0

    def test_random_piecewise_constant(self, rng):
        for _ in range(100):
            eta = rng.uniform(size=200)
            f = rng.choice(rng.normal(0, 3, 4), 200)
            lhs, rhs = surrogate_gap_check(f, eta)
            assert lhs <= rhs + 1e-9

    def test_smaller_constant_fails(self):
        # with 1/sqrt(2) the comparison breaks: eta = 0.8, f slightly negative
        eta = np.array([0.8])
        lhs, rhs = surrogate_gap_check(np.array([-1e-3]), eta, constant=1 / math.sqrt(2))
        assert lhs > rhs
        lhs, rhs = surrogate_gap_check(np.array([-1e-3]), eta)
        assert lhs <= rhs

    def test_clamped_logit(self):
        assert np.all(np.isfinite(logistic_excess(np.zeros(2), np.array([0.0, 1.0]))))


def test_perturbation_bound(rng):
    base = HierarchicalModel.uniform(2, Node("mean"))
    eps = 0.01

    class Shifted:
        def __init__(self, shift):
            self.shift = shift

        def __call__(self, z):
            return Node("mean")(z) + self.shift

    pert = HierarchicalModel(2, [[Shifted(eps * (-1) ** i) for i in range(4)], [Shifted(eps)]])
    X = rng.uniform(size=(1000, 5, 5))
    diff = np.abs(eval_maxpool_model(base, X) - eval_maxpool_model(pert, X))
    assert diff.max() <= hierarchy_error_bound(1, base.lipschitz, 2, eps)


def test_dataset_roundtrip(tmp_path, rng):
    gen = GeneratorConfig(3, 4, MEAN1, 7, seed=3)
    X, y, _ = sample_arrays(gen, rng)
    save_dataset(tmp_path / "d.csv", gen, X, y)
    header, X2, y2 = load_dataset(tmp_path / "d.csv")
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    assert header["model"] == MEAN1 and header["seed"] == 3


def test_pgm(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n# c\n3 2\n255\n0 255 51\n102 0 255\n")
    img = load_pgm(tmp_path / "a.pgm")
    np.testing.assert_allclose(img, [[0, 1, 0.2], [0.4, 0, 1]])
    (tmp_path / "b.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_allclose(load_pgm(tmp_path / "b.pgm"), [[0, 1]])
