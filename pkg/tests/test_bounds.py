import math

import numpy as np
import pytest

from cnnsgd.bounds import (BoundReport, empirical_grad_sup, empirical_lipschitz, grad_sup_bound,
                           hierarchy_error_bound, lipschitz_bound, log_grad_sup_bound,
                           log_lipschitz_bound, rademacher_mc, random_bounded_instance,
                           vc_structural_bound)
from cnnsgd.harness import bound_reports
from cnnsgd.model import CnnConfig, n_params

UNIT = CnnConfig((1,), (1,), 1, 1.0)


def test_closed_form_values():
    # 7 * 1 * 1 * 1^2 * 2^1 * 2^4
    assert lipschitz_bound(UNIT, 1.0) == 224.0
    # 1 * 1^3 * 2^4 * 1^4
    assert grad_sup_bound(UNIT, 1.0) == 16.0


def test_log_forms_match():
    cfg = CnnConfig((3, 4), (2, 3), 5, 1.0)
    assert math.log(lipschitz_bound(cfg, 1.5)) == pytest.approx(log_lipschitz_bound(cfg, 1.5))
    assert math.log(grad_sup_bound(cfg, 1.5)) == pytest.approx(log_grad_sup_bound(cfg, 1.5))


def test_overflow_to_inf():
    big = CnnConfig(tuple([3] * 200), tuple([5] * 200), 10, 1.0)
    assert lipschitz_bound(big, 3.0) == math.inf
    assert math.isfinite(log_lipschitz_bound(big, 3.0))


def test_domain_errors():
    with pytest.raises(ValueError):
        lipschitz_bound(UNIT, -1.0)
    with pytest.raises(ValueError):
        grad_sup_bound(UNIT, 0.5)
    with pytest.raises(ValueError):
        vc_structural_bound(1, 3)


def test_structural_and_hierarchy():
    v = vc_structural_bound(2, 3)
    assert v.value == pytest.approx(10 * math.log(3)) and not v.constant_specified
    assert hierarchy_error_bound(4, 1.0, 2, 0.1) == pytest.approx(2 * 9 * 0.1)


def test_empirical_lipschitz_zero_and_dominated(rng):
    th = rng.uniform(-1, 1, n_params(UNIT))
    X = rng.uniform(size=(10, 4, 4))
    assert empirical_lipschitz(UNIT, th, th, X) == 0.0
    tb = np.clip(th + rng.uniform(-0.5, 0.5, th.size), -1, 1)
    assert empirical_lipschitz(UNIT, th, tb, X) <= lipschitz_bound(UNIT, 1.0)


def test_bound_reports_dominate():
    reps = bound_reports(seed=1, instances=10, images=8)
    assert len(reps) == 20 and all(r.ok for r in reps)


def test_grad_sup_dominated(rng):
    cfg = CnnConfig((2, 2), (2, 1), 2, 1.0)
    w, thetas = random_bounded_instance(cfg, 3, 1.5, rng)
    assert np.abs(thetas).max() <= 1.5 and w.sum() <= 1 + 1e-12
    X = rng.uniform(size=(8, 4, 4))
    y = rng.choice([-1, 1], 8)
    assert empirical_grad_sup(cfg, w, thetas, X, y) <= grad_sup_bound(cfg, 1.5)


def test_report_csv():
    r = BoundReport("x", 2.0, 0.5)
    assert r.margin == 1.5 and r.csv_row() == "x,2.0,0.5,1.5\n"
    assert BoundReport("y", 1.0).csv_row() == "y,1.0,,\n"


def test_rademacher_examples(rng):
    X = rng.uniform(size=(1, 4, 4))
    cfg = CnnConfig((1,), (2,), 1, 1.0)
    assert rademacher_mc(cfg, 1.0, X, 0.0, 3, 5, rng) == 0.0
    # one sample: sup |eps T f| reaches beta when the class hits +-beta
    assert rademacher_mc(cfg, 1.0, X, 0.5, 3, 200, rng) == pytest.approx(0.5)


def test_rademacher_shrinks(rng):
    cfg = CnnConfig((2,), (2,), 2, 1.0)
    small = rademacher_mc(cfg, 1.0, rng.uniform(size=(64, 4, 4)), 1.0, 5, 20, rng)
    large = rademacher_mc(cfg, 1.0, rng.uniform(size=(1024, 4, 4)), 1.0, 5, 20, rng)
    assert large < small
