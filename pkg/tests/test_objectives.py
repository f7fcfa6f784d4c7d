import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gtsim.objectives import (CallableSuite, ObjectiveError, estimate_pl_constant,
                              estimate_smoothness, finite_difference_grad, ncvx_logistic_suite,
                              partition_samples, pl_synthetic_suite, quadratic_suite, read_samples,
                              synthetic_classification_partition)


def _pl_ratio(x):
    f = x**2 + 3 * math.sin(x) ** 2
    g = 2 * x + 3 * math.sin(2 * x)
    return g * g / (2 * f)


def test_pl_constant_independent_minimization():
    # golden-section search on the PL ratio near its minimizer, independent of the grid estimator
    lo, hi = 1.5, 3.0
    phi = (math.sqrt(5) - 1) / 2
    for _ in range(200):
        a, b = hi - phi * (hi - lo), lo + phi * (hi - lo)
        if _pl_ratio(a) < _pl_ratio(b):
            hi = b
        else:
            lo = a
    ref = _pl_ratio(0.5 * (lo + hi))
    suite = pl_synthetic_suite(16, 0.1)
    assert ref == pytest.approx(0.17553, abs=5e-5)
    assert suite.mu == pytest.approx(ref, rel=1e-6)
    assert 2.0 < 0.5 * (lo + hi) < 2.4


def test_pl_zero_sum_and_nonzero_coefficients():
    for n in (2, 3, 16, 17):
        a = pl_synthetic_suite(n, 0.3).a
        assert abs(a.sum()) < 1e-12
        assert np.all(a != 0)


def test_pl_global_function_matches_average():
    suite = pl_synthetic_suite(16, 0.7)
    x = np.linspace(-9, 9, 41)[:, None]
    xs = np.broadcast_to(x[:, None, :], (41, 16, 1))
    assert np.allclose(suite.local_values(xs).mean(axis=1), suite.value(x), atol=1e-12)
    assert np.allclose(suite.local_grads(xs).mean(axis=1), suite.grad(x), atol=1e-12)


def test_pl_optimum():
    suite = pl_synthetic_suite(8, 0.1)
    assert suite.f_star == 0.0
    assert float(suite.value(np.zeros(1))) == 0.0
    assert float(suite.grad(np.zeros(1))[0]) == 0.0


@pytest.mark.parametrize("scale,L", [(0.01, 8.708), (0.1, 15.15), (1.0, 81.3)])
def test_pl_smoothness_values(scale, L):
    assert pl_synthetic_suite(16, scale).L == pytest.approx(L, rel=2e-3)


def test_pl_smoothness_bounds_difference_quotients():
    suite = pl_synthetic_suite(16, 0.5)
    est = estimate_smoothness(suite, use_closed_form=False, seed=1)
    assert est / 1.05 <= suite.L * (1 + 1e-9)


def test_pl_suite_rejects_bad_inputs():
    with pytest.raises(ObjectiveError):
        pl_synthetic_suite(1, 0.1)
    with pytest.raises(ObjectiveError):
        pl_synthetic_suite(4, 0.0)


def test_pl_estimate_needs_fstar():
    s = CallableSuite(1, 1, lambda i, x: float(x[0] ** 2), lambda i, x: 2 * x)
    with pytest.raises(ObjectiveError, match="F\\*"):
        estimate_pl_constant(s)


def test_quadratic_constants():
    q = quadratic_suite(5, 3, spread=2.0, curvature=1.5, seed=2)
    assert q.L == q.mu == 1.5
    assert float(q.value(q.x_star)) == pytest.approx(q.f_star)
    assert np.allclose(q.grad(q.x_star), 0.0, atol=1e-12)
    # PL with mu = c holds with equality for a quadratic
    x = np.array([0.3, -1.0, 2.0])
    g = q.grad(x)
    assert g @ g == pytest.approx(2 * q.mu * (float(q.value(x)) - q.f_star))


@given(st.floats(-9.5, 9.5), st.integers(0, 15))
def test_pl_gradient_matches_finite_difference(x, i):
    suite = pl_synthetic_suite(16, 0.4)
    fd = finite_difference_grad(suite, i, np.array([x]))
    assert fd[0] == pytest.approx(float(suite.local_grad(i, np.array([x]))[0]), abs=1e-6)


@given(st.floats(-10, 10))
def test_pl_inequality_holds(x):
    suite = pl_synthetic_suite(16, 0.1)
    xv = np.array([x])
    g = float(suite.grad(xv)[0])
    assert g * g >= 2 * suite.mu * float(suite.value(xv)) * (1 - 1e-6) - 1e-12


def _partition(n=4, m=30, p=5, seed=0, **kw):
    return synthetic_classification_partition(n, m, p, seed=seed, **kw)


def test_logistic_gradient_matches_finite_difference():
    suite = ncvx_logistic_suite(_partition(), R=0.1)
    rng = np.random.default_rng(0)
    for i in range(suite.n):
        x = rng.standard_normal(suite.p)
        assert np.allclose(finite_difference_grad(suite, i, x), suite.local_grad(i, x), atol=1e-7)


def test_logistic_sample_gradients_average_to_local_gradient():
    suite = ncvx_logistic_suite(_partition(), R=0.01)
    x = np.random.default_rng(1).standard_normal((suite.n, suite.p))
    m = suite.counts.min()
    idx = np.tile(np.arange(m), (suite.n, 1))
    assert np.allclose(suite.sample_grads(x, idx), suite.local_grads(x), atol=1e-12)


def test_logistic_smoothness_bounds_quotients():
    suite = ncvx_logistic_suite(_partition(p=3), R=1e-3)
    est = estimate_smoothness(suite, use_closed_form=False, box=3.0)
    assert est / 1.05 <= suite.L


def test_logistic_values_stable_for_large_margins():
    suite = ncvx_logistic_suite(_partition())
    x = np.full((suite.n, suite.p), 1e4)
    assert np.all(np.isfinite(suite.local_values(x)))
    assert np.all(np.isfinite(suite.local_grads(x)))


def test_logistic_unknown_fstar():
    assert ncvx_logistic_suite(_partition()).f_star is None


def test_partition_label_sorted_is_heterogeneous():
    part = _partition(n=4, m=50, heterogeneity="label_sorted")
    fracs = [float(np.mean(y > 0)) for y in part.labels]
    assert fracs[0] == 1.0 and fracs[-1] == 0.0


def test_partition_iid_balanced():
    part = _partition(n=4, m=500)
    fracs = [float(np.mean(y > 0)) for y in part.labels]
    assert all(0.4 < f < 0.6 for f in fracs)
    assert part.counts == [500] * 4


def test_partition_rejects_too_few_samples():
    with pytest.raises(ObjectiveError):
        partition_samples(np.zeros((3, 2)), np.ones(3), 4)


def test_read_samples_maps_01_labels(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("0,1.0,2.0\n1,0.5,0.1\n1,0.0,0.0\n0,3.0,1.0\n")
    s = read_samples(f)
    assert set(s.labels) == {-1.0, 1.0}
    assert s.notices


def test_read_samples_reports_line(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("1,1.0,2.0\n-1,0.5,0.1\n1,0.0\n")
    with pytest.raises(ObjectiveError, match="line 3"):
        read_samples(f)


def test_read_samples_rejects_text(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("1,abc\n")
    with pytest.raises(ObjectiveError, match="line 1"):
        read_samples(f)
