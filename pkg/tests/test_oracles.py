import numpy as np
import pytest
from hypothesis import given, strategies as st

from gtsim.objectives import ncvx_logistic_suite, pl_synthetic_suite, synthetic_classification_partition
from gtsim.oracles import GaussianOracle, OracleError, SamplingOracle, variance_report


@pytest.fixture(scope="module")
def pl():
    return pl_synthetic_suite(8, 0.1)


@pytest.fixture(scope="module")
def logistic():
    part = synthetic_classification_partition(4, 40, 3, seed=0)
    return ncvx_logistic_suite(part, R=1e-3)


def _draws(oracle, x, k):
    return np.stack([oracle.sample_all(x) for _ in range(k)])


def test_gaussian_same_seed_same_stream(pl):
    x = np.zeros((3, 8, 1))
    a = _draws(GaussianOracle(pl, 0.5, seed=7, trials=3), x, 50)
    b = _draws(GaussianOracle(pl, 0.5, seed=7, trials=3), x, 50)
    assert np.array_equal(a, b)
    c = _draws(GaussianOracle(pl, 0.5, seed=8, trials=3), x, 50)
    assert not np.array_equal(a, c)


@given(st.integers(1, 64))
def test_block_size_does_not_change_stream(block):
    suite = pl_synthetic_suite(4, 0.1)
    x = np.zeros((2, 4, 1))
    ref = _draws(GaussianOracle(suite, 1.0, seed=3, trials=2, block=1024), x, 100)
    got = _draws(GaussianOracle(suite, 1.0, seed=3, trials=2, block=block), x, 100)
    assert np.array_equal(ref, got)


def test_trial_chunks_match_full_batch(pl):
    x = np.zeros((6, 8, 1))
    full = _draws(GaussianOracle(pl, 0.5, seed=1, trials=6), x, 30)
    lo = _draws(GaussianOracle(pl, 0.5, seed=1, trials=2), x[:2], 30)
    hi = _draws(GaussianOracle(pl, 0.5, seed=1, trials=4, trial_offset=2), x[2:], 30)
    assert np.array_equal(full, np.concatenate([lo, hi], axis=1))


def test_single_node_draw_matches_batched_draw(pl):
    x = np.full((1, 8, 1), 0.3)
    a = GaussianOracle(pl, 0.5, seed=2)
    b = GaussianOracle(pl, 0.5, seed=2)
    batched = a.sample_all(x[0])
    single = np.stack([b.sample(i, x[0, i]) for i in range(8)])
    assert np.array_equal(batched, single)


def test_nodes_are_independent_streams(pl):
    d = _draws(GaussianOracle(pl, 1.0, seed=0), np.zeros((8, 1)), 4000)[..., 0]
    corr = np.corrcoef(d.T)
    off = corr[~np.eye(8, dtype=bool)]
    assert np.abs(off).max() < 0.08


def test_gaussian_exact_when_sigma_zero(pl):
    o = GaussianOracle(pl, 0.0)
    assert o.exact and o.nu_a_sq == 0.0
    x = np.full((8, 1), 1.3)
    assert np.array_equal(o.sample_all(x), pl.local_grads(x))


def test_gaussian_variance_and_bias(pl):
    o = GaussianOracle(pl, 0.5, seed=4)
    rep = variance_report(o, np.array([0.7]), draws=20000)
    assert rep.nu_a_sq == pytest.approx(0.25, rel=0.05)
    assert np.abs(rep.mean_err).max() < 4 * 0.5 / np.sqrt(20000)


def test_gaussian_nu_is_p_sigma_sq(logistic):
    o = GaussianOracle(logistic, 0.2)
    assert np.allclose(o.nu_sq, 3 * 0.04)


def test_gaussian_rejects_negative_sigma(pl):
    with pytest.raises(OracleError):
        GaussianOracle(pl, -1.0)


def test_shape_errors(pl):
    o = GaussianOracle(pl, 0.5, trials=2)
    with pytest.raises(OracleError, match="trials"):
        o.sample_all(np.zeros((8, 1)))
    with pytest.raises(OracleError):
        o.sample_all(np.zeros((2, 7, 1)))


def test_sampling_oracle_unbiased(logistic):
    o = SamplingOracle(logistic, batch=1, seed=0, nu_draws=2000)
    x = np.full(3, 0.4)
    rep = variance_report(o.clone(), x, draws=20000)
    scale = np.sqrt(rep.nu_sq.max() / 20000)
    assert np.abs(rep.mean_err).max() < 5 * scale


def test_sampling_oracle_variance_estimate(logistic):
    o = SamplingOracle(logistic, batch=1, seed=0, nu_draws=20000)
    # exact per-node variance by enumerating every sample
    x = np.zeros((logistic.n, logistic.p))
    m = logistic.counts.min()
    idx = np.arange(m)[None, :, None].repeat(logistic.n, 0)
    per = np.stack([logistic.sample_grads(x, idx[:, j]) for j in range(m)])
    exact = np.mean(np.sum((per - logistic.local_grads(x)) ** 2, axis=-1), axis=0)
    assert np.allclose(o.nu_sq, exact, rtol=0.05)
    assert o.estimated_nu


def test_sampling_batch_reduces_variance(logistic):
    o1 = SamplingOracle(logistic, batch=1, seed=0, nu_draws=5000)
    o8 = SamplingOracle(logistic, batch=8, seed=0, nu_draws=5000)
    assert o8.nu_a_sq == pytest.approx(o1.nu_a_sq / 8, rel=0.2)


def test_sampling_rejects_bad_batch(logistic):
    with pytest.raises(OracleError, match="batch"):
        SamplingOracle(logistic, batch=1000)


def test_sampling_needs_finite_sum(pl):
    with pytest.raises(OracleError):
        SamplingOracle(pl)


def test_variance_report_needs_draws(pl):
    with pytest.raises(OracleError):
        variance_report(GaussianOracle(pl, 0.1), np.zeros(1), draws=10)


def test_clone_replays(logistic):
    o = SamplingOracle(logistic, seed=9, trials=2, nu_draws=500)
    x = np.zeros((2, 4, 3))
    a = _draws(o.clone(), x, 20)
    b = _draws(o.clone(), x, 20)
    assert np.array_equal(a, b)
