"""Stochastic gradient oracles with one independent random stream per (trial, node).

Streams are seeded from ``SeedSequence(seed, spawn_key=(trial, node))`` and
consumed in blocks; block size does not change the sequence a stream yields.
Oracles are batched over Monte Carlo trials: ``sample_all`` takes node states
of shape ``(trials, n, p)`` (or ``(n, p)`` when ``trials == 1``).
"""

from __future__ import annotations

import numpy as np

from .objectives import LogisticSuite, ObjectiveSuite

BLOCK = 1024
VARIANCE_DRAWS = 10_000
# spawn-key offset for streams used only to estimate variances
ESTIMATION_TRIAL = 2**31


class OracleError(ValueError):
    pass


class _StreamBank:
    """Buffered per-stream draws. ``draw(rng, node, count)`` returns ``(count, *shape)``."""

    def __init__(self, seed, trials, n, draw, shape, dtype, trial_offset=0, block=BLOCK):
        self.trials, self.n, self.block = trials, n, block
        self._draw = draw
        self.rngs = [[np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_offset + t, i)))
                      for i in range(n)] for t in range(trials)]
        self.buf = np.empty((trials, n, block) + shape, dtype=dtype)
        self.pos = np.full((trials, n), block)
        self._tt, self._nn = np.meshgrid(np.arange(trials), np.arange(n), indexing="ij")

    def _refill(self, t, i):
        self.buf[t, i] = self._draw(self.rngs[t][i], i, self.block)
        self.pos[t, i] = 0

    def next_all(self) -> np.ndarray:
        """One draw from every stream, shape ``(trials, n, *shape)``."""
        p0 = self.pos[0, 0]
        if p0 < self.block and np.all(self.pos == p0):
            out = self.buf[:, :, p0].copy()
            self.pos += 1
            return out
        for t, i in zip(*np.nonzero(self.pos >= self.block)):
            self._refill(t, i)
        out = self.buf[self._tt, self._nn, self.pos]
        self.pos += 1
        return out

    def next_one(self, t, i) -> np.ndarray:
        if self.pos[t, i] >= self.block:
            self._refill(t, i)
        out = self.buf[t, i, self.pos[t, i]].copy()
        self.pos[t, i] += 1
        return out


class GradientOracle:
    """Base oracle. Subclasses set ``nu_sq`` and implement ``_draw_batch``."""

    mode = "base"
    estimated_nu = False

    def __init__(self, suite: ObjectiveSuite, seed: int = 0, trials: int = 1, trial_offset: int = 0):
        self.suite = suite
        self.seed, self.trials, self.trial_offset = seed, trials, trial_offset
        self.n, self.p = suite.n, suite.p
        self.nu_sq = np.zeros(self.n)

    @property
    def nu_a_sq(self) -> float:
        return float(np.mean(self.nu_sq))

    @property
    def exact(self) -> bool:
        return False

    def _shape(self, x):
        x = np.asarray(x, float)
        if x.shape == (self.n, self.p):
            if self.trials != 1:
                raise OracleError(f"oracle has {self.trials} trials; pass states of shape (trials, n, p)")
            return x[None], True
        if x.shape != (self.trials, self.n, self.p):
            raise OracleError(f"expected states of shape {(self.trials, self.n, self.p)}, got {x.shape}")
        return x, False

    def sample_all(self, x) -> np.ndarray:
        """One stochastic gradient per (trial, node) at the given node states."""
        xs, squeeze = self._shape(x)
        g = self._draw_batch(xs)
        return g[0] if squeeze else g

    def sample(self, i: int, x, trial: int = 0) -> np.ndarray:
        """One stochastic gradient of ``f_i`` at ``x`` from node ``i``'s stream."""
        raise NotImplementedError

    def clone(self, trials: int | None = None, trial_offset: int | None = None):
        raise NotImplementedError


class GaussianOracle(GradientOracle):
    """Exact local gradient plus ``N(0, sigma_i^2 I_p)`` noise."""

    mode = "gaussian"

    def __init__(self, suite, sigma, seed=0, trials=1, trial_offset=0, block=BLOCK):
        super().__init__(suite, seed, trials, trial_offset)
        sigma = np.broadcast_to(np.asarray(sigma, float), (self.n,)).copy()
        if np.any(sigma < 0):
            raise OracleError("sigma must be >= 0")
        self.sigma = sigma
        self.nu_sq = self.p * sigma**2
        self._block = block
        self._bank = None
        if np.any(sigma > 0):
            p = self.p
            self._bank = _StreamBank(seed, trials, self.n,
                                     lambda rng, i, count: rng.standard_normal((count, p)),
                                     (p,), float, trial_offset, block)

    @property
    def exact(self) -> bool:
        return self._bank is None

    def _draw_batch(self, xs):
        g = self.suite.local_grads(xs)
        if self._bank is not None:
            g = g + self.sigma[:, None] * self._bank.next_all()
        return g

    def sample(self, i, x, trial=0):
        g = self.suite.local_grad(i, x)
        if self._bank is not None:
            g = g + self.sigma[i] * self._bank.next_one(trial, i)
        return g

    def clone(self, trials=None, trial_offset=None):
        return GaussianOracle(self.suite, self.sigma, self.seed,
                              self.trials if trials is None else trials,
                              self.trial_offset if trial_offset is None else trial_offset,
                              self._block)


def gaussian_oracle(suite, sigma, seed=0, trials=1, trial_offset=0) -> GaussianOracle:
    return GaussianOracle(suite, sigma, seed, trials, trial_offset)


class SamplingOracle(GradientOracle):
    """Minibatch of ``b`` samples drawn uniformly with replacement from each node's shard."""

    mode = "sampling"
    estimated_nu = True

    def __init__(self, suite: LogisticSuite, batch=1, seed=0, trials=1, trial_offset=0,
                 x0=None, nu_draws=VARIANCE_DRAWS, block=BLOCK, nu_sq=None):
        if not isinstance(suite, LogisticSuite):
            raise OracleError("sampling oracle needs a finite-sum (logistic) suite")
        super().__init__(suite, seed, trials, trial_offset)
        counts = suite.counts
        if counts.min() < 1:
            raise OracleError("empty shard")
        if not 1 <= batch <= counts.min():
            raise OracleError(f"batch must lie in [1, {counts.min()}], got {batch}")
        self.batch = batch
        self._block = block
        self._nu_draws = nu_draws
        self.x0 = np.zeros(self.p) if x0 is None else np.asarray(x0, float)
        self._bank = _StreamBank(seed, trials, self.n,
                                 lambda rng, i, count: rng.integers(0, counts[i], (count, batch)),
                                 (batch,), np.int64, trial_offset, block)
        if nu_sq is None:
            probe = SamplingOracle(suite, batch, seed, trials=1, trial_offset=ESTIMATION_TRIAL,
                                   block=block, nu_sq=np.zeros(self.n))
            nu_sq = variance_report(probe, self.x0, nu_draws).nu_sq
        self.nu_sq = np.asarray(nu_sq, float)

    def _draw_batch(self, xs):
        return self.suite.sample_grads(xs, self._bank.next_all())

    def sample(self, i, x, trial=0):
        idx = self._bank.next_one(trial, i)
        f = self.suite.feats[i, idx]
        y = self.suite.labels[i, idx]
        x = np.asarray(x, float)
        z = (f @ x) * y
        coef = -0.5 * (1.0 + np.tanh(-0.5 * z)) * y / len(idx)
        return coef @ f + self.suite.regularizer_grad(x)

    def clone(self, trials=None, trial_offset=None):
        return SamplingOracle(self.suite, self.batch, self.seed,
                              self.trials if trials is None else trials,
                              self.trial_offset if trial_offset is None else trial_offset,
                              self.x0, self._nu_draws, self._block, nu_sq=self.nu_sq)


def sampling_oracle(suite, batch=1, seed=0, trials=1, trial_offset=0, x0=None) -> SamplingOracle:
    return SamplingOracle(suite, batch, seed, trials, trial_offset, x0)


class VarianceReport:
    def __init__(self, nu_sq, mean_err):
        self.nu_sq = np.asarray(nu_sq)
        self.mean_err = np.asarray(mean_err)

    @property
    def nu_a_sq(self) -> float:
        return float(np.mean(self.nu_sq))

    def __repr__(self):
        return f"VarianceReport(nu_sq={self.nu_sq}, nu_a_sq={self.nu_a_sq:.6g})"


def variance_report(oracle: GradientOracle, x, draws: int = VARIANCE_DRAWS) -> VarianceReport:
    """Empirical ``E||g_i - grad f_i||^2`` per node at ``x`` (all nodes at the same point).

    Consumes ``draws`` samples from trial 0 of the oracle's streams; pass a
    dedicated oracle (see ``clone``) to keep a run's streams untouched.
    """
    if draws < 100:
        raise OracleError("variance_report needs draws >= 100")
    suite = oracle.suite
    x = np.broadcast_to(np.asarray(x, float), (oracle.n, oracle.p))
    xs = np.broadcast_to(x, (oracle.trials, oracle.n, oracle.p))
    exact = suite.local_grads(x)
    sq = np.zeros(oracle.n)
    mean = np.zeros((oracle.n, oracle.p))
    for _ in range(draws):
        dev = oracle.sample_all(xs)[0] - exact
        sq += np.sum(dev**2, axis=-1)
        mean += dev
    return VarianceReport(sq / draws, mean / draws)
