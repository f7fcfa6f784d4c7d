"""Metrics from trajectories, closed-form bounds, and measured-vs-bound checks.

Bounds are in expectation; measured quantities are Monte Carlo trial means and
a check passes when ``mean + 2 * stderr <= bound``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algorithms import Trajectory, max_stable_step_ncvx, max_stable_step_pl
from .objectives import ObjectiveSuite
from .topology import spectral_radius

REL_TOL = 1e-12
MIN_TRIALS = 10


class BoundNotClaimed(ValueError):
    """The inputs fall outside the range where a bound is asserted."""


# ---------------------------------------------------------------------------
# trial statistics


def kahan_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Compensated (Neumaier) sum along ``axis``, vectorized over the remaining axes."""
    a = np.moveaxis(np.asarray(a, float), axis, 0)
    total = np.zeros(a.shape[1:])
    comp = np.zeros(a.shape[1:])
    for row in a:
        t = total + row
        big = np.abs(total) >= np.abs(row)
        comp += np.where(big, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


def trial_mean(a: np.ndarray) -> np.ndarray:
    """Mean over the last (trial) axis with compensated summation."""
    a = np.asarray(a, float)
    return kahan_sum(a, axis=-1) / a.shape[-1]


def trial_stderr(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, float)
    t = a.shape[-1]
    if t < 2:
        return np.zeros(a.shape[:-1])
    return a.std(axis=-1, ddof=1) / math.sqrt(t)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsStream:
    """Per-recorded-k metrics, each field shaped ``(len(k), trials)``."""

    method: str
    k: np.ndarray
    alpha_k: np.ndarray
    loss: np.ndarray
    stationary_gap_avg: np.ndarray
    consensus_err: np.ndarray
    tracking_err: np.ndarray
    opt_gap_mean: np.ndarray | None = None
    opt_gap_nodes: np.ndarray | None = None

    FIELDS = ("loss", "opt_gap_mean", "opt_gap_nodes", "stationary_gap_avg",
              "consensus_err", "tracking_err")

    @property
    def trials(self) -> int:
        return self.loss.shape[1]

    def mean(self, name: str) -> np.ndarray:
        return trial_mean(getattr(self, name))

    def stderr(self, name: str) -> np.ndarray:
        return trial_stderr(getattr(self, name))

    def trial(self, t: int) -> dict:
        return {name: (None if getattr(self, name) is None else getattr(self, name)[:, t])
                for name in self.FIELDS}


def compute_metrics(traj: Trajectory, suite: ObjectiveSuite) -> MetricsStream:
    """Metrics stream for a trajectory; gap fields are ``None`` when ``F*`` is unknown."""
    s = traj.scalars
    ms = MetricsStream(traj.method, traj.k, traj.alpha, s["loss"], s["stationary_gap_avg"],
                       s["consensus_err"], s["tracking_err"])
    if suite.f_star is not None:
        ms.opt_gap_mean = s["f_xbar"] - suite.f_star
        ms.opt_gap_nodes = s["loss"] - suite.f_star
    return ms


def running_average(a: np.ndarray) -> np.ndarray:
    """``(1/(k+1)) sum_{t<=k} a_t`` along axis 0."""
    a = np.asarray(a, float)
    idx = np.arange(1, a.shape[0] + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    return np.cumsum(a, axis=0) / idx


# ---------------------------------------------------------------------------
# bound inputs


@dataclass
class BoundInputs:
    L: float
    lam: float
    n: int
    nu_a_sq: float
    f_gap0: float = 0.0  # F(xbar_0) - F*
    grad0_sq: float = 0.0  # ||grad f_0||^2 over the stacked initial point
    mu: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    estimated_nu: bool = False

    def __post_init__(self):
        for name in ("L", "nu_a_sq", "f_gap0", "grad0_sq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.lam < 1:
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.mu is not None and not 0 < self.mu <= self.L * (1 + REL_TOL):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")

    @property
    def kappa(self) -> float:
        if self.mu is None:
            raise BoundNotClaimed("PL constant mu not supplied")
        return self.L / self.mu

    @property
    def alpha_bar(self) -> float:
        if self.mu is None:
            raise BoundNotClaimed("PL constant mu not supplied")
        return max_stable_step_pl(self.L, self.mu, self.lam)

    def with_(self, **kw) -> "BoundInputs":
        d = dict(self.__dict__)
        d.update(kw)
        return BoundInputs(**d)


def bound_inputs(suite: ObjectiveSuite, lam: float, nu_a_sq: float, x0, **kw) -> BoundInputs:
    """Inputs from a suite and a common starting point ``x0`` replicated at every node."""
    x0 = np.broadcast_to(np.asarray(x0, float), (suite.p,))
    xs = np.broadcast_to(x0, (suite.n, suite.p))
    f_gap0 = float(suite.value(x0) - suite.f_star) if suite.f_star is not None else 0.0
    grad0_sq = float(np.sum(suite.local_grads(xs) ** 2))
    return BoundInputs(L=suite.L, lam=lam, n=suite.n, nu_a_sq=nu_a_sq, f_gap0=f_gap0,
                       grad0_sq=grad0_sq, mu=suite.mu, **kw)


def _require_alpha(inputs: BoundInputs) -> float:
    if inputs.alpha is None or not inputs.alpha > 0:
        raise BoundNotClaimed("a positive constant step alpha is required")
    return inputs.alpha


# ---------------------------------------------------------------------------
# closed-form bounds


@dataclass
class BoundValue:
    total: float
    terms: dict
    groups: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.total)


def theorem1_bound(inputs: BoundInputs, K: int) -> BoundValue:
    """Mean-squared stationary gap bound for a constant step over ``K`` iterations."""
    a = _require_alpha(inputs)
    cap = max_stable_step_ncvx(inputs.L, inputs.lam)
    if a > cap * (1 + REL_TOL):
        raise BoundNotClaimed(f"alpha={a:.6g} exceeds the non-convex cap {cap:.6g}")
    if K < 2:
        raise BoundNotClaimed("K must be >= 2")
    L, lam, n, nu2 = inputs.L, inputs.lam, inputs.n, inputs.nu_a_sq
    gap3 = (1 - lam**2) ** 3
    terms = {
        "initial": 4 * inputs.f_gap0 / (a * K),
        "variance": 2 * a * nu2 * L / n,
        "network_variance": 448 * a**2 * L**2 * lam**2 * nu2 / gap3,
        "network_initial": 64 * a**2 * L**2 * lam**4 / (gap3 * K) * inputs.grad0_sq / n,
    }
    groups = {"centralized": terms["initial"] + terms["variance"],
              "network": terms["network_variance"] + terms["network_initial"]}
    return BoundValue(sum(terms.values()), terms, groups)


def theorem2_steady_state(inputs: BoundInputs) -> dict:
    """Steady-state consensus error and optimality gap under a constant step."""
    a = _require_alpha(inputs)
    abar = inputs.alpha_bar
    if a > abar * (1 + REL_TOL):
        raise BoundNotClaimed(f"alpha={a:.6g} exceeds alpha_bar={abar:.6g}")
    L, lam, n, nu2, kappa = inputs.L, inputs.lam, inputs.n, inputs.nu_a_sq, inputs.kappa
    gap = 1 - lam**2
    consensus = (288 * lam**4 * a**5 * L**3 * kappa * nu2 / (n * gap**4)
                 + 144 * lam**2 * a**2 * nu2 / gap**3)
    opt_gap = 3 * a * kappa * nu2 / (2 * n) + 72 * lam**2 * a**2 * kappa * L * nu2 / gap**3
    return {"consensus_ss": consensus, "opt_gap_ss": opt_gap}


def lemma_constants(inputs: BoundInputs) -> dict:
    """Uniform tracking-error bound ``y_hat`` and the consensus-rate constant ``x_hat``."""
    L, lam, n, nu2 = inputs.L, inputs.lam, inputs.n, inputs.nu_a_sq
    abar, kappa = inputs.alpha_bar, inputs.kappa
    gap = 1 - lam**2
    y_hat = (30 * lam**2 * abar**3 * L**3 * kappa * nu2 / gap**2
             + 60 * n * lam**2 * abar**2 * L**3 * inputs.f_gap0 / gap**2
             + 16 * n * nu2 / gap
             + lam**2 * inputs.grad0_sq)
    return {"y_hat": y_hat, "x_hat": 8 * lam**2 * y_hat / gap**2}


def _check_harmonic(inputs: BoundInputs) -> tuple[float, float]:
    mu, beta, gamma = inputs.mu, inputs.beta, inputs.gamma
    if mu is None or beta is None or gamma is None:
        raise BoundNotClaimed("harmonic bound needs mu, beta and gamma")
    if not beta > 2 / mu:
        raise BoundNotClaimed(f"beta={beta:.6g} must exceed 2/mu={2 / mu:.6g}")
    need = max(beta / inputs.alpha_bar, 8 / (1 - inputs.lam**2))
    if gamma < need * (1 - REL_TOL):
        raise BoundNotClaimed(f"gamma={gamma:.6g} below the required {need:.6g}")
    return beta, gamma


def theorem4_bound(inputs: BoundInputs, k) -> np.ndarray:
    """Bound on the node-averaged optimality gap under ``alpha_k = beta / (k + gamma)``."""
    beta, gamma = _check_harmonic(inputs)
    L, mu, n, nu2 = inputs.L, inputs.mu, inputs.n, inputs.nu_a_sq
    x_hat = lemma_constants(inputs)["x_hat"]
    k = np.asarray(k, float)
    return (2 * L * nu2 * beta**2 / (n * (mu * beta - 1) * (k + gamma))
            + 2 * inputs.f_gap0 / (k / gamma + 1) ** (mu * beta)
            + 3 * L**2 * x_hat * beta**3 / (n * (mu * beta - 2) * (k + gamma) ** 2))


def lemma18_bound(inputs: BoundInputs, k) -> np.ndarray:
    """Bound on ``E||x_k - J x_k||^2`` under the harmonic schedule."""
    beta, gamma = _check_harmonic(inputs)
    x_hat = lemma_constants(inputs)["x_hat"]
    return x_hat * beta**2 / (np.asarray(k, float) + gamma) ** 2


# ---------------------------------------------------------------------------
# LTI systems


def lemma12_step_cap(L: float, lam: float) -> float:
    """Step range on which the non-convex system matrix is a contraction."""
    if lam**2 == 0:
        return math.inf
    gap = 1 - lam**2
    return min(gap / (24 * lam), gap**2 / (15 * lam**2)) / L


@dataclass
class LTIMatrices:
    G: np.ndarray
    rho_G: float
    H: np.ndarray | None = None
    rho_H: float | None = None


def lti_matrices(inputs: BoundInputs, alpha: float) -> LTIMatrices:
    """System matrices of the consensus/tracking (and optimality-gap) recursions."""
    L, lam = inputs.L, inputs.lam
    gap = 1 - lam**2
    diag = (1 + lam**2) / 2
    G = np.array([[diag, 2 * alpha**2 * lam**2 * L**2 / gap],
                  [24 * lam**2 / gap, diag]])
    out = LTIMatrices(G, spectral_radius(G))
    if inputs.mu is not None:
        mu = inputs.mu
        H = np.array([[diag, 0.0, 2 * alpha**2 * lam**2 * L**2 / gap],
                      [alpha * L / 2, 1 - mu * alpha, 0.0],
                      [27 * lam**2 / gap, 24 * lam**2 * alpha**2 * L**2 / gap, diag]])
        out.H, out.rho_H = H, spectral_radius(H)
    return out


# ---------------------------------------------------------------------------
# transient times


def transient_time_ncvx(inputs: BoundInputs) -> dict:
    """Order-level transient time (unit constant) and the exact precondition on ``K``."""
    L, lam, n = inputs.L, inputs.lam, inputs.n
    gap = 1 - lam**2
    order = n**3 * lam**4 * L**2 / (1 - lam) ** 6
    pre = 4 * n * L**2 * max(1.0, 144 * lam**2 / gap**2, 96 * lam**4 / gap**4)
    return {"order_estimate": order, "precondition": pre, "note": "order estimate, unit constant"}


def transient_time_pl(inputs: BoundInputs) -> dict:
    """Six-term transient time under the harmonic schedule (unit constants)."""
    L, lam, n, nu2, kappa = inputs.L, inputs.lam, inputs.n, inputs.nu_a_sq, inputs.kappa
    one = 1 - lam
    terms = [
        lam**2 * n * kappa / one**3,
        lam * kappa**1.25 / one,
        kappa,
        lam**1.5 * kappa**1.375 / one**1.5,
        kappa**-0.5 / one**1.5,
    ]
    omitted = nu2 <= 0
    if not omitted:
        terms.append(lam**2 * n * math.sqrt(kappa) * L * inputs.f_gap0 / (one**2 * nu2))
    return {"total": sum(terms), "terms": terms, "noise_term_omitted": omitted,
            "note": "order estimate, unit constants"}


# ---------------------------------------------------------------------------
# rate fits and bound checks


def rate_fit(k, metric, k_lo: float, k_hi: float) -> float:
    """Least-squares slope of ``log(metric)`` against ``log(k)`` on ``[k_lo, k_hi]``."""
    if k_hi < 10 * k_lo:
        raise ValueError("rate_fit needs k_hi >= 10 * k_lo")
    k = np.asarray(k, float)
    metric = np.asarray(metric, float)
    sel = (k >= k_lo) & (k <= k_hi)
    if sel.sum() < 2:
        raise ValueError("fewer than two points in the fit window")
    if np.any(metric[sel] <= 0):
        raise ValueError("nonpositive metric values in the fit window")
    slope, _ = np.polyfit(np.log(k[sel]), np.log(metric[sel]), 1)
    return float(slope)


@dataclass
class BoundCheck:
    name: str
    value: float  # bound at the binding point
    measured: float  # mean + 2 stderr at the binding point
    margin: float  # value - measured (worst over k for per-k checks)
    passed: bool
    claimed: bool = True
    trials: int = 0
    low_confidence: bool = False
    note: str = ""
    tags: dict = field(default_factory=dict)  # extra key=value pairs, e.g. the run arm

    def row(self) -> str:
        row = (f"kind=bound,name={self.name},value={self.value:.10g},measured={self.measured:.10g},"
               f"margin={self.margin:.10g},pass={'true' if self.passed else 'false'}")
        extra = [f"{k}={v}" for k, v in self.tags.items()]
        if not self.claimed:
            extra.append("claimed=false")
        return ",".join([row] + extra)

    def block(self) -> str:
        head = " ".join([self.name] + [f"{k}={v}" for k, v in self.tags.items()])
        lines = [f"[{head}]", f"claimed = {str(self.claimed).lower()}"]
        if self.claimed:
            lines += [f"value = {self.value:.10g}", f"measured = {self.measured:.10g}",
                      f"margin = {self.margin:.10g}", f"pass = {str(self.passed).lower()}",
                      f"trials = {self.trials}", f"low_confidence = {str(self.low_confidence).lower()}"]
        if self.note:
            lines.append(f"note = {self.note}")
        return "\n".join(lines)


def bound_check(name: str, samples: np.ndarray, bound, mode: str = "final", k=None,
                tail_fraction: float = 0.1, atol: float = 0.0) -> BoundCheck:
    """Compare trial-averaged measurements with a bound.

    ``samples`` is ``(len(k), trials)``.  ``bound`` is a number, an array over
    ``k``, or a callable of ``k`` (or of nothing); a ``BoundNotClaimed`` from it
    yields an unclaimed result rather than a failure.  Modes: ``final`` (last
    record), ``tail`` (per-trial average over the last ``tail_fraction``),
    ``running-average`` (per-trial average over all records) and ``per-k``.
    """
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    trials = samples.shape[1]
    try:
        if callable(bound):
            try:
                b = bound(np.asarray(k, float)) if k is not None else bound()
            except TypeError:
                b = bound()
        else:
            b = bound
    except BoundNotClaimed as exc:
        return BoundCheck(name, math.nan, math.nan, math.nan, True, claimed=False,
                          trials=trials, note=str(exc))
    b = np.asarray(b, float)
    if mode == "per-k":
        meas = trial_mean(samples) + 2 * trial_stderr(samples)
        bb = np.broadcast_to(b, meas.shape)
        slack = bb + atol - meas
        i = int(np.argmin(slack))
        value, measured, margin = float(bb[i]), float(meas[i]), float(slack[i])
    else:
        if mode == "final":
            per_trial = samples[-1]
        elif mode == "tail":
            start = min(int(math.floor((1 - tail_fraction) * samples.shape[0])), samples.shape[0] - 1)
            per_trial = samples[start:].mean(axis=0)
        elif mode == "running-average":
            per_trial = samples.mean(axis=0)
        else:
            raise ValueError(f"unknown bound_check mode {mode!r}")
        measured = float(trial_mean(per_trial[None, :])[0] + 2 * trial_stderr(per_trial[None, :])[0])
        value = float(b if b.ndim == 0 else b[-1])
        margin = value + atol - measured
    return BoundCheck(name, value, measured, margin, margin >= 0, trials=trials,
                      low_confidence=trials < MIN_TRIALS)
