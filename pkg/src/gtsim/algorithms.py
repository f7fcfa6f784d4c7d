"""GT-DSGD, DSGD and centralized minibatch SGD, plus step-size schedules.

All steppers are shape-polymorphic: node states have shape ``(..., n, p)``
and mixing is ``W @ x`` (the blockwise action of ``W kron I_p``).  ``run``
drives a whole batch of Monte Carlo trials at once; each trial draws from its
own oracle streams, so trial ``t`` of a batched run is bit-identical to the
same trial run on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import ObjectiveSuite
from .oracles import GradientOracle
from .topology import WeightMatrix

DIVERGENCE_LIMIT = 1e12
REL_TOL = 1e-12


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class StepSchedule:
    variant: str  # constant | poly_decay | harmonic
    alpha: float | None = None
    delta: float | None = None
    phi: float | None = None
    epsilon: float | None = None
    beta: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        needed = {"constant": ("alpha",), "poly_decay": ("delta", "phi", "epsilon"),
                  "harmonic": ("beta", "gamma")}
        if self.variant not in needed:
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        for name in needed[self.variant]:
            value = getattr(self, name)
            if value is None or not value > 0:
                raise ValueError(f"{self.variant} schedule needs {name} > 0, got {value}")

    @classmethod
    def constant(cls, alpha):
        return cls("constant", alpha=alpha)

    @classmethod
    def poly_decay(cls, delta, phi, epsilon):
        return cls("poly_decay", delta=delta, phi=phi, epsilon=epsilon)

    @classmethod
    def harmonic(cls, beta, gamma):
        return cls("harmonic", beta=beta, gamma=gamma)

    def value(self, k):
        if self.variant == "constant":
            return self.alpha if np.ndim(k) == 0 else np.full(np.shape(k), self.alpha)
        if self.variant == "poly_decay":
            return self.delta * (k + self.phi) ** (-self.epsilon)
        return self.beta / (k + self.gamma)

    def describe(self) -> str:
        if self.variant == "constant":
            return f"constant(alpha={self.alpha:.6g})"
        if self.variant == "poly_decay":
            return f"poly_decay(delta={self.delta:.6g}, phi={self.phi:.6g}, epsilon={self.epsilon:.6g})"
        return f"harmonic(beta={self.beta:.6g}, gamma={self.gamma:.6g})"


def max_stable_step_ncvx(L: float, lam: float) -> float:
    """Largest constant step for the general non-convex guarantee."""
    if not 0 <= lam < 1:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if L <= 0:
        raise ValueError("L must be positive")
    terms = [1.0]
    if lam**2 > 0:  # lambda so small that lambda^2 underflows behaves like lambda = 0
        gap = 1 - lam**2
        terms += [gap / (12 * lam), gap**2 / (4 * math.sqrt(6) * lam**2)]
    return min(terms) / (2 * L)


def max_stable_step_pl(L: float, mu: float, lam: float) -> float:
    """``alpha_bar``: largest constant step covered by the PL analysis."""
    if not 0 <= lam < 1:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    kappa = L / mu
    gap = 1 - lam**2
    terms = [1 / (2 * L), gap / (2 * mu)]
    if lam**2 > 0:
        terms += [gap**2 / (42 * lam**2 * L), gap / (24 * lam * L * kappa**0.25)]
    return min(terms)


def corollary2_schedule(L: float, mu: float, lam: float) -> StepSchedule:
    """Harmonic schedule with ``beta = 6/mu`` and the matching smallest ``gamma``."""
    abar = max_stable_step_pl(L, mu, lam)
    return StepSchedule.harmonic(6 / mu, max(6 / (mu * abar), 8 / (1 - lam**2)))


def theorem3_schedule(L: float, mu: float, lam: float, epsilon: float,
                      delta: float | None = None) -> StepSchedule:
    """Polynomial decay with ``delta = 1/mu`` and the smallest admissible ``phi``."""
    abar = max_stable_step_pl(L, mu, lam)
    delta = 1 / mu if delta is None else delta
    return StepSchedule.poly_decay(delta, max((delta / abar) ** (1 / epsilon), 4 / (1 - lam**2)),
                                   epsilon)


@dataclass
class ScheduleReport:
    checks: list = field(default_factory=list)  # (name, passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]

    def __str__(self):
        return "\n".join(f"[{'pass' if ok else 'FAIL'}] {name}: {detail}"
                         for name, ok, detail in self.checks)


def _leq(a, b):
    return a <= b * (1 + REL_TOL)


def validate_schedule(schedule: StepSchedule, L: float, mu: float | None, lam: float) -> ScheduleReport:
    """Check a schedule against the step-size conditions of the matching guarantee."""
    rep = ScheduleReport()
    gap = 1 - lam**2
    if schedule.variant == "constant":
        if mu is None:
            cap = max_stable_step_ncvx(L, lam)
            name = "alpha <= alpha_bar_ncvx"
        else:
            cap = max_stable_step_pl(L, mu, lam)
            name = "alpha <= alpha_bar"
        ok = _leq(schedule.alpha, cap)
        rep.checks.append((name, ok, f"alpha={schedule.alpha:.6g} "
                           + ("within" if ok else "exceeds alpha_bar") + f" {cap:.6g}"))
        return rep
    if mu is None:
        rep.checks.append(("PL constant", False, "decaying schedules are only analysed under PL"))
        return rep
    abar = max_stable_step_pl(L, mu, lam)
    if schedule.variant == "poly_decay":
        eps, delta, phi = schedule.epsilon, schedule.delta, schedule.phi
        rep.checks.append(("epsilon in (0.5, 1]", 0.5 < eps <= 1, f"epsilon={eps:.6g}"))
        rep.checks.append(("delta >= 1/mu", _leq(1 / mu, delta), f"delta={delta:.6g}, 1/mu={1 / mu:.6g}"))
        need = max((delta / abar) ** (1 / eps), 4 / gap)
        rep.checks.append(("phi >= max{(delta/alpha_bar)^(1/epsilon), 4/(1-lambda^2)}",
                           _leq(need, phi), f"phi={phi:.6g}, required {need:.6g}"))
    else:
        beta, gamma = schedule.beta, schedule.gamma
        rep.checks.append(("beta > 2/mu", beta > 2 / mu, f"beta={beta:.6g}, 2/mu={2 / mu:.6g}"))
        need = max(beta / abar, 8 / gap)
        rep.checks.append(("gamma >= max{beta/alpha_bar, 8/(1-lambda^2)}", _leq(need, gamma),
                           f"gamma={gamma:.6g}, required {need:.6g}"))
    return rep


# ---------------------------------------------------------------------------
# steppers


@dataclass
class AlgorithmState:
    k: int
    x: np.ndarray
    y: np.ndarray
    g_prev: np.ndarray

    @classmethod
    def initial(cls, x0: np.ndarray) -> "AlgorithmState":
        x0 = np.array(x0, float)
        return cls(0, x0, np.zeros_like(x0), np.zeros_like(x0))

    @property
    def x_bar(self):
        return self.x.mean(axis=-2)

    @property
    def y_bar(self):
        return self.y.mean(axis=-2)

    @property
    def g_bar(self):
        return self.g_prev.mean(axis=-2)


def _weights(W):
    return W.w if isinstance(W, WeightMatrix) else np.asarray(W, float)


def _check_finite(g, x, k):
    big = float(np.abs(x).max()) if x.size else 0.0
    if big <= DIVERGENCE_LIMIT:  # also false for NaN
        return
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite stochastic gradient at iteration {k}")
    raise DivergenceError(f"iterate magnitude {big:.3g} exceeds {DIVERGENCE_LIMIT:g} at iteration {k}")


def gt_dsgd_step(state: AlgorithmState, W, oracle: GradientOracle, alpha: float) -> AlgorithmState:
    if not alpha > 0:
        raise ValueError("step size must be positive")
    w = _weights(W)
    g = oracle.sample_all(state.x)
    # (y - g_prev) + g keeps y == g bit-exact when n == 1
    y = w @ ((state.y - state.g_prev) + g)
    x = w @ (state.x - alpha * y)
    _check_finite(g, x, state.k)
    return AlgorithmState(state.k + 1, x, y, g)


def dsgd_step(state: AlgorithmState, W, oracle: GradientOracle, alpha: float) -> AlgorithmState:
    """Adapt-then-combine DSGD: ``x_{k+1} = W (x_k - alpha g_k)``."""
    if not alpha > 0:
        raise ValueError("step size must be positive")
    w = _weights(W)
    g = oracle.sample_all(state.x)
    x = w @ (state.x - alpha * g)
    _check_finite(g, x, state.k)
    return AlgorithmState(state.k + 1, x, state.y, g)


def centralized_sgd_step(x, suite: ObjectiveSuite, oracle: GradientOracle, alpha: float,
                         batch: int | None = None) -> np.ndarray:
    """One minibatch SGD step on ``F`` at the shared point ``x`` (shape ``(..., p)``).

    The minibatch takes one draw per node oracle per round, in node order,
    until ``batch`` draws are collected (default ``batch = n``).
    """
    n = suite.n
    batch = n if batch is None else batch
    if batch < 1:
        raise ValueError("batch must be >= 1")
    x = np.asarray(x, float)
    xs = np.broadcast_to(x[..., None, :], x.shape[:-1] + (n, suite.p))
    rounds = -(-batch // n)
    draws = [oracle.sample_all(xs) for _ in range(rounds)]
    g = draws[0] if rounds == 1 else np.concatenate(draws, axis=-2)
    g = g[..., :batch, :].mean(axis=-2)
    x_new = x - alpha * g
    _check_finite(g, x_new, -1)
    return x_new


# ---------------------------------------------------------------------------
# run engine

METRIC_FIELDS = ("loss", "f_xbar", "stationary_gap_avg", "consensus_err", "tracking_err")


@dataclass
class Trajectory:
    method: str
    k: np.ndarray  # recorded iteration indices
    alpha: np.ndarray  # alpha_k at recorded k
    scalars: dict  # name -> (len(k), trials) array
    final_x: np.ndarray
    trials: int
    n: int
    p: int
    stride: int
    seed: int | None = None
    trial_offset: int = 0
    schedule: str = ""
    topology: str = ""
    iters: int = 0
    diverged: bool = False
    divergence_msg: str = ""
    left_box: bool = False
    identity_residual: float = 0.0  # max_k ||ybar_{k+1} - gbar_k||_inf
    mean_residual: float = 0.0  # max_k ||xbar_{k+1} - (xbar_k - alpha_k gbar_k)||_inf
    contraction_excess: float = -np.inf  # max over sampled mixings of ||Wv-Jv|| - lam ||v-Jv||
    states: list = field(default_factory=list)  # (k, x) snapshots

    @property
    def x_bar(self) -> np.ndarray:
        return self.final_x.mean(axis=-2)


def initial_point(p: int, value=None, seed: int | None = None) -> np.ndarray:
    """Common starting point: a constant, a given vector, or a seeded Gaussian draw."""
    if value is None:
        rng = np.random.default_rng(seed)
        return rng.standard_normal(p)
    return np.broadcast_to(np.asarray(value, float), (p,)).copy()


def node_metrics(x: np.ndarray, suite: ObjectiveSuite) -> dict:
    """Per-trial scalars for node states ``x`` of shape ``(trials, n, p)``."""
    n = x.shape[-2]
    xbar = x.mean(axis=-2)
    dev = x - xbar[..., None, :]
    f_nodes = suite.value(x)
    g_nodes = suite.grad(x)
    return {
        "loss": f_nodes.mean(axis=-1),
        "f_xbar": suite.value(xbar),
        "stationary_gap_avg": np.sum(g_nodes**2, axis=-1).mean(axis=-1),
        "consensus_err": np.sum(dev**2, axis=(-2, -1)) / n,
    }


def _deviation_sq(v):
    return np.sum((v - v.mean(axis=-2, keepdims=True)) ** 2, axis=(-2, -1))


def run(method: str, suite: ObjectiveSuite, oracle: GradientOracle, schedule: StepSchedule,
        iters: int, W=None, x0=None, stride: int = 1, state_stride: int = 100,
        central_batch: int | None = None, contraction_every: int = 50,
        topology: str = "") -> Trajectory:
    """Iterate ``method`` for ``iters`` steps over all oracle trials.

    Scalars are recorded at every ``stride``-th iteration (always including
    ``k = 0``); full node states every ``state_stride``-th (0 disables).
    Divergence stops the run and returns the partial trajectory flagged
    ``diverged``.
    """
    if method not in ("gt_dsgd", "dsgd", "centralized"):
        raise ValueError(f"unknown method {method!r}")
    if iters < 1 or stride < 1:
        raise ValueError("iters and stride must be >= 1")
    n, p, T = suite.n, suite.p, oracle.trials
    decentralized = method != "centralized"
    if decentralized and W is None:
        raise ValueError(f"{method} needs a weight matrix")
    w = _weights(W) if decentralized else None
    lam = W.lam if isinstance(W, WeightMatrix) else None
    if x0 is None:
        x0 = np.zeros(p)
    x0 = np.broadcast_to(np.asarray(x0, float), (p,))

    record_ks = np.arange(0, iters, stride)
    alphas = np.asarray(schedule.value(record_ks.astype(float)), float)
    scalars = {name: np.full((len(record_ks), T), np.nan) for name in METRIC_FIELDS}
    traj = Trajectory(method, record_ks, alphas, scalars, None, T, n, p, stride,
                      seed=getattr(oracle, "seed", None), trial_offset=getattr(oracle, "trial_offset", 0),
                      schedule=schedule.describe(), topology=topology, iters=iters)

    if decentralized:
        state = AlgorithmState.initial(np.broadcast_to(x0, (T, n, p)))
        step = gt_dsgd_step if method == "gt_dsgd" else dsgd_step
    else:
        xc = np.broadcast_to(x0, (T, p)).copy()
    box = suite.box
    r = 0
    k = 0
    try:
        for k in range(iters):
            alpha = float(schedule.value(float(k)))
            x_now = state.x if decentralized else xc[:, None, :]
            recording = r < len(record_ks) and record_ks[r] == k
            if recording:
                for name, val in node_metrics(x_now, suite).items():
                    scalars[name][r] = val
            if state_stride and k % state_stride == 0:
                traj.states.append((k, x_now.copy()))
            if not decentralized:
                xc = centralized_sgd_step(xc, suite, oracle, alpha, central_batch)
                if box is not None and not traj.left_box and np.max(np.abs(xc)) > box:
                    traj.left_box = True
                if recording:
                    r += 1
                continue
            new = step(state, w, oracle, alpha)
            if method == "gt_dsgd":
                gbar = new.g_prev.mean(axis=-2)
                traj.identity_residual = max(traj.identity_residual,
                                             float(np.max(np.abs(new.y.mean(axis=-2) - gbar))))
                pred = state.x.mean(axis=-2) - alpha * gbar
                traj.mean_residual = max(traj.mean_residual,
                                         float(np.max(np.abs(new.x.mean(axis=-2) - pred))))
                if recording:
                    scalars["tracking_err"][r] = _deviation_sq(new.y) / n
                if contraction_every and k % contraction_every == 0 and lam is not None:
                    v = state.x - alpha * new.y
                    excess = np.sqrt(_deviation_sq(new.x)) - lam * np.sqrt(_deviation_sq(v))
                    traj.contraction_excess = max(traj.contraction_excess, float(excess.max()))
            elif contraction_every and k % contraction_every == 0 and lam is not None:
                v = state.x - alpha * new.g_prev
                excess = np.sqrt(_deviation_sq(new.x)) - lam * np.sqrt(_deviation_sq(v))
                traj.contraction_excess = max(traj.contraction_excess, float(excess.max()))
            state = new
            if box is not None and not traj.left_box and np.max(np.abs(state.x)) > box:
                traj.left_box = True
            if recording:
                r += 1
    except DivergenceError as exc:
        traj.diverged = True
        traj.divergence_msg = str(exc)
        traj.k = record_ks[:r]
        traj.alpha = alphas[:r]
        traj.scalars = {name: v[:r] for name, v in scalars.items()}
        traj.iters = k
    if decentralized:
        traj.final_x = state.x
    else:
        traj.final_x = xc[:, None, :]
    return traj
