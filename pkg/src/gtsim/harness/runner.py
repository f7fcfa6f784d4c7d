"""Monte Carlo orchestration: resolve a config, run every arm, write CSV and manifest.

An *arm* is one (method, topology, schedule) combination.  Every arm runs the
same trials with the same master seed, so arms share their oracle noise.
Trials of an arm are split into chunks that run on a thread pool; chunking
does not change results because each (trial, node) owns its random stream.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..algorithms import (StepSchedule, Trajectory, corollary2_schedule, max_stable_step_ncvx,
                          max_stable_step_pl, run, validate_schedule)
from ..analysis import (BoundCheck, BoundInputs, BoundNotClaimed, MetricsStream, bound_check,
                        compute_metrics,
                        lemma18_bound, lemma_constants, theorem1_bound, theorem2_steady_state,
                        theorem4_bound)
from ..objectives import (DatasetPartition, ObjectiveError, ObjectiveSuite, ncvx_logistic_suite,
                          partition_samples, pl_synthetic_suite, quadratic_suite, read_samples,
                          synthetic_classification_partition)
from ..oracles import GaussianOracle, GradientOracle, SamplingOracle
from ..topology import TopologyError, WeightMatrix, build_weights
from .config import ConfigError, ExperimentConfig, parse_step_token

log = logging.getLogger("gtsim")

CSV_COLUMNS = ("trial", "k", "method", "alpha_k", "loss", "opt_gap_mean", "opt_gap_nodes",
               "stationary_gap_avg", "consensus_err", "tracking_err")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_BOUND = 0, 1, 2, 3


def load_dataset(path, strategy: str = "iid", n: int = 16, seed: int = 0) -> DatasetPartition:
    """Read a ``label,features...`` file and split it across ``n`` nodes."""
    samples = read_samples(path)
    for notice in samples.notices:
        log.warning("%s: %s", path, notice)
        print(f"notice: {notice}")
    part = partition_samples(samples.features, samples.labels, n, strategy, seed)
    summary = part.summary()
    log.info("%s", summary)
    print(summary)
    return part


# ---------------------------------------------------------------------------
# resolution


@dataclass
class Arm:
    label: str
    method: str
    family: str  # "" for the centralized comparator
    schedule: StepSchedule
    variant: str  # schedule token that produced this arm
    warnings: list = field(default_factory=list)


@dataclass
class Resolved:
    cfg: ExperimentConfig
    suite: ObjectiveSuite
    weights: dict  # family -> WeightMatrix
    oracle: GradientOracle
    arms: list
    x0: np.ndarray
    iters_per_epoch: float | None = None


def _build_suite(cfg: ExperimentConfig) -> ObjectiveSuite:
    s, n = cfg.suite, cfg.topology.n
    if s.problem == "pl":
        return pl_synthetic_suite(n, s.hetero_scale, s.box)
    if s.problem == "quadratic":
        return quadratic_suite(n, s.dim, s.spread, s.curvature, seed=s.data_seed)
    if s.dataset:
        part = load_dataset(s.dataset, s.partition, n, s.data_seed)
    else:
        part = synthetic_classification_partition(
            n, s.samples_per_node, s.dim, s.partition, seed=s.data_seed,
            separation=s.separation, scale=s.feature_scale or None)
    return ncvx_logistic_suite(part, s.reg)


def _step_value(tok: str, suite: ObjectiveSuite, lam: float, iters: int) -> float:
    scale, name = parse_step_token(tok)
    if name is None:
        return scale
    if name == "alpha_bar":
        if suite.mu is None:
            raise ConfigError("[schedule] alpha = alpha_bar needs a suite with a PL constant")
        return scale * max_stable_step_pl(suite.L, suite.mu, lam)
    if name == "ncvx":
        return scale * max_stable_step_ncvx(suite.L, lam)
    return scale * math.sqrt(suite.n / iters)


def _auto(text: str, default: float) -> float:
    return default if text == "auto" else float(text)


def _schedules(cfg: ExperimentConfig, suite: ObjectiveSuite, lam: float) -> list[tuple[str, StepSchedule]]:
    sc = cfg.schedule
    if sc.schedule == "constant":
        return [(tok, StepSchedule.constant(_step_value(tok, suite, lam, cfg.run.iters))) for tok in sc.alpha]
    needs_mu = [name for name in ("delta", "phi", "beta", "gamma") if getattr(sc, name) == "auto"]
    if suite.mu is None and needs_mu and sc.schedule in ("poly_decay", "harmonic"):
        raise ConfigError(f"[schedule] {', '.join(needs_mu)} = auto needs a suite with a PL constant")
    if sc.schedule == "harmonic":
        d = corollary2_schedule(suite.L, suite.mu, lam) if needs_mu else None
        return [("harmonic", StepSchedule.harmonic(_auto(sc.beta, d and d.beta), _auto(sc.gamma, d and d.gamma)))]
    out = []
    abar = max_stable_step_pl(suite.L, suite.mu, lam) if suite.mu is not None else None
    for eps in sc.epsilon:
        delta = _auto(sc.delta, 1 / suite.mu if suite.mu else 1.0)
        if sc.phi == "auto":
            phi = max((delta / abar) ** (1 / eps), 4 / (1 - lam**2))
        else:
            phi = float(sc.phi)
        out.append((f"epsilon={eps:g}", StepSchedule.poly_decay(delta, phi, eps)))
    return out


def resolve(cfg: ExperimentConfig) -> Resolved:
    """Turn a config into concrete objects; all failures surface as ``ConfigError``."""
    t = cfg.topology
    try:
        suite = _build_suite(cfg)
        weights = {}
        for fam in t.families:
            _, W = build_weights(fam, t.n, t.rows or None, t.cols or None, t.radius or None,
                                 t.graph_seed, None if t.rule == "auto" else t.rule)
            weights[fam] = W
        x0 = np.full(suite.p, cfg.run.x0)
        o = cfg.oracle
        if o.oracle == "gaussian":
            oracle = GaussianOracle(suite, o.sigma, cfg.run.seed, trials=cfg.run.trials)
        else:
            oracle = SamplingOracle(suite, o.batch, cfg.run.seed, trials=cfg.run.trials, x0=x0,
                                    nu_draws=o.nu_draws)
    except (TopologyError, ObjectiveError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None

    methods = cfg.method.methods
    decentral = [m for m in methods if m != "centralized"]
    per_family = {fam: _schedules(cfg, suite, W.lam) for fam, W in weights.items()}
    variants = len(next(iter(per_family.values())))
    arms = []
    for v in range(variants):
        for fam in t.families:
            tok, sched = per_family[fam][v]
            rep = validate_schedule(sched, suite.L, suite.mu, weights[fam].lam)
            for m in decentral:
                label = f"{m}@{fam}" + (f"[{tok}]" if variants > 1 else "")
                arm = Arm(label, m, fam, sched, tok, rep.failures())
                if cfg.schedule.strict and arm.warnings:
                    raise ConfigError(f"[schedule] {label}: {'; '.join(arm.warnings)}")
                arms.append(arm)
        if "centralized" in methods:
            tok, sched = per_family[t.families[0]][v]
            label = "centralized" + (f"[{tok}]" if variants > 1 else "")
            arms.append(Arm(label, "centralized", "", sched, tok))
    ipe = None
    if cfg.suite.problem == "logistic":
        ipe = float(np.mean(suite.counts)) / cfg.oracle.batch
    return Resolved(cfg, suite, weights, oracle, arms, x0, ipe)


# ---------------------------------------------------------------------------
# execution


def thread_count(cfg: ExperimentConfig) -> int:
    if cfg.run.threads:
        return cfg.run.threads
    env = os.environ.get("GTSIM_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"GTSIM_THREADS={env!r}: expected a positive integer") from None


def run_arm(res: Resolved, arm: Arm, threads: int = 1) -> Trajectory:
    """All trials of one arm; the trial axis is split across ``threads`` workers."""
    cfg = res.cfg
    T = cfg.run.trials
    chunks = [c for c in np.array_split(np.arange(T), min(threads, T)) if len(c)]
    W = res.weights.get(arm.family)
    central_batch = cfg.method.central_batch or None

    def work(chunk):
        oracle = res.oracle.clone(trials=len(chunk), trial_offset=int(chunk[0]))
        return run(arm.method, res.suite, oracle, arm.schedule, cfg.run.iters, W=W, x0=res.x0,
                   stride=cfg.run.stride, state_stride=0, central_batch=central_batch,
                   topology=arm.family)

    if len(chunks) == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
    return _merge(parts)


def _merge(parts: list[Trajectory]) -> Trajectory:
    base = parts[0]
    if len(parts) == 1:
        return base
    r = min(len(p.k) for p in parts)
    base.scalars = {name: np.concatenate([p.scalars[name][:r] for p in parts], axis=1)
                    for name in base.scalars}
    base.k, base.alpha = base.k[:r], base.alpha[:r]
    base.final_x = np.concatenate([p.final_x for p in parts], axis=0)
    base.trials = sum(p.trials for p in parts)
    base.diverged = any(p.diverged for p in parts)
    base.divergence_msg = "; ".join(p.divergence_msg for p in parts if p.divergence_msg)
    base.left_box = any(p.left_box for p in parts)
    base.iters = min(p.iters for p in parts)
    base.identity_residual = max(p.identity_residual for p in parts)
    base.mean_residual = max(p.mean_residual for p in parts)
    base.contraction_excess = max(p.contraction_excess for p in parts)
    return base


def _inputs(res: Resolved, arm: Arm) -> BoundInputs:
    suite = res.suite
    xs = np.broadcast_to(res.x0, (suite.n, suite.p))
    f0 = float(suite.value(res.x0))
    # F* unknown for logistic suites; the loss is nonnegative, so F(x0) bounds the initial gap
    f_gap0 = f0 - suite.f_star if suite.f_star is not None else f0
    s = arm.schedule
    return BoundInputs(L=suite.L, lam=res.weights[arm.family].lam, n=suite.n,
                       nu_a_sq=res.oracle.nu_a_sq, f_gap0=max(f_gap0, 0.0),
                       grad0_sq=float(np.sum(suite.local_grads(xs) ** 2)), mu=suite.mu,
                       alpha=s.alpha, beta=s.beta, gamma=s.gamma,
                       estimated_nu=res.oracle.estimated_nu)


def bound_checks(res: Resolved, arm: Arm, ms: MetricsStream, traj: Trajectory) -> list[BoundCheck]:
    """Checks that apply to a GT-DSGD arm, with the arm label in ``note``."""
    if arm.method != "gt_dsgd" or traj.diverged:
        return []
    inp = _inputs(res, arm)
    s = arm.schedule
    checks = []
    if s.variant == "constant":
        K = traj.iters
        checks.append(bound_check("theorem1", ms.stationary_gap_avg,
                                  lambda: theorem1_bound(inp, K).total, mode="running-average"))
        if inp.mu is not None and ms.opt_gap_mean is not None:
            checks.append(bound_check("theorem2_ss", ms.opt_gap_mean,
                                      lambda: theorem2_steady_state(inp)["opt_gap_ss"], mode="tail"))
            checks.append(bound_check("theorem2_ss", ms.consensus_err,
                                      lambda: theorem2_steady_state(inp)["consensus_ss"], mode="tail"))
            checks[-2].tags["quantity"] = "opt_gap_mean"
            checks[-1].tags["quantity"] = "consensus_err"

    def y_hat(_k=None):
        a_max = float(s.value(0.0))  # schedules are nonincreasing
        if a_max > inp.alpha_bar * (1 + 1e-12):
            raise BoundNotClaimed(f"max step {a_max:.6g} exceeds alpha_bar {inp.alpha_bar:.6g}")
        return lemma_constants(inp)["y_hat"]

    if inp.mu is not None:
        checks.append(bound_check("lemma16", ms.tracking_err * res.suite.n, y_hat, mode="per-k", k=ms.k))
    if s.variant == "harmonic" and ms.opt_gap_nodes is not None:
        checks.append(bound_check("theorem4", ms.opt_gap_nodes, lambda k: theorem4_bound(inp, k),
                                  mode="per-k", k=ms.k))
        checks.append(bound_check("lemma18", ms.consensus_err * res.suite.n,
                                  lambda k: lemma18_bound(inp, k), mode="per-k", k=ms.k, atol=1e-20))
    for c in checks:
        c.tags = {"arm": arm.label, **c.tags}
    return checks


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _csv_rows(label: str, ms: MetricsStream):
    fields = [getattr(ms, name) for name in CSV_COLUMNS[4:]]
    for t in range(ms.trials):
        for r, k in enumerate(ms.k):
            vals = ["" if f is None else _fmt(f[r, t]) for f in fields]
            yield ",".join([str(t), str(int(k)), label, _fmt(ms.alpha_k[r])] + vals)


@dataclass
class RunResult:
    exit_code: int
    manifest: dict
    streams: dict  # label -> MetricsStream
    trajectories: dict  # label -> Trajectory
    checks: list
    resolved: Resolved
    output: Path | None = None


def run_experiment(cfg: ExperimentConfig, output=None, write: bool = True) -> RunResult:
    """Resolve, run every arm, check bounds and (optionally) write outputs.

    Outputs in the run directory: ``metrics.csv`` (metric rows then
    ``kind=bound`` rows), ``manifest.json`` and ``bounds.txt``.  Nothing is
    written if resolution fails.
    """
    started = time.time()
    res = resolve(cfg)
    threads = thread_count(cfg)
    streams, trajs, checks, arm_info = {}, {}, [], []
    for arm in res.arms:
        log.info("running %s (%s)", arm.label, arm.schedule.describe())
        traj = run_arm(res, arm, threads)
        ms = compute_metrics(traj, res.suite)
        streams[arm.label], trajs[arm.label] = ms, traj
        if cfg.run.bounds:
            checks += bound_checks(res, arm, ms, traj)
        arm_info.append({
            "label": arm.label, "method": arm.method, "topology": arm.family,
            "lambda": res.weights[arm.family].lam if arm.family else None,
            "schedule": arm.schedule.describe(), "schedule_warnings": arm.warnings,
            "diverged": traj.diverged, "divergence": traj.divergence_msg, "left_box": traj.left_box,
            "iters_completed": traj.iters if traj.diverged else cfg.run.iters,
            "identity_residual": traj.identity_residual, "mean_residual": traj.mean_residual,
        })
        for w in arm.warnings:
            log.warning("%s: schedule outside the analysed range: %s", arm.label, w)

    diverged = [a["label"] for a in arm_info if a["diverged"]]
    failed = [c for c in checks if c.claimed and not c.passed]
    if diverged and not cfg.run.allow_divergence:
        code = EXIT_DIVERGENCE
    elif failed:
        code = EXIT_BOUND
    else:
        code = EXIT_OK
    suite = res.suite
    manifest = {
        "artifact": "gtsim", "version": __version__, "preset": cfg.preset,
        "config": cfg.to_dict(),
        "lambda": {fam: W.lam for fam, W in res.weights.items()},
        "suite": {"name": suite.name, "n": suite.n, "p": suite.p, "L": suite.L, "mu": suite.mu,
                  "f_star": suite.f_star},
        "oracle": {"kind": res.oracle.mode, "nu_sq": [float(v) for v in res.oracle.nu_sq],
                   "nu_a_sq": res.oracle.nu_a_sq, "nu_estimated": res.oracle.estimated_nu},
        "seeds": {"master": cfg.run.seed, "trials": list(range(cfg.run.trials)),
                  "stream": "SeedSequence(master, spawn_key=(trial, node))"},
        "iters_per_epoch": res.iters_per_epoch,
        "threads": threads,
        "arms": arm_info,
        "bounds": [{"name": c.name, "claimed": c.claimed, "value": c.value, "measured": c.measured,
                    "margin": c.margin, "pass": c.passed, "trials": c.trials,
                    "low_confidence": c.low_confidence, "note": c.note, **c.tags} for c in checks],
        "exit_code": code,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_clock_s": time.time() - started,
    }
    out = None
    if write:
        out = Path(output if output is not None else cfg.run.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for label, ms in streams.items():
                for line in _csv_rows(label, ms):
                    fh.write(line + "\n")
            for c in checks:
                fh.write(c.row() + "\n")
        (out / "bounds.txt").write_text("\n\n".join(c.block() for c in checks) + "\n")
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return RunResult(code, manifest, streams, trajs, checks, res, out)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def config_from_manifest(path) -> ExperimentConfig:
    """Config echoed in a manifest, for bit-identical replays."""
    from .config import parse_config

    data = json.loads(Path(path).read_text())
    cfg = parse_config(mapping=data["config"])
    cfg.preset = data.get("preset", "")
    return cfg
