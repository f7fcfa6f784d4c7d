"""Objective families: n local functions with exact values and gradients.

Node states are stacked as arrays of shape ``(..., n, p)``; the leading axes
are free (typically a Monte Carlo trial axis).  ``local_values`` and
``local_grads`` evaluate ``f_i`` at the ``i``-th row, while ``value`` and
``grad`` evaluate the global ``F = (1/n) sum_i f_i`` at arbitrary points of
shape ``(..., p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FD_STEP = 1e-5
SMOOTHNESS_MARGIN = 1.05


class ObjectiveError(ValueError):
    pass


class ObjectiveSuite:
    """Base class; subclasses implement the vectorized evaluators."""

    n: int
    p: int
    L: float
    mu: float | None = None
    f_star: float | None = None
    x_star: np.ndarray | None = None
    box: float | None = None  # operating box |x_d| <= box on which L (and mu) were computed
    name: str = "suite"

    @property
    def kappa(self) -> float:
        if self.mu is None:
            raise ObjectiveError(f"{self.name} has no PL constant")
        return self.L / self.mu

    def local_values(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def local_grads(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def local_value(self, i: int, x) -> float:
        xs = np.broadcast_to(np.asarray(x, float), (self.n, self.p))
        return float(self.local_values(xs)[i])

    def local_grad(self, i: int, x) -> np.ndarray:
        xs = np.broadcast_to(np.asarray(x, float), (self.n, self.p))
        return self.local_grads(xs)[i].copy()

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        xs = np.broadcast_to(x[..., None, :], x.shape[:-1] + (self.n, self.p))
        return self.local_values(xs).mean(axis=-1)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        xs = np.broadcast_to(x[..., None, :], x.shape[:-1] + (self.n, self.p))
        return self.local_grads(xs).mean(axis=-2)


# ---------------------------------------------------------------------------
# synthetic PL suite


def _hetero_coefficients(n: int, scale: float) -> np.ndarray:
    a = scale * (np.arange(n) - (n - 1) / 2)
    if n % 2:
        # the middle coefficient would be zero; move half a step to it from node 0
        a[n // 2] = scale / 2
        a[0] -= scale / 2
    return a


class PLSyntheticSuite(ObjectiveSuite):
    """``f_i(x) = x^2 + 3 sin^2(x) + a_i x cos(x)`` with zero-sum, nonzero ``a_i``."""

    def __init__(self, a: np.ndarray, box: float = 10.0, grid_points: int = 100_001):
        self.a = np.asarray(a, float)
        self.n = len(self.a)
        self.p = 1
        self.box = box
        self.f_star = 0.0
        self.x_star = np.zeros(1)
        self.name = f"pl_synthetic(n={self.n})"
        grid = np.linspace(-box, box, 200_001)
        self.L = float(np.abs(self.second_derivatives(grid)).max()) * (1 + 1e-6)
        self.mu = estimate_pl_constant(self, -box, box, grid_points)

    def second_derivatives(self, x: np.ndarray) -> np.ndarray:
        """``f_i''`` on a 1-d array of points, shape ``(len(x), n)``."""
        x = np.asarray(x, float)[:, None]
        return 2 + 6 * np.cos(2 * x) - self.a * (2 * np.sin(x) + x * np.cos(x))

    def local_values(self, x):
        x = np.asarray(x, float)[..., 0]
        return x**2 + 3 * np.sin(x) ** 2 + self.a * x * np.cos(x)

    def local_grads(self, x):
        x = np.asarray(x, float)
        return 2 * x + 3 * np.sin(2 * x) + self.a[:, None] * (np.cos(x) - x * np.sin(x))

    def value(self, x):
        x = np.asarray(x, float)[..., 0]
        return x**2 + 3 * np.sin(x) ** 2

    def grad(self, x):
        x = np.asarray(x, float)
        return 2 * x + 3 * np.sin(2 * x)


def pl_synthetic_suite(n: int, hetero_scale: float, box: float = 10.0) -> PLSyntheticSuite:
    if n < 2:
        raise ObjectiveError(f"pl_synthetic_suite needs n >= 2, got n={n}")
    if hetero_scale <= 0:
        raise ObjectiveError("hetero_scale must be positive so that every a_i is nonzero")
    return PLSyntheticSuite(_hetero_coefficients(n, hetero_scale), box=box)


# ---------------------------------------------------------------------------
# quadratic suite (closed-form reference problem)


class QuadraticSuite(ObjectiveSuite):
    """``f_i(x) = (c/2) ||x - b_i||^2``; ``F`` is PL with ``mu = c`` and ``L = c``."""

    def __init__(self, centers: np.ndarray, curvature: float = 1.0):
        self.b = np.atleast_2d(np.asarray(centers, float))
        self.n, self.p = self.b.shape
        self.c = float(curvature)
        self.L = self.mu = self.c
        self.x_star = self.b.mean(axis=0)
        self.f_star = float(0.5 * self.c * np.mean(np.sum((self.b - self.x_star) ** 2, axis=1)))
        self.name = f"quadratic(n={self.n}, p={self.p})"

    def local_values(self, x):
        return 0.5 * self.c * np.sum((np.asarray(x, float) - self.b) ** 2, axis=-1)

    def local_grads(self, x):
        return self.c * (np.asarray(x, float) - self.b)


def quadratic_suite(n: int, p: int = 1, spread: float = 0.0, curvature: float = 1.0,
                    seed: int = 0) -> QuadraticSuite:
    rng = np.random.default_rng(seed)
    return QuadraticSuite(spread * rng.standard_normal((n, p)), curvature)


# ---------------------------------------------------------------------------
# non-convex logistic regression


@dataclass(frozen=True)
class DatasetPartition:
    features: tuple  # per-node (m_i, p) arrays
    labels: tuple  # per-node (m_i,) arrays of +-1
    strategy: str = "iid"

    def __post_init__(self):
        if len(self.features) != len(self.labels) or not self.features:
            raise ObjectiveError("partition needs one feature and one label array per node")
        dims = {f.shape[1] for f in self.features}
        if len(dims) != 1:
            raise ObjectiveError(f"feature dimension mismatch across nodes: {sorted(dims)}")
        for f, y in zip(self.features, self.labels):
            if len(f) != len(y):
                raise ObjectiveError("feature/label count mismatch")

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def p(self) -> int:
        return self.features[0].shape[1]

    @property
    def counts(self) -> list[int]:
        return [len(y) for y in self.labels]

    def summary(self) -> str:
        lines = [f"partition strategy={self.strategy} n={self.n} p={self.p}"]
        for i, y in enumerate(self.labels):
            pos = float(np.mean(y > 0)) if len(y) else float("nan")
            lines.append(f"  node {i}: {len(y)} samples, +1 fraction {pos:.3f}")
        return "\n".join(lines)


def partition_samples(features: np.ndarray, labels: np.ndarray, n: int,
                      strategy: str = "iid", seed: int = 0) -> DatasetPartition:
    """Split a sample set across ``n`` nodes.

    ``iid`` shuffles before an even split; ``label_sorted`` orders by label
    (+1 first) so each node holds mostly one class.
    """
    features = np.asarray(features, float)
    labels = np.asarray(labels, float)
    if len(labels) < n:
        raise ObjectiveError(f"{len(labels)} samples cannot cover {n} nodes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    if strategy == "label_sorted":
        order = order[np.argsort(-labels[order], kind="stable")]
    elif strategy != "iid":
        raise ObjectiveError(f"unknown partition strategy {strategy!r}; use iid or label_sorted")
    chunks = np.array_split(order, n)
    return DatasetPartition(tuple(features[c] for c in chunks),
                            tuple(labels[c] for c in chunks), strategy)


def synthetic_classification_partition(n: int, samples_per_node: int, p: int,
                                       heterogeneity: str = "iid", seed: int = 0,
                                       separation: float = 1.0,
                                       scale: float | None = None) -> DatasetPartition:
    """Two overlapping Gaussian clusters with labels +-1, split across nodes.

    Features are divided by ``scale`` (default ``sqrt(p + separation**2)``) so
    that ``E||theta||^2`` is about one.
    """
    if samples_per_node < 1:
        raise ObjectiveError("samples_per_node must be >= 1")
    rng = np.random.default_rng(seed)
    total = n * samples_per_node
    labels = np.where(np.arange(total) < (total + 1) // 2, 1.0, -1.0)
    direction = rng.standard_normal(p)
    direction /= np.linalg.norm(direction)
    feats = labels[:, None] * separation * direction + rng.standard_normal((total, p))
    if scale is None:
        scale = np.sqrt(p + separation**2)
    return partition_samples(feats / scale, labels, n, heterogeneity, seed=seed + 1)


class LogisticSuite(ObjectiveSuite):
    """Logistic loss per node plus the non-convex regularizer ``sum R x_d^2 / (1 + x_d^2)``.

    The regularizer is replicated in every ``f_i`` so ``F`` is a plain average.
    """

    def __init__(self, partition: DatasetPartition, R: float = 1e-4):
        if R < 0:
            raise ObjectiveError("regularization R must be >= 0")
        counts = partition.counts
        if min(counts) < 1:
            raise ObjectiveError("every node needs at least one sample")
        self.partition = partition
        self.n, self.p = partition.n, partition.p
        self.R = float(R)
        m = max(counts)
        self.feats = np.zeros((self.n, m, self.p))
        self.labels = np.zeros((self.n, m))
        self.weights = np.zeros((self.n, m))  # 1/m_i on real samples, 0 on padding
        for i, (f, y) in enumerate(zip(partition.features, partition.labels)):
            self.feats[i, : len(y)] = f
            self.labels[i, : len(y)] = y
            self.weights[i, : len(y)] = 1.0 / len(y)
        self.counts = np.array(counts)
        sq = np.einsum("nmp,nmp->nm", self.feats, self.feats)
        self.L = 0.25 * float((sq * self.weights).sum(axis=1).max()) + 2 * self.R
        self.name = f"ncvx_logistic(n={self.n}, p={self.p})"

    def regularizer(self, x):
        x = np.asarray(x, float)
        return self.R * np.sum(x**2 / (1 + x**2), axis=-1)

    def regularizer_grad(self, x):
        x = np.asarray(x, float)
        return 2 * self.R * x / (1 + x**2) ** 2

    def local_values(self, x):
        x = np.asarray(x, float)
        z = np.einsum("nmp,...np->...nm", self.feats, x) * self.labels
        loss = np.logaddexp(0.0, -z)
        return (loss * self.weights).sum(axis=-1) + self.regularizer(x)

    def local_grads(self, x):
        x = np.asarray(x, float)
        z = np.einsum("nmp,...np->...nm", self.feats, x) * self.labels
        coef = -_sigmoid(-z) * self.labels * self.weights
        return np.einsum("...nm,nmp->...np", coef, self.feats) + self.regularizer_grad(x)

    def sample_grads(self, x, idx):
        """Gradients at node states ``x`` (..., n, p) averaged over per-node sample indices.

        ``idx`` has shape ``(..., n, b)`` and indexes into each node's shard.
        """
        x = np.asarray(x, float)
        nodes = np.arange(self.n)[:, None]
        feats = self.feats[nodes, idx]  # (..., n, b, p)
        labels = self.labels[nodes, idx]
        z = np.einsum("...nbp,...np->...nb", feats, x) * labels
        coef = -_sigmoid(-z) * labels / idx.shape[-1]
        return np.einsum("...nb,...nbp->...np", coef, feats) + self.regularizer_grad(x)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def ncvx_logistic_suite(partition: DatasetPartition, R: float = 1e-4) -> LogisticSuite:
    return LogisticSuite(partition, R)


# ---------------------------------------------------------------------------
# generic suite built from per-node callables


class CallableSuite(ObjectiveSuite):
    """Wrap per-node Python callables ``value(i, x)`` and ``grad(i, x)`` (slow path)."""

    def __init__(self, n, p, value_fn, grad_fn, L=None, mu=None, f_star=None, name="callable"):
        self.n, self.p = n, p
        self._value_fn, self._grad_fn = value_fn, grad_fn
        self.L, self.mu, self.f_star, self.name = L, mu, f_star, name

    def local_values(self, x):
        x = np.asarray(x, float)
        out = np.empty(x.shape[:-1])
        for idx in np.ndindex(x.shape[:-2]):
            for i in range(self.n):
                out[idx + (i,)] = self._value_fn(i, x[idx + (i,)])
        return out

    def local_grads(self, x):
        x = np.asarray(x, float)
        out = np.empty(x.shape)
        for idx in np.ndindex(x.shape[:-2]):
            for i in range(self.n):
                out[idx + (i,)] = self._grad_fn(i, x[idx + (i,)])
        return out


# ---------------------------------------------------------------------------
# constant estimators


def estimate_pl_constant(suite: ObjectiveSuite, probe_lo: float = -10.0,
                         probe_hi: float = 10.0, grid_points: int = 100_001,
                         probes: np.ndarray | None = None) -> float:
    """Smallest ratio ``||grad F||^2 / (2 (F - F*))`` over a probe set."""
    if suite.f_star is None:
        raise ObjectiveError("PL estimation needs a known F*")
    if probes is None:
        if suite.p != 1:
            raise ObjectiveError("grid probing is 1-d only; pass probes for p > 1")
        if grid_points < 100:
            raise ObjectiveError("grid_points must be >= 100")
        probes = np.linspace(probe_lo, probe_hi, grid_points)[:, None]
    probes = np.asarray(probes, float)
    gap = suite.value(probes) - suite.f_star
    gsq = np.sum(suite.grad(probes) ** 2, axis=-1)
    ok = gap >= 1e-12
    if not ok.any():
        raise ObjectiveError("no probe point with F(x) - F* >= 1e-12")
    return float(np.min(gsq[ok] / (2 * gap[ok])))


def estimate_smoothness(suite: ObjectiveSuite, n_pairs: int = 1000, box: float | None = None,
                        seed: int = 0, use_closed_form: bool = True) -> float:
    """Lipschitz constant of the local gradients.

    Built-in suites carry a closed-form ``L``; otherwise the largest gradient
    difference quotient over random pairs in the box, times a 5% margin.
    """
    if use_closed_form and getattr(suite, "L", None) is not None:
        return float(suite.L)
    if n_pairs < 1000:
        raise ObjectiveError("need at least 1000 probe pairs without a closed form")
    box = box if box is not None else (suite.box or 10.0)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, (n_pairs, suite.n, suite.p))
    y = rng.uniform(-box, box, (n_pairs, suite.n, suite.p))
    num = np.linalg.norm(suite.local_grads(x) - suite.local_grads(y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1)
    return float(np.max(num / den)) * SMOOTHNESS_MARGIN


def finite_difference_grad(suite: ObjectiveSuite, i: int, x, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, float)
    g = np.empty(suite.p)
    for d in range(suite.p):
        e = np.zeros(suite.p)
        e[d] = h
        g[d] = (suite.local_value(i, x + e) - suite.local_value(i, x - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# dataset ingestion


@dataclass
class SampleSet:
    features: np.ndarray
    labels: np.ndarray
    notices: list = field(default_factory=list)


def read_samples(path) -> SampleSet:
    """Read ``label,feat1,feat2,...`` lines; labels in {-1,+1} or {0,1}."""
    rows, labels = [], []
    dim = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            values = [float(v) for v in parts]
        except ValueError:
            raise ObjectiveError(f"line {lineno}: non-numeric field in {line!r}") from None
        if len(values) < 2:
            raise ObjectiveError(f"line {lineno}: need a label and at least one feature")
        if dim is None:
            dim = len(values) - 1
        elif len(values) - 1 != dim:
            raise ObjectiveError(
                f"line {lineno}: expected {dim} features, found {len(values) - 1}")
        labels.append(values[0])
        rows.append(values[1:])
    if not rows:
        raise ObjectiveError(f"{path}: no samples")
    y = np.array(labels)
    notices = []
    uniq = set(np.unique(y))
    if uniq <= {0.0, 1.0}:
        y = 2 * y - 1
        notices.append("labels {0,1} mapped to {-1,+1}")
    elif not uniq <= {-1.0, 1.0}:
        raise ObjectiveError(f"labels must be in {{-1,+1}} or {{0,1}}, found {sorted(uniq)}")
    return SampleSet(np.array(rows), y, notices)
