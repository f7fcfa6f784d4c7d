"""Communication graphs, doubly-stochastic mixing matrices and the spectral gap.

Edges are ordered pairs ``(i, j)`` meaning node ``j`` sends to node ``i``, so
a weight matrix ``w`` may only have ``w[i, j] > 0`` when ``(i, j)`` is an edge
(or ``i == j``).  Every graph built here carries all self-loops.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12
GEOMETRIC_MAX_ATTEMPTS = 100
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000


class TopologyError(ValueError):
    """Raised for graphs or weight matrices that violate the network model."""


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset
    directed: bool
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"graph needs at least one node, got n={self.n}")
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) out of range for n={self.n}")

    def in_neighbors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.edges if a == i and j != i)

    def out_neighbors(self, j: int) -> list[int]:
        return sorted(i for (i, b) in self.edges if b == j and i != j)

    def in_degrees(self, include_self: bool = False) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            if i != j or include_self:
                deg[i] += 1
        return deg

    def out_degrees(self, include_self: bool = False) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            if i != j or include_self:
                deg[j] += 1
        return deg

    def undirected_edge_count(self) -> int:
        return len({frozenset(e) for e in self.edges if e[0] != e[1]})

    def is_symmetric(self) -> bool:
        return all((j, i) in self.edges for (i, j) in self.edges)

    def has_self_loops(self) -> bool:
        return all((i, i) in self.edges for i in range(self.n))

    def adjacency(self) -> np.ndarray:
        """Boolean matrix ``A[i, j]`` true iff ``j`` sends to ``i`` (self-loops included)."""
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = True
        return a

    def is_strongly_connected(self) -> bool:
        return _strongly_connected(self.adjacency())


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def _strongly_connected(adj: np.ndarray) -> bool:
    # Strong connectivity <=> node 0 reaches everyone in the graph and its reverse.
    if adj.shape[0] == 1:
        return True
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def _with_self_loops(n: int, edges) -> frozenset:
    return frozenset(edges) | frozenset((i, i) for i in range(n))


def build_exponential_graph(n: int) -> Graph:
    """Directed exponential graph: node ``i`` sends to ``(i + 2**j) mod n``."""
    if n < 2 or n & (n - 1):
        raise TopologyError(f"exponential graph needs n a power of two >= 2, got n={n}")
    edges = set()
    for i in range(n):
        for j in range(int(math.log2(n))):
            edges.add(((i + 2**j) % n, i))
    return Graph(n, _with_self_loops(n, edges), directed=True, name=f"exponential-{n}")


def build_grid_graph(rows: int, cols: int) -> Graph:
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise TopologyError(f"grid needs rows, cols >= 1 and at least 2 nodes, got {rows}x{cols}")
    n = rows * cols
    edges = set()
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges |= {(i, i + 1), (i + 1, i)}
            if r + 1 < rows:
                edges |= {(i, i + cols), (i + cols, i)}
    return Graph(n, _with_self_loops(n, edges), directed=False, name=f"grid-{rows}x{cols}")


def build_complete_graph(n: int) -> Graph:
    if n < 1:
        raise TopologyError(f"complete graph needs n >= 1, got n={n}")
    edges = {(i, j) for i in range(n) for j in range(n)}
    return Graph(n, frozenset(edges), directed=False, name=f"complete-{n}")


def build_path_graph(n: int) -> Graph:
    if n < 2:
        raise TopologyError(f"path graph needs n >= 2, got n={n}")
    edges = set()
    for i in range(n - 1):
        edges |= {(i, i + 1), (i + 1, i)}
    return Graph(n, _with_self_loops(n, edges), directed=False, name=f"path-{n}")


def default_geometric_radius(n: int, mean_degree: float = 8.0) -> float:
    """Radius giving ``mean_degree`` expected neighbours on the unit square (boundary ignored)."""
    return min(math.sqrt(mean_degree / ((n - 1) * math.pi)), math.sqrt(2.0))


def build_geometric_graph(n: int, radius: float | None = None, seed: int = 0) -> Graph:
    """Random geometric graph on the unit square, redrawn until connected."""
    if n < 2:
        raise TopologyError(f"geometric graph needs n >= 2, got n={n}")
    if radius is None:
        radius = default_geometric_radius(n)
    if not 0 < radius <= math.sqrt(2.0):
        raise TopologyError(f"radius must lie in (0, sqrt(2)], got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(GEOMETRIC_MAX_ATTEMPTS):
        pts = rng.random((n, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        adj = dist <= radius
        if _strongly_connected(adj):
            edges = {(int(i), int(j)) for i, j in zip(*np.nonzero(adj))}
            return Graph(n, _with_self_loops(n, edges), directed=False,
                         name=f"geometric-{n}")
    raise TopologyError(
        f"no connected geometric graph with n={n}, radius={radius:.4g} after "
        f"{GEOMETRIC_MAX_ATTEMPTS} draws; use a larger radius"
    )


# ---------------------------------------------------------------------------
# power iteration


def power_iteration_sym(m: np.ndarray, tol: float = POWER_TOL,
                        max_iter: int = POWER_MAX_ITER, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    m = np.asarray(m, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - est) <= tol * max(1.0, abs(new)):
            return new
        est = new
    return est


def spectral_radius(a: np.ndarray, tol: float = POWER_TOL,
                    max_iter: int = POWER_MAX_ITER) -> float:
    """Spectral radius of a small nonnegative matrix.

    Power iteration from the all-ones vector. Defective or tied dominant
    eigenvalues stall the iteration; those fall back to a dense eigensolve.
    """
    a = np.asarray(a, dtype=float)
    v = np.ones(a.shape[0]) / math.sqrt(a.shape[0])
    est = None
    for _ in range(max_iter):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if est is not None and abs(norm - est) <= tol * max(1.0, norm):
            # the all-ones start can miss a dominant eigenvector with sign changes
            if np.all(a >= 0):
                return float(norm)
            break
        est = norm
    return float(np.max(np.abs(np.linalg.eigvals(a))))


# ---------------------------------------------------------------------------
# weight matrices


def _deflated_norm(w: np.ndarray) -> float:
    n = w.shape[0]
    d = w - np.full((n, n), 1.0 / n)
    return math.sqrt(max(power_iteration_sym(d.T @ d), 0.0))


def _sum_errors(w: np.ndarray) -> tuple[float, float]:
    return (float(np.max(np.abs(w.sum(axis=1) - 1.0))),
            float(np.max(np.abs(w.sum(axis=0) - 1.0))))


def _is_primitive_pattern(w: np.ndarray) -> bool:
    pattern = w > 0
    return bool(np.all(np.diag(pattern)) and _strongly_connected(pattern))


def spectral_gap(w) -> float:
    """Network connectivity ``lambda = ||W - J||`` (second largest singular value)."""
    w = w.w if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    row_err, col_err = _sum_errors(w)
    if max(row_err, col_err) > STOCHASTIC_TOL or np.any(w < 0):
        raise TopologyError(
            f"matrix is not doubly stochastic (row err {row_err:.3g}, col err {col_err:.3g})"
        )
    if not _is_primitive_pattern(w):
        raise TopologyError("matrix is not primitive; lambda < 1 is not guaranteed")
    return _deflated_norm(w)


@dataclass(frozen=True)
class WeightMatrix:
    w: np.ndarray
    lam: float = field(init=False)
    name: str = ""

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise TopologyError(f"weight matrix must be square, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "lam", spectral_gap(w))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def mix(self, x: np.ndarray) -> np.ndarray:
        """Apply ``W (x) I_p`` to stacked node states of shape ``(..., n, p)``."""
        return self.w @ x


def equal_weights(g: Graph) -> WeightMatrix:
    deg_in = g.in_degrees(include_self=True)
    deg_out = g.out_degrees(include_self=True)
    if not g.has_self_loops() or len(set(deg_in)) != 1 or not np.array_equal(deg_in, deg_out):
        raise TopologyError(
            "equal weights need a regular, balanced graph with self-loops; "
            "use metropolis_weights for irregular undirected graphs"
        )
    w = g.adjacency().astype(float) / deg_in[0]
    return WeightMatrix(w, name=f"{g.name}/equal")


def metropolis_weights(g: Graph, lazy: bool = False) -> WeightMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))``.

    ``lazy=True`` returns ``(I + W) / 2``, the lazy Metropolis chain.
    """
    if not g.is_symmetric():
        raise TopologyError("metropolis weights need an undirected (symmetric) edge set")
    deg = g.in_degrees()
    n = g.n
    w = np.zeros((n, n))
    for i, j in g.edges:
        if i != j:
            w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    if lazy:
        w = 0.5 * w
        np.fill_diagonal(w, 0.0)
        np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    suffix = "lazy-metropolis" if lazy else "metropolis"
    return WeightMatrix(w, name=f"{g.name}/{suffix}")


@dataclass
class WeightReport:
    row_sum_error: float
    col_sum_error: float
    min_entry: float
    primitive: bool
    lam: float
    tol: float = STOCHASTIC_TOL

    @property
    def passed(self) -> bool:
        return (self.row_sum_error <= self.tol and self.col_sum_error <= self.tol
                and self.min_entry >= 0.0 and self.primitive and self.lam < 1.0)

    def __str__(self) -> str:
        return (f"row_sum_error={self.row_sum_error:.3e} col_sum_error={self.col_sum_error:.3e} "
                f"min_entry={self.min_entry:.3e} primitive={self.primitive} "
                f"lambda={self.lam:.6f} pass={self.passed}")


def validate_weight_matrix(w) -> WeightReport:
    w = w.w if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    row_err, col_err = _sum_errors(w)
    return WeightReport(row_err, col_err, float(w.min()), _is_primitive_pattern(w),
                        _deflated_norm(w))


def build_weights(family: str, n: int = 16, rows: int | None = None, cols: int | None = None,
                  radius: float | None = None, seed: int = 0,
                  rule: str | None = None) -> tuple[Graph, WeightMatrix]:
    """Resolve a named topology to a graph and its weight matrix.

    Defaults follow the experiments: equal weights on exponential and complete
    graphs, lazy Metropolis on grid and geometric graphs.
    """
    if family == "exponential":
        g = build_exponential_graph(n)
    elif family == "grid":
        if rows is None or cols is None:
            rows = cols = math.isqrt(n)
            if rows * cols != n:
                raise TopologyError(f"grid with n={n} needs explicit rows and cols")
        g = build_grid_graph(rows, cols)
    elif family == "geometric":
        g = build_geometric_graph(n, radius, seed)
    elif family == "complete":
        g = build_complete_graph(n)
    elif family == "path":
        g = build_path_graph(n)
    else:
        raise TopologyError(f"unknown topology family {family!r}")
    if rule is None:
        rule = "equal" if family in ("exponential", "complete") else "lazy_metropolis"
    if rule == "equal":
        return g, equal_weights(g)
    if rule == "metropolis":
        return g, metropolis_weights(g)
    if rule == "lazy_metropolis":
        return g, metropolis_weights(g, lazy=True)
    raise TopologyError(f"unknown weight rule {rule!r}")


# ---------------------------------------------------------------------------
# serialization


def write_edge_list(g: Graph, path) -> None:
    kind = "directed" if g.directed else "undirected"
    lines = [f"n {g.n} {kind}"]
    lines += [f"{i} {j}" for i, j in sorted(g.edges) if i != j]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 3 or head[0] != "n" or head[2] not in ("directed", "undirected"):
        raise TopologyError(f"bad edge-list header {lines[0]!r}")
    n, directed = int(head[1]), head[2] == "directed"
    edges = set()
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise TopologyError(f"line {lineno}: expected 'i j', got {ln!r}")
        i, j = int(parts[0]), int(parts[1])
        edges.add((i, j))
        if not directed:
            edges.add((j, i))
    return Graph(n, _with_self_loops(n, edges), directed=directed)


def write_weights_csv(w, path) -> None:
    w = w.w if isinstance(w, WeightMatrix) else np.asarray(w)
    np.savetxt(path, w, delimiter=",", fmt="%.17g")


def read_weights_csv(path) -> WeightMatrix:
    return WeightMatrix(np.loadtxt(path, delimiter=",", ndmin=2))
