import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gtsim.topology import (Graph, TopologyError, WeightMatrix, build_complete_graph,
                            build_exponential_graph, build_geometric_graph, build_grid_graph,
                            build_path_graph, build_weights, default_geometric_radius,
                            equal_weights, metropolis_weights, power_iteration_sym,
                            read_edge_list, read_weights_csv, spectral_gap, spectral_radius,
                            validate_weight_matrix, write_edge_list, write_weights_csv)


def _doubly_stochastic(w, tol=1e-12):
    return (np.all(w >= 0) and np.abs(w.sum(0) - 1).max() <= tol
            and np.abs(w.sum(1) - 1).max() <= tol)


def test_exponential_16_structure():
    g = build_exponential_graph(16)
    # log2(16) neighbours each way, self-loops listed separately
    assert all(len(g.out_neighbors(j)) == 4 for j in range(16))
    assert all(len(g.in_neighbors(i)) == 4 for i in range(16))
    assert g.has_self_loops()
    assert g.directed and not g.is_symmetric()


def test_exponential_rejects_non_power_of_two():
    with pytest.raises(TopologyError, match="power of two"):
        build_exponential_graph(12)


def test_exponential_equal_weights_lambda():
    assert equal_weights(build_exponential_graph(16)).lam == pytest.approx(0.6, abs=1e-9)


def test_grid_edge_count():
    g = build_grid_graph(4, 4)
    assert g.undirected_edge_count() == 24
    assert g.is_symmetric()


def test_grid_lambda_values():
    g = build_grid_graph(4, 4)
    # plain Metropolis mixes faster than the lazy chain
    assert metropolis_weights(g).lam == pytest.approx(0.8685, abs=1e-3)
    assert metropolis_weights(g, lazy=True).lam == pytest.approx(0.934, abs=1e-3)


def test_geometric_default_radius_lambda():
    _, W = build_weights("geometric", 100)
    assert 0.95 <= W.lam < 1


def test_geometric_tiny_radius_fails():
    with pytest.raises(TopologyError, match="larger radius"):
        build_geometric_graph(50, radius=0.01)


def test_default_radius_formula():
    assert default_geometric_radius(100) == pytest.approx(math.sqrt(8 / (99 * math.pi)))


def test_complete_graph_lambda_zero():
    w = equal_weights(build_complete_graph(8))
    assert w.lam == pytest.approx(0.0, abs=1e-7)
    assert np.allclose(w.w, 1 / 8)


def test_path_graph_metropolis():
    w = metropolis_weights(build_path_graph(5))
    assert _doubly_stochastic(w.w)
    assert 0 < w.lam < 1


def test_equal_weights_needs_regular_graph():
    with pytest.raises(TopologyError, match="regular"):
        equal_weights(build_path_graph(4))


def test_metropolis_rejects_directed():
    with pytest.raises(TopologyError, match="undirected"):
        metropolis_weights(build_exponential_graph(8))


def test_spectral_gap_rejects_non_stochastic():
    w = np.array([[0.5, 0.5], [0.4, 0.6]])
    with pytest.raises(TopologyError, match="doubly stochastic"):
        spectral_gap(w)


def test_spectral_gap_rejects_disconnected():
    with pytest.raises(TopologyError, match="primitive"):
        spectral_gap(np.eye(3))


def test_validate_report_does_not_raise():
    rep = validate_weight_matrix(np.eye(3))
    assert not rep.passed and not rep.primitive
    assert "pass=False" in str(rep)


def test_weight_matrix_read_only():
    w = equal_weights(build_exponential_graph(4))
    with pytest.raises(ValueError):
        w.w[0, 0] = 1.0


def test_mix_blockwise():
    w = equal_weights(build_exponential_graph(4))
    x = np.arange(8.0).reshape(4, 2)
    # W @ x on (n, p) states is (W kron I_p) on the stacked vector
    assert np.allclose(w.mix(x).ravel(), np.kron(w.w, np.eye(2)) @ x.ravel())
    assert np.allclose(w.mix(x).mean(axis=0), x.mean(axis=0))


def test_power_iteration_matches_eigvalsh():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6))
    m = a.T @ a
    assert power_iteration_sym(m) == pytest.approx(np.linalg.eigvalsh(m).max(), rel=1e-8)


def test_spectral_radius_defective_falls_back():
    # Jordan block: power iteration converges slowly; the answer is still 0.5
    a = np.array([[0.5, 1.0], [0.0, 0.5]])
    assert spectral_radius(a, max_iter=200) == pytest.approx(0.5, abs=1e-9)


def test_spectral_radius_signed_matrix():
    a = np.array([[0.0, 1.0], [-1.0, 0.0]]) * 0.7
    assert spectral_radius(a) == pytest.approx(0.7)


@pytest.mark.parametrize("family,kw", [("exponential", {}), ("grid", {}), ("geometric", {"n": 30}),
                                       ("complete", {}), ("path", {})])
def test_all_families_doubly_stochastic(family, kw):
    _, W = build_weights(family, **kw)
    assert _doubly_stochastic(W.w)
    assert W.lam < 1


def test_build_weights_unknown():
    with pytest.raises(TopologyError):
        build_weights("ring")
    with pytest.raises(TopologyError):
        build_weights("grid", rule="max-degree")


def test_edge_list_roundtrip(tmp_path):
    for g in (build_grid_graph(3, 4), build_exponential_graph(8)):
        path = tmp_path / "g.txt"
        write_edge_list(g, path)
        h = read_edge_list(path)
        assert h.n == g.n and h.edges == g.edges and h.directed == g.directed


def test_weights_csv_roundtrip(tmp_path):
    _, W = build_weights("geometric", 20, seed=3)
    write_weights_csv(W, tmp_path / "w.csv")
    V = read_weights_csv(tmp_path / "w.csv")
    assert np.array_equal(V.w, W.w)


@given(st.integers(2, 6), st.integers(1, 6), st.booleans())
def test_grid_metropolis_properties(rows, cols, lazy):
    if rows * cols < 2:
        return
    W = metropolis_weights(build_grid_graph(rows, cols), lazy=lazy)
    assert _doubly_stochastic(W.w)
    assert np.allclose(W.w, W.w.T)
    assert 0 <= W.lam < 1


@given(st.integers(5, 40), st.integers(0, 1000))
def test_geometric_properties(n, seed):
    g = build_geometric_graph(n, radius=0.6, seed=seed)
    assert g.is_symmetric() and g.is_strongly_connected() and g.has_self_loops()
    W = metropolis_weights(g, lazy=True)
    assert _doubly_stochastic(W.w)
    # lambda is the second singular value: the top one of W is exactly 1
    s = np.linalg.svd(W.w, compute_uv=False)
    assert s[0] == pytest.approx(1.0, abs=1e-10)
    assert W.lam == pytest.approx(s[1], abs=1e-6)


@given(st.integers(1, 5))
def test_exponential_lambda_matches_svd(k):
    n = 2**k
    W = equal_weights(build_exponential_graph(n))
    d = W.w - 1 / n
    assert W.lam == pytest.approx(np.linalg.norm(d, 2), abs=1e-8)


def test_graph_validates_edges():
    with pytest.raises(TopologyError):
        Graph(3, frozenset({(0, 5)}), directed=True)


def test_weight_matrix_requires_square():
    with pytest.raises(TopologyError, match="square"):
        WeightMatrix(np.ones((2, 3)) / 3)
