import warnings

import numpy as np
import pytest

from mpcontrast.graph import (
    AugmentationGraph,
    GaussianMixtureConfig,
    IsolatedNodeWarning,
    algebraic_connectivity,
    build_synthetic_gaussians,
    build_threshold_graph,
    class_subgraph,
    largest_component,
    load_edge_list,
    save_edge_list,
)
from mpcontrast.numerics import sym_eigendecompose
from mpcontrast.oracle import random_graph, random_label_preserving_graph


def test_gaussians_deterministic_and_labelled():
    cfg = GaussianMixtureConfig()
    p1, l1 = build_synthetic_gaussians(cfg)
    p2, l2 = build_synthetic_gaussians(cfg)
    assert p1.shape == (200, 2) and np.array_equal(p1, p2) and np.array_equal(l1, l2)
    assert np.array_equal(l1, np.repeat([0, 1], 100))
    # per-coordinate variance 0.7
    centred = np.concatenate([p1[:100] - (-1, 0), p1[100:] - (1, 0)])
    assert abs(centred.var() - 0.7) < 0.1


def test_gaussians_degenerate_variance():
    p, lab = build_synthetic_gaussians(GaussianMixtureConfig(variance=1e-12))
    means = np.array([(-1, 0), (1, 0)])[lab]
    assert np.max(np.abs(p - means)) <= 1e-5


@pytest.mark.parametrize("bad", [dict(variance=0.0), dict(points_per_class=0), dict(means=())])
def test_gaussian_config_validation(bad):
    with pytest.raises(ValueError):
        GaussianMixtureConfig(**bad)


def test_threshold_far_pair_is_isolated():
    with pytest.warns(IsolatedNodeWarning):
        g = build_threshold_graph(np.array([[0.0, 0.0], [0.5, 0.0]]), 0.4)
    assert g.isolated.all() and g.warnings
    assert algebraic_connectivity(g) == 0.0


def test_threshold_close_pair():
    g = build_threshold_graph(np.array([[0.0, 0.0], [0.3, 0.0]]), 0.4)
    np.testing.assert_array_equal(g.adjacency, [[0, 1], [1, 0]])
    np.testing.assert_allclose(g.normalized_adjacency, [[0, 1], [1, 0]])


def test_threshold_self_loops():
    g = build_threshold_graph(np.array([[0.0, 0.0], [3.0, 0.0]]), 0.4, self_loops=True)
    np.testing.assert_array_equal(g.adjacency, np.eye(2))


def test_isolated_nodes_are_fixed_points_of_propagation():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    with pytest.warns(IsolatedNodeWarning):
        g = AugmentationGraph(a)
    assert g.normalized_adjacency[2, 2] == 1 and g.laplacian[2, 2] == 0
    assert g.node_weights[2] == g.node_weights[0]
    f = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal((g.propagation @ f)[2], f[2])


def test_gaussian_instance_connectivity_measured():
    # The class subgraphs of the default cloud at eps = 0.4 are not connected;
    # their largest components are.
    pts, lab = build_synthetic_gaussians(GaussianMixtureConfig())
    g = build_threshold_graph(pts, 0.4, labels=lab)
    assert g.has_cross_class_edges()
    for k in (0, 1):
        sub = class_subgraph(g, k)
        assert not sub.is_connected()
        assert algebraic_connectivity(sub) < 1e-8
        core = sub.subgraph(largest_component(sub))
        assert core.is_connected()
        assert 0.03 < algebraic_connectivity(core) < 0.04


def test_class_subgraph_slices_adjacency(rng):
    g = random_label_preserving_graph([4, 5, 3], rng)
    g = AugmentationGraph(g.adjacency + 0.1 * (1 - np.eye(12)), labels=g.labels)
    for k in range(3):
        nodes = np.flatnonzero(g.labels == k)
        sub = class_subgraph(g, k)
        for a, i in enumerate(nodes):
            for b, j in enumerate(nodes):
                assert sub.adjacency[a, b] == g.adjacency[i, j]
        assert np.all(sub.labels == k)
        assert sub.node_weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        class_subgraph(g, 7)


def test_single_class_subgraph_equals_input(rng):
    g = random_graph(6, rng, labels=np.zeros(6, dtype=int))
    assert class_subgraph(g, 0) == g


def test_connectivity_k2_and_p3():
    assert algebraic_connectivity(AugmentationGraph(np.array([[0.0, 1], [1, 0]]))) == pytest.approx(2.0)
    p3 = AugmentationGraph(np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    # brute force: roots of the characteristic polynomial of L, computed by numpy.roots
    lap = p3.laplacian
    coeffs = [
        -1.0,
        np.trace(lap),
        -0.5 * (np.trace(lap) ** 2 - np.trace(lap @ lap)),
        np.linalg.det(lap),
    ]
    roots = np.sort(np.real(np.roots(coeffs)))
    assert algebraic_connectivity(p3) == pytest.approx(roots[1], abs=1e-10)
    assert algebraic_connectivity(p3) == pytest.approx(1.0, abs=1e-12)


def test_connectivity_matches_union_find(rng):
    for density in (0.05, 0.1, 0.3):
        a = np.triu(rng.random((15, 15)) < density, 1).astype(float)
        g = AugmentationGraph(a + a.T)
        assert (algebraic_connectivity(g) > 1e-8) == g.is_connected()


def test_laplacian_psd_and_spectral_radius(rng, mode):
    g = random_graph(20, rng, weight_mode=mode)
    eig = sym_eigendecompose(g.normalized_adjacency)
    assert eig.eigenvalues[0] <= 1 + 1e-10
    assert np.min(np.linalg.eigvalsh(g.laplacian)) >= -1e-9


def test_propagation_forms():
    rng = np.random.default_rng(0)
    g = random_graph(7, rng)
    np.testing.assert_allclose(g.propagation, g.adjacency / g.degrees[:, None], atol=1e-14)
    gu = g.with_weight_mode("uniform")
    np.testing.assert_array_equal(gu.propagation, gu.normalized_adjacency)


def test_adjacency_validation():
    with pytest.raises(ValueError, match="negative"):
        AugmentationGraph(np.array([[0.0, -1], [-1, 0]]))
    with pytest.raises(ValueError):
        AugmentationGraph(np.eye(2), weight_mode="other")
    with pytest.raises(ValueError):
        AugmentationGraph(np.eye(2), labels=[0, 1, 2])


def test_edge_list_basic():
    g = load_edge_list("# nodes=2\n0 1 1.0\n")
    np.testing.assert_array_equal(g.adjacency, [[0, 1], [1, 0]])


def test_edge_list_round_trip_bitwise(rng):
    a = np.triu(rng.uniform(0, 1, (9, 9)) * (rng.random((9, 9)) < 0.5))
    g = AugmentationGraph(a + np.triu(a, 1).T)
    back = load_edge_list(save_edge_list(g))
    assert back == g
    assert np.array_equal(back.adjacency, g.adjacency)


@pytest.mark.parametrize(
    "text, line",
    [
        ("# nodes=2\n0 1 -1.0\n", 2),
        ("# nodes=2\n0 1\n", 2),
        ("# nodes=2\n\n0 5 1.0\n", 3),
        ("# nodes=2\n1 0 1.0\n", 2),
        ("# nodes=3\n0 1 1.0\n0 1 2.0\n", 3),
        ("# nodes=2\n0 x 1.0\n", 2),
        ("nodes 2\n", 1),
    ],
)
def test_edge_list_errors_name_the_line(text, line):
    with pytest.raises(ValueError, match=f"line {line}"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            load_edge_list(text)
