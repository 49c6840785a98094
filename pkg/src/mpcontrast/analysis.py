"""Metrics for clustering, collapse and equilibrium of feature dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import graph_affinity
from .graph import AugmentationGraph, algebraic_connectivity, class_subgraph
from .losses import _check, attention_coefficients
from .numerics import frobenius_distance, sym_eigendecompose


@dataclass(frozen=True)
class SubspaceProjection:
    """Top eigenvector ``e1`` of a class subgraph's normalized adjacency.

    For a disconnected class the top eigenvalue is repeated and ``e1`` is
    whatever vector the deterministic eigensolver returns for it.
    """

    e1: np.ndarray
    eigenvalue: float
    class_id: int | None = None


def top_eigenvector(g_k: AugmentationGraph, class_id: int | None = None) -> SubspaceProjection:
    eig = sym_eigendecompose(g_k.normalized_adjacency, name="class adjacency")
    e1 = eig.eigenvectors[:, 0]
    return SubspaceProjection(e1 / np.linalg.norm(e1), float(eig.eigenvalues[0]), class_id)


def subspace_distance(F_k, g_k: AugmentationGraph, projection: SubspaceProjection | None = None) -> float:
    """Distance ``||F_k - e1 e1^T F_k||_F`` from weighted class rows to ``{e1 y^T}``.

    ``F_k`` holds weighted rows (``sqrt(w) f``). The eigenvector is recomputed
    from ``g_k`` unless a precomputed ``projection`` is passed.
    """
    F_k = np.asarray(F_k, dtype=float)
    if F_k.shape[0] != g_k.n:
        raise ValueError("class features do not match the class subgraph")
    e1 = (projection or top_eigenvector(g_k)).e1
    return float(np.linalg.norm(F_k - np.outer(e1, e1 @ F_k)))


def class_rows(f, g_k: AugmentationGraph, nodes) -> np.ndarray:
    """Weighted rows of ``f[nodes]`` using the class subgraph's own weights."""
    return np.sqrt(g_k.node_weights)[:, None] * np.asarray(f, dtype=float)[nodes]


def class_distances(f, g: AugmentationGraph) -> dict[int, float]:
    """``d_M`` of every class, each measured against its own class subgraph."""
    if g.labels is None:
        raise ValueError("graph has no labels")
    out = {}
    for k in np.unique(g.labels):
        nodes = np.flatnonzero(g.labels == k)
        g_k = class_subgraph(g, int(k))
        out[int(k)] = subspace_distance(class_rows(f, g_k, nodes), g_k)
    return out


def contraction_factor(g_k: AugmentationGraph, alpha: float) -> float:
    """Per-step bound ``|1 - 2 alpha lambda|`` on the shrinkage of ``d_M``.

    Only a valid bound while ``alpha <= 1/4``; beyond that the largest
    Laplacian eigenvalue can shrink more slowly than ``lambda`` does.
    """
    return abs(1.0 - 2.0 * alpha * algebraic_connectivity(g_k))


def model_conditional(f, g: AugmentationGraph, temperature: float = 1.0) -> np.ndarray:
    """Boltzmann conditional ``P_theta(x+|x)`` from feature inner products.

    Weighted by ``w_x'`` in degree mode; the plain softmax in uniform mode.
    """
    f = _check(f, g)
    return graph_affinity(f, g, temperature).a_bar


def data_conditional(g: AugmentationGraph) -> np.ndarray:
    """``P_d(x+|x) = A[x, x+] / deg(x)``; rows of isolated nodes are left at zero."""
    deg = g.degrees
    out = np.zeros_like(g.adjacency)
    ok = deg > 0
    out[ok] = g.adjacency[ok] / deg[ok, None]
    return out


def equilibrium_residual(f, g: AugmentationGraph, temperature: float = 1.0) -> float:
    """Frobenius gap between data and model conditionals over non-isolated rows."""
    ok = ~g.isolated
    return frobenius_distance(data_conditional(g)[ok], model_conditional(f, g, temperature)[ok])


def effective_rank(f, rtol: float = 1e-12) -> float:
    """``exp`` of the entropy of the normalized singular values of the centered rows.

    Singular values below ``rtol`` times the largest one are dropped. A table
    whose centered rows are all zero (every row identical) reports 1.0.
    """
    f = np.asarray(f, dtype=float)
    centered = f - f.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s.size == 0 or s[0] <= 1e-300:
        return 1.0
    s = s[s > rtol * s[0]]
    p = s / s.sum()
    return float(np.exp(-np.sum(p * np.log(p))))


def scatter_ratio(f, labels) -> float:
    """Between-class over within-class scatter, ``tr(S_B) / tr(S_W)``."""
    f = np.asarray(f, dtype=float)
    labels = np.asarray(labels)
    mu = f.mean(axis=0)
    between = within = 0.0
    for k in np.unique(labels):
        x = f[labels == k]
        c = x.mean(axis=0)
        between += len(x) * float(np.sum((c - mu) ** 2))
        within += float(np.sum((x - c) ** 2))
    return between / within if within > 0 else float("inf")


def _pairwise(f: np.ndarray) -> np.ndarray:
    sq = np.sum(f * f, axis=1)
    return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * f @ f.T, 0.0))


def total_pairwise_distance(f) -> float:
    return float(np.sum(np.triu(_pairwise(np.asarray(f, dtype=float)), 1)))


@dataclass
class ClusteringReport:
    nn_accuracy: float
    intra_mean: float
    inter_mean: float
    effective_rank: float
    between_within: float = float("nan")
    flagged_classes: list[int] = field(default_factory=list)
    distance_ratio: float | None = None

    @property
    def separation(self) -> float:
        """Mean-distance ratio ``inter_mean / intra_mean``."""
        return self.inter_mean / self.intra_mean if self.intra_mean > 0 else float("inf")

    def as_dict(self) -> dict:
        d = {
            "nn_accuracy": self.nn_accuracy,
            "intra_mean": self.intra_mean,
            "inter_mean": self.inter_mean,
            "effective_rank": self.effective_rank,
            "separation": self.separation,
            "between_within": self.between_within,
        }
        if self.distance_ratio is not None:
            d["distance_ratio"] = self.distance_ratio
        if self.flagged_classes:
            d["flagged_classes"] = " ".join(str(k) for k in self.flagged_classes)
        return d


def clustering_report(f, labels, reference=None) -> ClusteringReport:
    """Leave-one-out 1-NN accuracy, intra/inter distances, scatter ratio and effective rank.

    Nodes in singleton classes have no same-class neighbour; their classes are
    flagged and they are left out of the accuracy. When ``reference``
    features are given, ``distance_ratio`` is the total pairwise distance of
    ``f`` over that of ``reference``.
    """
    f = np.asarray(f, dtype=float)
    labels = np.asarray(labels)
    if labels.shape != (f.shape[0],):
        raise ValueError("labels must have one entry per feature row")
    dist = _pairwise(f)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)

    classes, counts = np.unique(labels, return_counts=True)
    flagged = [int(k) for k, c in zip(classes, counts) if c < 2]
    usable = ~np.isin(labels, flagged)
    if usable.any() and f.shape[0] > 1:
        d = dist.copy()
        np.fill_diagonal(d, np.inf)
        nn = np.argmin(d, axis=1)
        acc = float(np.mean(labels[nn][usable] == labels[usable]))
    else:
        acc = float("nan")

    intra = dist[same & off]
    inter = dist[~same]
    ratio = None
    if reference is not None:
        base = total_pairwise_distance(reference)
        ratio = total_pairwise_distance(f) / base if base > 0 else float("nan")
    return ClusteringReport(
        nn_accuracy=acc,
        intra_mean=float(intra.mean()) if intra.size else float("nan"),
        inter_mean=float(inter.mean()) if inter.size else float("nan"),
        effective_rank=effective_rank(f),
        between_within=scatter_ratio(f, labels),
        flagged_classes=flagged,
        distance_ratio=ratio,
    )


def edge_attention_share(
    f, g: AugmentationGraph, beta: float, x: int, y: int, normalization_set: str = "all"
) -> tuple[float, float]:
    """Share of node ``x``'s aggregation mass on edge ``(x, y)``: vanilla vs attention-weighted."""
    if g.isolated[x]:
        raise ValueError(f"node {x} has no neighbours")
    row = g.propagation[x]
    coeff = attention_coefficients(f, g, beta, normalization_set)[x]
    vanilla = row[y] / row.sum()
    weighted = row * coeff
    return float(vanilla), float(weighted[y] / weighted.sum())
