"""Augmentation graphs: construction, normalization and spectral summaries.

An :class:`AugmentationGraph` holds a nonnegative symmetric adjacency ``A``
(joint probabilities up to scale) together with node weights ``w`` (the
marginal over views). Two weight modes exist:

``"degree"``
    ``w_x = deg(x) / sum(A)``; the default. Under this mode the feature-space
    losses agree exactly with their sample-space expectations.
``"uniform"``
    ``w_x = 1/n`` as in the analytical setting. On non-regular graphs the
    matrix and expectation forms of the alignment loss no longer coincide.

Isolated (zero-degree) nodes are kept so indexing stays stable. They are
flagged, receive the smallest positive degree wherever ``D^{-1/2}`` is needed,
and behave as if they carried a unit self-loop in the normalized operators:
``Abar[x, x] = 1`` and ``L[x, x] = 0``, so they are fixed points of
alignment-type propagation and count as their own connected component.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import sym_eigendecompose, symmetric

WEIGHT_MODES = ("degree", "uniform")


class IsolatedNodeWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class AugmentationGraph:
    adjacency: np.ndarray
    weight_mode: str = "degree"
    labels: np.ndarray | None = None
    groups: np.ndarray | None = None
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        a = symmetric(self.adjacency, "adjacency")
        if np.any(a < 0):
            i, j = np.argwhere(a < 0)[0]
            raise ValueError(f"adjacency entry ({i}, {j}) is negative")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        object.__setattr__(self, "adjacency", a)
        for name in ("labels", "groups"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=int)
                if v.shape != (a.shape[0],):
                    raise ValueError(f"{name} must have length {a.shape[0]}, got shape {v.shape}")
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        iso = self.isolated
        if iso.any() and not self.warnings:
            msg = f"{int(iso.sum())} isolated node(s): {np.flatnonzero(iso).tolist()}"
            object.__setattr__(self, "warnings", (msg,))
            warnings.warn(msg, IsolatedNodeWarning, stacklevel=3)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def isolated(self) -> np.ndarray:
        return self.degrees <= 0

    def _safe_degrees(self) -> np.ndarray:
        d = self.degrees.copy()
        iso = d <= 0
        if iso.all():
            d[:] = 1.0
        elif iso.any():
            d[iso] = d[~iso].min()
        return d

    @property
    def node_weights(self) -> np.ndarray:
        if self.weight_mode == "uniform":
            return np.full(self.n, 1.0 / self.n)
        d = self._safe_degrees()
        return d / d.sum()

    @property
    def normalized_adjacency(self) -> np.ndarray:
        """``D^{-1/2} A D^{-1/2}``, with a unit diagonal entry on isolated nodes."""
        s = 1.0 / np.sqrt(self._safe_degrees())
        abar = s[:, None] * self.adjacency * s[None, :]
        abar = (abar + abar.T) / 2
        iso = self.isolated
        abar[iso, iso] = 1.0
        return abar

    @property
    def laplacian(self) -> np.ndarray:
        return np.eye(self.n) - self.normalized_adjacency

    @property
    def propagation(self) -> np.ndarray:
        """The normalized adjacency expressed on raw (unweighted) feature rows.

        Updates written as ``F' = P F`` on weighted rows ``F = sqrt(w) f`` act
        on raw rows through ``W^{-1/2} P W^{1/2}``. In uniform mode this is
        ``Abar`` itself; in degree mode it is the random-walk matrix
        ``D^{-1} A``.
        """
        w = self.node_weights
        return self.normalized_adjacency * np.sqrt(w[None, :] / w[:, None])

    @property
    def joint(self) -> np.ndarray:
        """Joint distribution ``P_d(x, x')`` = ``A / sum(A)``."""
        total = self.adjacency.sum()
        if total <= 0:
            return np.zeros_like(self.adjacency)
        return self.adjacency / total

    def components(self) -> np.ndarray:
        """Connected-component id per node, numbered in order of first appearance."""
        parent = list(range(self.n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in zip(*np.nonzero(np.triu(self.adjacency, 1))):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        roots = [find(i) for i in range(self.n)]
        ids: dict[int, int] = {}
        return np.array([ids.setdefault(r, len(ids)) for r in roots], dtype=int)

    def is_connected(self) -> bool:
        return self.n == 1 or bool(np.all(self.components() == 0))

    def has_cross_class_edges(self) -> bool:
        if self.labels is None:
            raise ValueError("graph has no labels")
        i, j = np.nonzero(self.adjacency)
        return bool(np.any(self.labels[i] != self.labels[j]))

    def subgraph(self, nodes) -> AugmentationGraph:
        nodes = np.asarray(nodes, dtype=int)
        if nodes.size == 0:
            raise ValueError("cannot take a subgraph on an empty node set")
        return AugmentationGraph(
            self.adjacency[np.ix_(nodes, nodes)],
            weight_mode=self.weight_mode,
            labels=None if self.labels is None else self.labels[nodes],
            groups=None if self.groups is None else self.groups[nodes],
        )

    def with_weight_mode(self, mode: str) -> AugmentationGraph:
        return AugmentationGraph(self.adjacency, mode, self.labels, self.groups, self.warnings)

    def __eq__(self, other):
        if not isinstance(other, AugmentationGraph):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b)
            )

        return (
            self.weight_mode == other.weight_mode
            and np.array_equal(self.adjacency, other.adjacency)
            and same(self.labels, other.labels)
            and same(self.groups, other.groups)
        )

    __hash__ = None


@dataclass(frozen=True)
class GaussianMixtureConfig:
    """Isotropic Gaussian mixture in the plane.

    ``variance`` is the per-coordinate variance, so each coordinate has
    standard deviation ``sqrt(variance)``.
    """

    means: tuple[tuple[float, float], ...] = ((-1.0, 0.0), (1.0, 0.0))
    variance: float = 0.7
    points_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        if len(self.means) < 1:
            raise ValueError("at least one mean is required")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if int(self.points_per_class) < 1:
            raise ValueError("points_per_class must be a positive integer")


def build_synthetic_gaussians(cfg: GaussianMixtureConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    std = np.sqrt(cfg.variance)
    k = cfg.points_per_class
    points = np.concatenate(
        [np.asarray(mu, dtype=float) + std * rng.standard_normal((k, 2)) for mu in cfg.means]
    )
    labels = np.repeat(np.arange(len(cfg.means)), k)
    return points, labels


def build_threshold_graph(
    points,
    epsilon: float,
    self_loops: bool = False,
    weight_mode: str = "degree",
    labels=None,
    groups=None,
) -> AugmentationGraph:
    """Connect every pair of points within Euclidean distance ``epsilon``."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two points in an (n, d) array")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    a = (dist <= epsilon).astype(float)
    np.fill_diagonal(a, 1.0 if self_loops else 0.0)
    return AugmentationGraph(a, weight_mode=weight_mode, labels=labels, groups=groups)


def class_subgraph(g: AugmentationGraph, k: int) -> AugmentationGraph:
    """Induced subgraph on the nodes labelled ``k``; weights are recomputed for the subgraph."""
    if g.labels is None:
        raise ValueError("graph has no labels")
    nodes = np.flatnonzero(g.labels == k)
    if nodes.size == 0:
        raise ValueError(f"class {k} is empty")
    return g.subgraph(nodes)


def largest_component(g: AugmentationGraph) -> np.ndarray:
    """Node indices of the largest connected component (lowest id wins ties)."""
    comp = g.components()
    return np.flatnonzero(comp == np.argmax(np.bincount(comp)))


def algebraic_connectivity(g: AugmentationGraph) -> float:
    """Second-smallest eigenvalue of ``L = I - Abar``; zero iff the graph is disconnected."""
    if g.n < 2:
        raise ValueError("algebraic connectivity needs at least two nodes")
    eig = sym_eigendecompose(g.normalized_adjacency, name="normalized adjacency")
    lam = 1.0 - float(eig.eigenvalues[1])
    return min(max(lam, 0.0), 2.0)


def save_edge_list(g: AugmentationGraph) -> str:
    out = io.StringIO()
    out.write(f"# nodes={g.n}\n")
    iu, ju = np.nonzero(np.triu(g.adjacency))
    for i, j in zip(iu, ju):
        out.write(f"{i} {j} {float(g.adjacency[i, j])!r}\n")
    return out.getvalue()


def load_edge_list(text: str, weight_mode: str = "degree", labels=None, groups=None):
    """Parse the edge-list format written by :func:`save_edge_list`.

    Lines after the ``# nodes=N`` header are ``i j w`` with ``i < j`` and
    ``w > 0``; ``i == j`` is accepted for self-loops. Blank lines and further
    ``#`` comments are ignored.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith("# nodes="):
        raise ValueError("line 1: expected header '# nodes=N'")
    try:
        n = int(lines[0].strip()[len("# nodes="):])
    except ValueError:
        raise ValueError("line 1: node count is not an integer") from None
    if n < 1:
        raise ValueError("line 1: node count must be positive")
    a = np.zeros((n, n))
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'i j w', got {raw!r}")
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"line {lineno}: node index out of range [0, {n})")
        if i > j:
            raise ValueError(f"line {lineno}: expected i < j, got {i} {j}")
        if not (np.isfinite(w) and w > 0):
            raise ValueError(f"line {lineno}: weight must be positive and finite, got {w}")
        if a[i, j] != 0 and a[i, j] != w:
            raise ValueError(f"line {lineno}: edge ({i}, {j}) repeated with conflicting weight")
        a[i, j] = a[j, i] = w
    return AugmentationGraph(a, weight_mode=weight_mode, labels=labels, groups=groups)
