"""Contrastive loss functionals on unconstrained feature tables.

Feature tables are ``(n, m)`` arrays of raw rows ``f(x)``. The weighted view
``F_x = sqrt(w_x) f(x)`` uses the node weights of the bound graph; the matrix
forms of the losses are written in terms of ``F``, the expectation forms in
terms of ``f`` and the graph's distributions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import AugmentationGraph
from .numerics import stable_row_softmax

NORMALIZATION_SETS = ("all", "neighborhood")


@dataclass(frozen=True)
class FeatureMatrix:
    """Raw feature rows bound to node weights."""

    raw: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        raw = np.array(self.raw, dtype=float)
        w = np.array(self.weights, dtype=float)
        if raw.ndim != 2 or w.shape != (raw.shape[0],):
            raise ValueError(f"feature shape {raw.shape} does not match weights {w.shape}")
        if not np.all(np.isfinite(raw)):
            i, j = np.argwhere(~np.isfinite(raw))[0]
            raise ValueError(f"non-finite feature at node {i}, column {j}")
        if np.any(w <= 0):
            raise ValueError("node weights must be positive")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def m(self) -> int:
        return self.raw.shape[1]

    @property
    def weighted(self) -> np.ndarray:
        return np.sqrt(self.weights)[:, None] * self.raw

    @classmethod
    def bind(cls, f, g: AugmentationGraph) -> FeatureMatrix:
        return cls(f, g.node_weights)

    @classmethod
    def from_weighted(cls, weighted, weights) -> FeatureMatrix:
        w = np.asarray(weights, dtype=float)
        return cls(np.asarray(weighted, dtype=float) / np.sqrt(w)[:, None], w)


def _check(f, g: AugmentationGraph) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != g.n:
        raise ValueError(f"features of shape {f.shape} do not match a graph with {g.n} nodes")
    return f


def _feature_log_weights(g: AugmentationGraph) -> np.ndarray | None:
    # Uniform weights cancel inside a softmax; skip them so the plain softmax is reproduced exactly.
    return None if g.weight_mode == "uniform" else np.log(g.node_weights)


def alignment_loss(f, g: AugmentationGraph) -> float:
    """Laplacian quadratic form ``Tr(F^T L F)`` on the weighted rows."""
    f = _check(f, g)
    F = np.sqrt(g.node_weights)[:, None] * f
    return float(np.sum(F * (g.laplacian @ F)))


def alignment_expectation(f, g: AugmentationGraph) -> float:
    """``1/2 E_{x,x+} ||f(x) - f(x+)||^2`` under the joint ``A / sum(A)``.

    Equals :func:`alignment_loss` in degree mode on graphs without isolated
    nodes, and in uniform mode on regular graphs.
    """
    f = _check(f, g)
    sq = np.sum(f * f, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * f @ f.T, 0.0)
    return 0.5 * float(np.sum(g.joint * dist2))


def uniformity_loss(f, g: AugmentationGraph, temperature: float = 1.0) -> float:
    """``E_x log E_x' exp(f(x)^T f(x') / tau) - E_x ||f(x)||^2 / tau``.

    Evaluated through the log-sum-exp form on the raw Gram matrix
    ``D^{-1/2} F F^T D^{-1/2} = f f^T``, with both expectations weighted by the
    graph's node weights.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    f = _check(f, g)
    w = g.node_weights
    gram = f @ f.T / temperature
    lse = logsumexp(gram, b=w[None, :], axis=1)
    return float(np.sum(w * lse) - np.sum(w * np.sum(f * f, axis=1)) / temperature)


def infonce_feature_space(f, g: AugmentationGraph, temperature: float = 1.0) -> float:
    """InfoNCE assembled from its alignment and uniformity parts.

    The alignment part is divided by ``temperature`` so the sum matches the
    sample-space loss ``-E f^T f+ / tau + E log E exp(f^T f' / tau)`` at any
    temperature; at ``tau = 1`` it is the plain sum.
    """
    return alignment_loss(f, g) / temperature + uniformity_loss(f, g, temperature)


class MemoryBank:
    """Per-group ring buffers holding the last ``capacity`` feature snapshots.

    Each snapshot stores one vector per group: the weighted mean of the rows in
    that group.
    """

    def __init__(self, capacity: int):
        if int(capacity) < 1:
            raise ValueError("capacity must be a positive integer")
        self.capacity = int(capacity)
        self._buffers: dict[int, deque] = {}
        self.pushed_steps: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.pushed_steps)

    @property
    def empty(self) -> bool:
        return not self.pushed_steps

    def buffer(self, group: int) -> list[np.ndarray]:
        return list(self._buffers.get(int(group), ()))

    def push(self, f, groups, weights, step: int | None = None) -> None:
        f = np.asarray(f, dtype=float)
        groups = np.asarray(groups)
        weights = np.asarray(weights, dtype=float)
        for gid in np.unique(groups):
            rows = groups == gid
            z = weights[rows] @ f[rows] / weights[rows].sum()
            self._buffers.setdefault(int(gid), deque(maxlen=self.capacity)).append(z)
        self.pushed_steps.append(len(self.pushed_steps) if step is None else step)

    def target(self, group: int) -> np.ndarray:
        buf = self._buffers.get(int(group))
        if not buf:
            raise KeyError(f"memory bank holds nothing for group {group}")
        return np.mean(np.stack(buf), axis=0)

    def targets(self, groups) -> np.ndarray:
        """Row ``x`` holds the aggregated target of the group of node ``x``."""
        groups = np.asarray(groups)
        cache = {int(gid): self.target(gid) for gid in np.unique(groups)}
        return np.stack([cache[int(gid)] for gid in groups])


def multi_stage_alignment_loss(f, g: AugmentationGraph, bank: MemoryBank) -> float:
    """``-E_xbar E_{x|xbar} f(x)^T z_xbar`` with ``z`` the bank average of each group."""
    f = _check(f, g)
    if g.groups is None:
        raise ValueError("multi-stage alignment needs group ids on the graph")
    z = bank.targets(g.groups)
    return -float(np.sum(g.node_weights * np.sum(f * z, axis=1)))


def attention_coefficients(
    f, g: AugmentationGraph, beta: float, normalization_set: str = "all"
) -> np.ndarray:
    """Dot-product attention ``exp(beta f_x^T f_x') / sum_{x' in S} exp(...)``.

    With ``normalization_set="all"`` the sum runs over every node; with
    ``"neighborhood"`` it runs over ``{x' : A[x, x'] > 0}`` and coefficients
    outside the neighborhood are zero (rows of isolated nodes are all zero).
    """
    f = _check(f, g)
    if normalization_set not in NORMALIZATION_SETS:
        raise ValueError(f"normalization_set must be one of {NORMALIZATION_SETS}")
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    scores = beta * (f @ f.T)
    if normalization_set == "all":
        return stable_row_softmax(scores)
    mask = g.adjacency > 0
    masked = np.where(mask, scores, -np.inf)
    rowmax = np.max(masked, axis=1, keepdims=True)
    rowmax[~np.isfinite(rowmax)] = 0.0
    e = np.where(mask, np.exp(masked - rowmax), 0.0)
    total = e.sum(axis=1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def attention_alignment_loss(
    f, g: AugmentationGraph, beta: float, normalization_set: str = "all"
) -> float:
    """Alignment loss with each positive pair reweighted by its (detached) attention score."""
    f = _check(f, g)
    coeff = attention_coefficients(f, g, beta, normalization_set)
    sq = np.sum(f * f, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * f @ f.T, 0.0)
    return 0.5 * float(np.sum(g.joint * coeff * dist2))
