"""Discrete-time update rules for features on the augmentation graph.

Every rule is a gradient-style step on the weighted rows ``F = sqrt(w) f``
but is carried out on raw rows: an update ``F' = P F`` acts on ``f`` through
``W^{-1/2} P W^{1/2}``. Under uniform weights that similarity transform is the
identity, so the matrices below are exactly the textbook ones; in degree mode
the data-side operator becomes the random-walk matrix ``D^{-1} A``.

Feature-side (affinity) matrices are always built from raw rows, so
``temperature`` and ``beta`` scale raw inner products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import AugmentationGraph
from .losses import MemoryBank, _check, _feature_log_weights, attention_coefficients
from .numerics import stable_row_softmax

PREPROCESS_MODES = ("none", "center", "l2_normalize", "center_then_normalize")
RULES = (
    "alignment",
    "uniformity",
    "uniformity_sg",
    "contrastive",
    "attention_alignment",
    "multi_stage",
    "self_attention",
    "dgc",
)
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class AffinityGraph:
    """Feature-similarity graph built from ``exp(f f^T / tau)``.

    ``a_exp`` is stored shifted by ``exp(-shift)`` (``shift`` is the largest
    scaled inner product) so it never overflows; ``a_bar`` is computed with a
    per-row shift and is therefore exact. ``a_bar_sym`` is the operator that
    appears in the full uniformity gradient,
    ``a_bar + W^{-1} a_bar^T W``, which reduces to ``a_bar + a_bar^T`` under
    uniform weights.
    """

    a_exp: np.ndarray
    d_exp: np.ndarray
    a_bar: np.ndarray
    a_bar_sym: np.ndarray
    shift: float


def affinity_graph(f, temperature: float = 1.0, weights=None) -> AffinityGraph:
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        i, j = np.argwhere(~np.isfinite(f))[0]
        raise ValueError(f"non-finite feature at node {i}, column {j}")
    gram = f @ f.T
    scaled = gram / temperature
    shift = float(np.max(scaled))
    a_exp = np.exp(scaled - shift)
    d_exp = a_exp.sum(axis=1)
    if weights is None:
        a_bar = stable_row_softmax(gram, temperature)
        a_bar_sym = a_bar + a_bar.T
    else:
        w = np.asarray(weights, dtype=float)
        a_bar = stable_row_softmax(gram, temperature, log_weights=np.log(w))
        a_bar_sym = a_bar + (a_bar.T * w[None, :]) / w[:, None]
    return AffinityGraph(a_exp, d_exp, a_bar, a_bar_sym, shift)


def graph_affinity(f, g: AugmentationGraph, temperature: float = 1.0) -> AffinityGraph:
    """Affinity graph weighted by the graph's node weights (plain softmax in uniform mode)."""
    lw = _feature_log_weights(g)
    return affinity_graph(f, temperature, None if lw is None else g.node_weights)


def dgc_step(f, g: AugmentationGraph, delta_t: float) -> np.ndarray:
    """Graph convolution with step size: ``[(1 - dt) I + dt Abar] F``."""
    f = _check(f, g)
    return (1.0 - delta_t) * f + delta_t * (g.propagation @ f)


def alignment_step(f, g: AugmentationGraph, alpha: float) -> np.ndarray:
    """Gradient step on ``Tr(F^T L F)``: ``[(1 - 2a) I + 2a Abar] F``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return dgc_step(f, g, 2.0 * alpha)


def uniformity_step(
    f, g: AugmentationGraph, alpha: float, temperature: float = 1.0, stop_gradient: bool = False
) -> np.ndarray:
    """Gradient step on the uniformity loss, optionally with a stop-gradient target branch.

    Without stop gradient: ``[(1 + 2a) I - a Abar'_sym] F``.
    With stop gradient:    ``[(1 + a) I - a Abar'] F``.

    ``alpha`` may be negative (gradient ascent); ``alpha = -1`` with stop
    gradient is one self-attention layer.
    """
    f = _check(f, g)
    aff = graph_affinity(f, g, temperature)
    if stop_gradient:
        return (1.0 + alpha) * f - alpha * (aff.a_bar @ f)
    return (1.0 + 2.0 * alpha) * f - alpha * (aff.a_bar_sym @ f)


def contrastive_step(f, g: AugmentationGraph, alpha: float, temperature: float = 1.0) -> np.ndarray:
    """Combined update ``F + a (Abar - Abar') F`` (stop-gradient form)."""
    f = _check(f, g)
    aff = graph_affinity(f, g, temperature)
    return f + alpha * (g.propagation @ f - aff.a_bar @ f)


def self_attention_step(f) -> np.ndarray:
    """``softmax(f f^T) f``, one parameter-free self-attention layer."""
    f = np.asarray(f, dtype=float)
    return stable_row_softmax(f @ f.T) @ f


def attention_alignment_step(
    f, g: AugmentationGraph, alpha: float, beta: float, normalization_set: str = "all"
) -> np.ndarray:
    """Alignment step with each edge scaled by its detached attention coefficient."""
    f = _check(f, g)
    coeff = attention_coefficients(f, g, beta, normalization_set)
    return (1.0 - 2.0 * alpha) * f + 2.0 * alpha * ((g.propagation * coeff) @ f)


def multi_stage_step(f, g: AugmentationGraph, bank: MemoryBank, alpha: float, step: int | None = None):
    """One step on the multi-stage alignment loss against the memory-bank targets.

    The bank is seeded with ``f`` on the first call. Otherwise the targets are
    read first and the current (pre-update) features are pushed afterwards, so
    after ``t`` calls the bank holds the features entering steps
    ``t - s + 1 .. t``. Returns ``(new_features, bank)``; the bank is updated
    in place.
    """
    f = _check(f, g)
    if g.groups is None:
        raise ValueError("multi-stage alignment needs group ids on the graph")
    w = g.node_weights
    if bank.empty:
        bank.push(f, g.groups, w, step)
        z = bank.targets(g.groups)
    else:
        z = bank.targets(g.groups)
        bank.push(f, g.groups, w, step)
    return f + alpha * z, bank


def preprocess(f, mode: str, weights=None) -> np.ndarray:
    """Feature centering and/or row-wise l2 normalization.

    ``center`` subtracts the weighted mean row (uniform weights when
    ``weights`` is None).
    """
    if mode not in PREPROCESS_MODES:
        raise ValueError(f"preprocess mode must be one of {PREPROCESS_MODES}")
    f = np.array(f, dtype=float)
    if mode in ("center", "center_then_normalize"):
        w = np.full(f.shape[0], 1.0 / f.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        f = f - (w / w.sum()) @ f
    if mode in ("l2_normalize", "center_then_normalize"):
        norms = np.linalg.norm(f, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ValueError(f"cannot l2-normalize zero-norm row {zero[0]}")
        f = f / norms[:, None]
    return f


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Features left the finite range mid-run; ``record`` holds everything recorded so far."""

    def __init__(self, step: int, node: int, record: TrajectoryRecord):
        super().__init__(f"features diverged at step {step}, node {node}")
        self.step = step
        self.node = node
        self.record = record


@dataclass
class DynamicsConfig:
    """Settings of one trajectory.

    ``delta_t`` only matters for the ``dgc`` rule and defaults to ``2 alpha``.
    ``init`` is ``uniform_box`` (entries drawn from ``[init_low, init_high]``
    with ``seed``) or ``given`` (features passed to :func:`run`).
    """

    rule: str = "contrastive"
    alpha: float = 0.1
    steps: int = 1000
    temperature: float = 1.0
    beta: float = 0.0
    stages: int = 1
    preprocess: str = "none"
    normalization_set: str = "all"
    delta_t: float | None = None
    init: str = "uniform_box"
    init_low: float = -1.0
    init_high: float = 1.0
    dim: int = 2
    seed: int = 0
    snapshot_every: int = 10

    def validate(self) -> DynamicsConfig:
        if self.rule not in RULES:
            raise ConfigError(f"rule must be one of {RULES}, got {self.rule!r}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError(f"steps must be a non-negative integer, got {self.steps}")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not math.isfinite(self.beta):
            raise ConfigError("beta must be finite")
        if int(self.stages) != self.stages or self.stages < 1:
            raise ConfigError(f"stages must be a positive integer, got {self.stages}")
        if self.preprocess not in PREPROCESS_MODES:
            raise ConfigError(f"preprocess must be one of {PREPROCESS_MODES}")
        if self.normalization_set not in ("all", "neighborhood"):
            raise ConfigError("normalization_set must be 'all' or 'neighborhood'")
        if self.delta_t is not None and not math.isfinite(self.delta_t):
            raise ConfigError("delta_t must be finite")
        if self.init not in ("uniform_box", "given"):
            raise ConfigError(f"init must be 'uniform_box' or 'given', got {self.init!r}")
        if not self.init_low < self.init_high:
            raise ConfigError("init_low must be below init_high")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dim must be a positive integer, got {self.dim}")
        if int(self.snapshot_every) != self.snapshot_every or self.snapshot_every < 1:
            raise ConfigError(f"snapshot_every must be a positive integer, got {self.snapshot_every}")
        return self


@dataclass
class TrajectoryRecord:
    classes: list[int]
    steps: list[int] = field(default_factory=list)
    l_align: list[float] = field(default_factory=list)
    l_unif: list[float] = field(default_factory=list)
    l_total: list[float] = field(default_factory=list)
    d_m: list[list[float]] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    final: np.ndarray | None = None
    error: str | None = None

    @property
    def columns(self) -> list[str]:
        return ["step", "L_align", "L_unif", "L_total"] + [f"dM_class_{k}" for k in self.classes] + ["residual"]

    def rows(self) -> list[list]:
        return [
            [s, a, u, t, *d, r]
            for s, a, u, t, d, r in zip(self.steps, self.l_align, self.l_unif, self.l_total, self.d_m, self.residual)
        ]

    def d_m_of(self, k: int) -> np.ndarray:
        i = self.classes.index(k)
        return np.array([row[i] for row in self.d_m])


def _initial_features(g: AugmentationGraph, f0, cfg: DynamicsConfig) -> np.ndarray:
    if f0 is not None:
        return _check(f0, g).copy()
    if cfg.init == "given":
        raise ConfigError("init = given but no initial features were supplied")
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(cfg.init_low, cfg.init_high, (g.n, cfg.dim))


def run(g: AugmentationGraph, f0=None, cfg: DynamicsConfig | None = None) -> TrajectoryRecord:
    """Apply ``cfg.rule`` for ``cfg.steps`` steps, recording metrics every ``snapshot_every`` steps.

    Step 0 and the final step are always recorded. ``d_M`` is reported per
    label (one pseudo-class 0 when the graph is unlabelled), each against the
    top eigenvector of its class subgraph; those are computed once since the
    graph cannot change during a run. Raises :class:`DivergenceError` when an
    entry becomes non-finite or exceeds ``1e12`` in magnitude.
    """
    from .analysis import class_rows, equilibrium_residual, subspace_distance, top_eigenvector
    from .graph import IsolatedNodeWarning, class_subgraph
    from .losses import alignment_loss, uniformity_loss

    cfg = (cfg or DynamicsConfig()).validate()
    if cfg.rule == "multi_stage" and g.groups is None:
        raise ConfigError("rule multi_stage needs group ids on the graph")
    if cfg.rule in ("alignment", "attention_alignment") and cfg.alpha >= 0.5:
        warnings.warn(f"alpha={cfg.alpha} >= 0.5: alignment steps may oscillate", RuntimeWarning, stacklevel=2)
    delta_t = 2.0 * cfg.alpha if cfg.delta_t is None else cfg.delta_t
    if cfg.rule == "dgc" and delta_t >= 1.0:
        warnings.warn(f"delta_t={delta_t} >= 1: graph convolution steps may oscillate", RuntimeWarning, stacklevel=2)

    weights = g.node_weights
    f = preprocess(_initial_features(g, f0, cfg), cfg.preprocess, weights)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedNodeWarning)
        if g.labels is None:
            parts = [(0, np.arange(g.n), g)]
        else:
            parts = [(int(k), np.flatnonzero(g.labels == k), class_subgraph(g, int(k))) for k in np.unique(g.labels)]
        parts = [(k, nodes, g_k, top_eigenvector(g_k, k)) for k, nodes, g_k in parts]
    has_rows = bool((~g.isolated).any())

    record = TrajectoryRecord(classes=[k for k, *_ in parts])

    def observe(t, feat):
        la = alignment_loss(feat, g)
        lu = uniformity_loss(feat, g, cfg.temperature)
        record.steps.append(t)
        record.l_align.append(la)
        record.l_unif.append(lu)
        record.l_total.append(la / cfg.temperature + lu)
        record.d_m.append([subspace_distance(class_rows(feat, g_k, nodes), g_k, proj) for _, nodes, g_k, proj in parts])
        record.residual.append(equilibrium_residual(feat, g, cfg.temperature) if has_rows else float("nan"))
        record.snapshots[t] = feat.copy()

    bank = MemoryBank(cfg.stages) if cfg.rule == "multi_stage" else None
    observe(0, f)
    for t in range(1, cfg.steps + 1):
        f = _apply(cfg, f, g, bank, delta_t, t - 1)
        bad = ~np.isfinite(f) | (np.abs(np.where(np.isfinite(f), f, 0.0)) > DIVERGENCE_LIMIT)
        if bad.any():
            node = int(np.argwhere(bad)[0][0])
            record.final = None
            record.error = f"diverged at step {t}, node {node}"
            raise DivergenceError(t, node, record)
        if cfg.preprocess != "none":
            f = preprocess(f, cfg.preprocess, weights)
        if t % cfg.snapshot_every == 0 or t == cfg.steps:
            observe(t, f)
    record.final = f
    return record


def _apply(cfg: DynamicsConfig, f, g, bank, delta_t, step):
    rule = cfg.rule
    if rule == "alignment":
        return alignment_step(f, g, cfg.alpha)
    if rule == "uniformity":
        return uniformity_step(f, g, cfg.alpha, cfg.temperature)
    if rule == "uniformity_sg":
        return uniformity_step(f, g, cfg.alpha, cfg.temperature, stop_gradient=True)
    if rule == "contrastive":
        return contrastive_step(f, g, cfg.alpha, cfg.temperature)
    if rule == "attention_alignment":
        return attention_alignment_step(f, g, cfg.alpha, cfg.beta, cfg.normalization_set)
    if rule == "multi_stage":
        return multi_stage_step(f, g, bank, cfg.alpha, step)[0]
    if rule == "self_attention":
        return self_attention_step(f)
    return dgc_step(f, g, delta_t)
