"""Brute-force verifiers for the feature dynamics.

The reference evaluations here are plain double loops over nodes, written
independently of the vectorized code in :mod:`losses` and :mod:`dynamics`.
Checks return :class:`CheckReport` objects; ``pass`` holds exactly when the
measured discrepancy is within tolerance.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import analysis, dynamics, losses
from .graph import AugmentationGraph, class_subgraph


@dataclass
class CheckReport:
    name: str
    passed: bool
    discrepancy: float
    tolerance: float
    context: dict = field(default_factory=dict)

    def line(self) -> str:
        extra = "".join(f" {k}={_fmt(v)}" for k, v in self.context.items())
        return (
            f"CHECK name={self.name} pass={str(self.passed).lower()} "
            f"disc={_fmt(self.discrepancy)} tol={_fmt(self.tolerance)}{extra}"
        )


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v).replace(" ", "")


def _report(name, discrepancy, tolerance, **context) -> CheckReport:
    discrepancy = float(discrepancy)
    return CheckReport(name, bool(discrepancy <= tolerance), discrepancy, float(tolerance), context)


def check_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, check name)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# ---------------------------------------------------------------------------
# Random instances


def random_graph(n: int, rng: np.random.Generator, density: float = 0.5, weight_mode: str = "degree",
                 labels=None) -> AugmentationGraph:
    """Random weighted graph with no isolated nodes (a ring backbone is always present)."""
    a = np.triu(rng.uniform(0.1, 1.0, (n, n)) * (rng.random((n, n)) < density), 1)
    idx = np.arange(n)
    if n > 1:
        a[idx[:-1], idx[1:]] = rng.uniform(0.1, 1.0, n - 1)
    a = a + a.T
    return AugmentationGraph(a, weight_mode=weight_mode, labels=labels)


def random_label_preserving_graph(sizes, rng: np.random.Generator, density: float = 0.4,
                                  weight_mode: str = "degree", connected: bool = True) -> AugmentationGraph:
    """Block-diagonal random graph: edges only inside classes of the given sizes."""
    n = int(sum(sizes))
    a = np.zeros((n, n))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    start = 0
    for size in sizes:
        block = np.triu(rng.uniform(0.1, 1.0, (size, size)) * (rng.random((size, size)) < density), 1)
        if connected and size > 1:
            order = rng.permutation(size)
            block[np.minimum(order[:-1], order[1:]), np.maximum(order[:-1], order[1:])] = rng.uniform(0.1, 1.0, size - 1)
        a[start:start + size, start:start + size] = block + block.T
        start += size
    return AugmentationGraph(a, weight_mode=weight_mode, labels=labels)


def two_node_equilibrium(temperature: float = 1.0) -> tuple[AugmentationGraph, np.ndarray]:
    """Closed-form equilibrium on two nodes with self-loops.

    With ``A = [[2, 1], [1, 2]]`` the data conditional rows are (2/3, 1/3);
    scalar features ``+a`` and ``-a`` reproduce them when
    ``exp(2 a^2 / tau) = 2``.
    """
    g = AugmentationGraph(np.array([[2.0, 1.0], [1.0, 2.0]]))
    a = math.sqrt(temperature * math.log(2.0) / 2.0)
    return g, np.array([[a], [-a]])


def fitted_equilibrium(n: int = 8, m: int = 8, seed: int = 0, temperature: float = 1.0,
                       norm: float = 1.2) -> tuple[AugmentationGraph, np.ndarray]:
    """Graph with an attainable equilibrium, and features fitted to it numerically.

    Hidden rows ``h`` of length ``norm`` give ``K = exp(h h^T / tau)``; with
    ``u = K^{-1} 1 > 0`` the graph ``A = diag(u) K diag(u)`` has
    ``P_d = P_theta(h)`` in degree mode. The returned features are not ``h``:
    they come from contrastive dynamics started at random and polished by
    Levenberg-Marquardt on the conditional mismatch.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        h = rng.standard_normal((n, m))
        h *= norm / np.linalg.norm(h, axis=1, keepdims=True)
        k = np.exp(h @ h.T / temperature)
        u = np.linalg.solve(k, np.ones(n))
        if np.all(u > 0):
            break
    else:  # pragma: no cover
        raise RuntimeError("no positive scaling found; lower `norm`")
    a = u[:, None] * k * u[None, :]
    g = AugmentationGraph((a + a.T) / 2)
    target = analysis.data_conditional(g)

    f = rng.uniform(-1.0, 1.0, (n, m))
    for _ in range(2000):
        f = dynamics.contrastive_step(f, g, 0.5, temperature)

    def mismatch(x):
        return (analysis.model_conditional(x.reshape(n, m), g, temperature) - target).ravel()

    sol = least_squares(mismatch, f.ravel(), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return g, sol.x.reshape(n, m)


# ---------------------------------------------------------------------------
# Double-loop references


def sample_space_infonce(f, g: AugmentationGraph, temperature: float = 1.0) -> float:
    """``-E_{x,x+} f^T f+ / tau + E_x log E_x' exp(f^T f' / tau)`` by explicit loops."""
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    joint = g.joint
    w = g.node_weights
    positive = 0.0
    for x in range(n):
        for y in range(n):
            if joint[x, y]:
                positive += joint[x, y] * float(np.dot(f[x], f[y]))
    negative = 0.0
    for x in range(n):
        inner = 0.0
        for y in range(n):
            inner += w[y] * math.exp(float(np.dot(f[x], f[y])) / temperature)
        negative += w[x] * math.log(inner)
    return -positive / temperature + negative


def alignment_pairwise(f, g: AugmentationGraph) -> float:
    f = np.asarray(f, dtype=float)
    joint = g.joint
    total = 0.0
    for x in range(f.shape[0]):
        for y in range(f.shape[0]):
            if joint[x, y]:
                d = f[x] - f[y]
                total += joint[x, y] * float(np.dot(d, d))
    return 0.5 * total


def uniformity_expectation(f, g: AugmentationGraph, temperature: float = 1.0) -> float:
    f = np.asarray(f, dtype=float)
    w = g.node_weights
    total = 0.0
    for x in range(f.shape[0]):
        inner = sum(w[y] * math.exp(float(np.dot(f[x], f[y])) / temperature) for y in range(f.shape[0]))
        total += w[x] * (math.log(inner) - float(np.dot(f[x], f[x])) / temperature)
    return total


def alignment_local_update(f, g: AugmentationGraph, alpha: float) -> np.ndarray:
    """Per-node neighbourhood aggregation on weighted rows, mapped back to raw rows."""
    f = np.asarray(f, dtype=float)
    w = g.node_weights
    abar = g.normalized_adjacency
    F = np.sqrt(w)[:, None] * f
    out = np.empty_like(F)
    for x in range(F.shape[0]):
        acc = (1.0 - 2.0 * alpha) * F[x]
        for y in range(F.shape[0]):
            if abar[x, y] != 0.0:
                acc = acc + 2.0 * alpha * abar[x, y] * F[y]
        out[x] = acc
    return out / np.sqrt(w)[:, None]


def _attention_loop(f, g, beta, normalization_set):
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    coeff = np.zeros((n, n))
    for x in range(n):
        support = [y for y in range(n) if normalization_set == "all" or g.adjacency[x, y] > 0]
        if not support:
            continue
        scores = [beta * float(np.dot(f[x], f[y])) for y in support]
        top = max(scores)
        z = sum(math.exp(s - top) for s in scores)
        for y, s in zip(support, scores):
            coeff[x, y] = math.exp(s - top) / z
    return coeff


def attention_alignment_reference(f, g: AugmentationGraph, beta: float, normalization_set: str = "all") -> float:
    f = np.asarray(f, dtype=float)
    coeff = _attention_loop(f, g, beta, normalization_set)
    joint = g.joint
    total = 0.0
    for x in range(f.shape[0]):
        for y in range(f.shape[0]):
            if joint[x, y]:
                d = f[x] - f[y]
                total += joint[x, y] * coeff[x, y] * float(np.dot(d, d))
    return 0.5 * total


def attention_step_reference(f, g: AugmentationGraph, alpha: float, beta: float,
                             normalization_set: str = "all") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    coeff = _attention_loop(f, g, beta, normalization_set)
    w = g.node_weights
    abar = g.normalized_adjacency
    F = np.sqrt(w)[:, None] * f
    out = np.empty_like(F)
    for x in range(F.shape[0]):
        acc = (1.0 - 2.0 * alpha) * F[x]
        for y in range(F.shape[0]):
            if abar[x, y] != 0.0:
                acc = acc + 2.0 * alpha * abar[x, y] * coeff[x, y] * F[y]
        out[x] = acc
    return out / np.sqrt(w)[:, None]


# ---------------------------------------------------------------------------
# Finite differences


def finite_diff_gradient(loss, F, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss`` at ``F``, one entry at a time."""
    if not h > 0:
        raise ValueError("h must be positive")
    F = np.array(F, dtype=float)
    grad = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        orig = F[idx]
        F[idx] = orig + h
        up = loss(F)
        F[idx] = orig - h
        down = loss(F)
        F[idx] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise FloatingPointError(f"non-finite loss probe at entry {idx}")
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def _contrastive_surrogate(g: AugmentationGraph, frozen: np.ndarray, temperature: float):
    # 1/2 alignment + tau * stop-gradient uniformity, targets frozen at `frozen`.
    w = g.node_weights
    sw = np.sqrt(w)

    def loss(F):
        f = F / sw[:, None]
        scores = f @ frozen.T / temperature
        top = scores.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(scores - top) @ w)
        unif = np.sum(w * lse) - np.sum(w * np.sum(f * frozen, axis=1)) / temperature
        return 0.5 * losses.alignment_loss(f, g) + temperature * unif

    return loss


def verify_update_gradient(rule: str, g: AugmentationGraph, f, tol: float = 1e-3, alpha: float = 0.1,
                           temperature: float = 1.0, h: float = 1e-5, zero_tol: float = 1e-7) -> CheckReport:
    """Is the step displacement anti-parallel to the finite-difference gradient?

    Works on weighted rows. The loss matched to each rule: ``alignment`` ->
    alignment loss, ``uniformity`` -> uniformity loss, ``contrastive`` ->
    half the alignment loss plus the stop-gradient uniformity term with
    targets frozen at ``f``. Discrepancy is ``1 + cos``; the scale ratio
    ``|displacement / alpha| / |gradient|`` is reported, not asserted.
    """
    f = np.asarray(f, dtype=float)
    sw = np.sqrt(g.node_weights)[:, None]
    if rule == "alignment":
        new = dynamics.alignment_step(f, g, alpha)

        def loss(F):
            return losses.alignment_loss(F / sw, g)
    elif rule == "uniformity":
        new = dynamics.uniformity_step(f, g, alpha, temperature)

        def loss(F):
            return losses.uniformity_loss(F / sw, g, temperature)
    elif rule == "contrastive":
        new = dynamics.contrastive_step(f, g, alpha, temperature)
        loss = _contrastive_surrogate(g, f.copy(), temperature)
    else:
        raise ValueError(f"no gradient check for rule {rule!r}")
    disp = sw * (new - f) / alpha
    grad = finite_diff_gradient(loss, sw * f, h)
    nd, ng = float(np.linalg.norm(disp)), float(np.linalg.norm(grad))
    name = f"gradient_{rule}"
    if nd <= zero_tol and ng <= zero_tol:
        return _report(name, max(nd, ng), zero_tol, cosine="nan", scale=float("nan"), grad_norm=ng)
    if nd == 0.0 or ng == 0.0:
        return _report(name, 1.0, tol, cosine="nan", scale=float("nan"), grad_norm=ng)
    cos = float(np.sum(disp * grad)) / (nd * ng)
    return _report(name, 1.0 + cos, tol, cosine=cos, scale=nd / ng, grad_norm=ng)


# ---------------------------------------------------------------------------
# Structural checks


def verify_infonce_decomposition(g: AugmentationGraph, f, temperature: float = 1.0, tol: float = 1e-9) -> CheckReport:
    """Sample-space InfoNCE (double loop) vs alignment + uniformity in feature space."""
    sample = sample_space_infonce(f, g, temperature)
    feature = losses.infonce_feature_space(f, g, temperature)
    return _report("infonce_decomposition", abs(sample - feature), tol, n=g.n, m=np.shape(f)[1])


def verify_contraction(g: AugmentationGraph, alpha: float, steps: int, seed: int = 0, m: int = 2,
                       slack: float = 1e-9, f0=None) -> CheckReport:
    """Per-step, per-class check of ``d_M(F') <= |1 - 2 alpha lambda_k| d_M(F) + slack``."""
    if g.labels is None:
        raise ValueError("contraction check needs a labelled graph")
    if g.has_cross_class_edges():
        raise ValueError("contraction check assumes label-preserving augmentations: found a cross-class edge")
    rng = check_rng(seed, "contraction")
    f = rng.uniform(-1.0, 1.0, (g.n, m)) if f0 is None else np.array(f0, dtype=float)

    classes = []
    for k in np.unique(g.labels):
        nodes = np.flatnonzero(g.labels == k)
        g_k = class_subgraph(g, int(k))
        proj = analysis.top_eigenvector(g_k, int(k))
        factor = analysis.contraction_factor(g_k, alpha) if g_k.n >= 2 else 0.0
        classes.append((nodes, g_k, proj, factor))

    def distances(feat):
        return [analysis.subspace_distance(analysis.class_rows(feat, g_k, nodes), g_k, proj)
                for nodes, g_k, proj, _ in classes]

    worst = -math.inf
    before = distances(f)
    for _ in range(steps):
        f = dynamics.alignment_step(f, g, alpha)
        after = distances(f)
        for (_, _, _, factor), d0, d1 in zip(classes, before, after):
            worst = max(worst, d1 - factor * d0)
        before = after
    return _report("subspace_contraction", max(worst, 0.0) if steps else 0.0, slack,
                   alpha=alpha, steps=steps, classes=len(classes))


def verify_stationarity(g: AugmentationGraph, f, temperature: float = 1.0, alpha: float = 0.1,
                        step_tol: float = 1e-10, residual_tol: float = 1e-8) -> list[CheckReport]:
    disp = float(np.linalg.norm(dynamics.contrastive_step(f, g, alpha, temperature) - np.asarray(f)))
    res = analysis.equilibrium_residual(f, g, temperature)
    return [
        _report("equilibrium_displacement", disp, step_tol, n=g.n),
        _report("equilibrium_residual", res, residual_tol, n=g.n),
    ]


def verify_self_attention_equivalence(f, g: AugmentationGraph) -> CheckReport:
    """Stop-gradient uniformity step with alpha = -1 vs self-attention, bit for bit."""
    if g.weight_mode != "uniform":
        g = g.with_weight_mode("uniform")
    a = dynamics.uniformity_step(f, g, -1.0, 1.0, stop_gradient=True)
    b = dynamics.self_attention_step(f)
    disc = 0.0 if np.array_equal(a, b) else float(np.max(np.abs(a - b))) or math.inf
    return _report("equiv_self_attention", disc, 0.0)


def verify_dgc_equivalence(f, g: AugmentationGraph, alpha: float = 0.1) -> CheckReport:
    """Graph convolution with ``dt = 2 alpha`` vs the alignment step, bit for bit."""
    a = dynamics.dgc_step(f, g, 2.0 * alpha)
    b = dynamics.alignment_step(f, g, alpha)
    disc = 0.0 if np.array_equal(a, b) else float(np.max(np.abs(a - b))) or math.inf
    return _report("equiv_dgc_alignment", disc, 0.0)


def run_checks(seed: int = 0, n: int = 16, m: int = 4) -> list[CheckReport]:
    """The default verification suite."""
    reports = []

    rng = check_rng(seed, "infonce")
    g = random_graph(n, rng)
    reports.append(verify_infonce_decomposition(g, rng.uniform(-1, 1, (n, m)), 1.0))

    for rule in ("alignment", "uniformity", "contrastive"):
        rng = check_rng(seed, f"gradient_{rule}")
        g = random_graph(n, rng)
        reports.append(verify_update_gradient(rule, g, rng.uniform(-1, 1, (n, m))))

    g_eq, f_eq = two_node_equilibrium()
    r = verify_update_gradient("contrastive", g_eq, f_eq)
    r.name = "gradient_contrastive_equilibrium"
    reports.append(r)
    reports.extend(verify_stationarity(g_eq, f_eq))

    rng = check_rng(seed, "contraction")
    half = max(n // 2, 2)
    g_lp = random_label_preserving_graph([half, n - half if n - half >= 2 else 2], rng)
    reports.append(verify_contraction(g_lp, 0.1, 50, seed, m))

    rng = check_rng(seed, "equivalence")
    g = random_graph(n, rng, weight_mode="uniform")
    f = rng.uniform(-1, 1, (n, m))
    reports.append(verify_self_attention_equivalence(f, g))
    reports.append(verify_dgc_equivalence(f, g.with_weight_mode("degree"), 0.1))
    return reports
