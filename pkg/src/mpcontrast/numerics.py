"""Dense symmetric matrix primitives.

Everything here works on plain ``numpy`` arrays. Matrices in this package are
small (a few hundred nodes at most), so all storage is dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EigenConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps fail to drive the off-diagonal mass below tolerance."""


@dataclass(frozen=True)
class EigenDecomposition:
    """Full spectrum of a symmetric matrix.

    ``eigenvalues`` are sorted in descending order and column ``i`` of
    ``eigenvectors`` pairs with ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def symmetric(a, name: str = "matrix") -> np.ndarray:
    """Validate that ``a`` is a square, exactly symmetric, finite matrix.

    Returns a read-only float64 copy.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        i, j = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has a non-finite entry at ({i}, {j})")
    if not np.array_equal(a, a.T):
        diff = np.abs(a - a.T)
        i, j = np.unravel_index(np.argmax(diff), diff.shape)
        raise ValueError(f"{name} is not symmetric: entry ({i}, {j}) differs from ({j}, {i})")
    a.setflags(write=False)
    return a


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Tournament schedule: every pair (p, q) appears exactly once per sweep and
    # the pairs inside a round are disjoint, so a round can be applied at once.
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        ps, qs = [], []
        for i in range(k // 2):
            a, b = players[i], players[k - 1 - i]
            if a >= 0 and b >= 0:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_norm(a: np.ndarray) -> float:
    # Summed directly; sum(a^2) - sum(diag^2) cancels catastrophically near convergence.
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eigendecompose(
    m, tol: float = 1e-12, max_sweeps: int = 100, name: str = "matrix"
) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the ``n // 2`` rotations of a round touch disjoint rows and columns
    and can be applied together. Sweeps stop once the off-diagonal Frobenius
    mass drops below ``tol * max(1, ||m||_F)``.

    Eigenvalues come back sorted descending (ties keep their diagonal order)
    and each eigenvector is signed so its first nonzero component is positive.

    Raises:
        EigenConvergenceError: if ``max_sweeps`` sweeps are not enough.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.array(symmetric(m, name), dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    rounds = _round_robin(n)

    sweeps = 0
    off = _off_diagonal_norm(a)
    while off >= threshold:
        if sweeps >= max_sweeps:
            raise EigenConvergenceError(
                f"Jacobi eigensolver did not converge for {name} (n={n}) after "
                f"{max_sweeps} sweeps: off-diagonal residual {off:.3e} >= {threshold:.3e}"
            )
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            # hypot avoids overflowing theta**2 once apq is negligible.
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_diagonal_norm(a)

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    v = v[:, order]
    for i in range(n):
        nz = np.flatnonzero(np.abs(v[:, i]) > 1e-12)
        if nz.size and v[nz[0], i] < 0:
            v[:, i] = -v[:, i]
    return EigenDecomposition(values, v, sweeps)


def stable_row_softmax(scores, temperature: float = 1.0, log_weights=None) -> np.ndarray:
    """Row-wise softmax of ``scores / temperature``.

    The row maximum is subtracted before exponentiating, so scores up to
    ``700 * temperature`` in magnitude never overflow. When ``log_weights`` is
    given, column ``j`` is additionally weighted by ``exp(log_weights[j])``.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise ValueError(f"scores must be a 2-D matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        i, j = np.argwhere(~np.isfinite(s))[0]
        raise ValueError(f"non-finite score at row {i}, column {j}")
    z = s / temperature
    if log_weights is not None:
        z = z + np.asarray(log_weights, dtype=float)[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def frobenius_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
