"""Dense linear-algebra kernels and the Lawson-Hanson NNLS solver.

Everything here is a pure function of its inputs. Factorizations are
delegated to LAPACK through numpy/scipy; the NNLS active-set iteration is
written out because its stopping rules, tie-breaking and point cap are part
of the EQP contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "NNLSResult",
    "as_matrix",
    "as_vector",
    "thin_svd",
    "pseudoinverse",
    "qr_column_pivoted",
    "lq",
    "LQResult",
    "nnls_lawson_hanson",
]


def as_matrix(A, name="A"):
    """Return `A` as a finite 2-D float array or raise ``ValueError``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        bad = np.argwhere(~np.isfinite(A))[0]
        raise ValueError(f"{name} has a non-finite entry at {tuple(bad)}")
    return A


def as_vector(b, name="b"):
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError(f"{name} has a non-finite entry at {int(np.argmin(np.isfinite(b)))}")
    return b


def thin_svd(A):
    """Thin singular value decomposition ``A = U @ diag(sigma) @ V.T``.

    Returns ``min(m, n)`` singular triplets with ``sigma`` nonincreasing.
    Note that ``V`` is returned, not its transpose.
    """
    A = as_matrix(A)
    if A.size == 0:
        raise ValueError("cannot factor an empty matrix")
    U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
    return U, sigma, Vt.T


def pseudoinverse(A, cutoff=1e-12):
    """Moore-Penrose pseudoinverse via the SVD.

    Singular values at or below ``cutoff * sigma_max`` are treated as zero.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    A = as_matrix(A)
    m, n = A.shape
    if A.size == 0:
        return np.zeros((n, m))
    U, sigma, V = thin_svd(A)
    smax = sigma[0] if sigma.size else 0.0
    keep = sigma > cutoff * smax
    if smax == 0.0 or not np.any(keep):
        return np.zeros((n, m))
    return (V[:, keep] / sigma[keep]) @ U[:, keep].T


def qr_column_pivoted(A):
    """Householder QR with column pivoting, ``A[:, pivots] = Q @ R``.

    ``|R[k, k]|`` is nonincreasing. Among columns with equal remaining norm
    the lowest index is pivoted first (LAPACK ``geqp3`` behaviour).
    """
    A = as_matrix(A)
    if A.size == 0:
        raise ValueError("cannot factor an empty matrix")
    Q, R, piv = sla.qr(A, mode="economic", pivoting=True)
    return Q, R, np.asarray(piv, dtype=int)


@dataclass(frozen=True)
class LQResult:
    L: np.ndarray
    Q: np.ndarray
    kept_rows: np.ndarray
    dropped: int


def lq(A, rank_tol=1e-12):
    """LQ factorization ``A[kept_rows] = L @ Q`` with orthonormal rows in Q.

    Rows that are numerically dependent on the others (pivoted-QR diagonal
    at or below ``rank_tol`` times the largest) are dropped first; the
    surviving rows keep their original order so that ``L`` is genuinely
    lower triangular.
    """
    A = as_matrix(A)
    m, n = A.shape
    if m == 0:
        return LQResult(np.zeros((0, 0)), np.zeros((0, n)), np.zeros(0, dtype=int), 0)
    _, Rp, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rp))
    top = diag[0] if diag.size else 0.0
    rank = int(np.count_nonzero(diag > rank_tol * top)) if top > 0 else 0
    kept = np.sort(piv[:rank])
    if rank == 0:
        return LQResult(np.zeros((0, 0)), np.zeros((0, n)), kept, m)
    Qt, R = np.linalg.qr(A[kept].T, mode="reduced")
    return LQResult(R.T, Qt.T, kept, m - rank)


@dataclass
class NNLSResult:
    """Outcome of a Lawson-Hanson solve.

    ``status`` is one of ``"residual"`` (relative residual below tol),
    ``"dual"`` (KKT dual test passed), ``"capped"`` (passive set hit the
    point cap) or ``"max_iter"``.
    """

    x: np.ndarray
    residual: float
    iterations: int
    status: str
    dual_max: float

    @property
    def converged(self):
        return self.status in ("residual", "dual")


def _passive_lstsq(A, b, passive):
    """Least squares on the passive columns through a thin QR."""
    Ap = A[:, passive]
    if Ap.shape[1] > Ap.shape[0]:
        return np.linalg.lstsq(Ap, b, rcond=None)[0]
    Q, R = np.linalg.qr(Ap, mode="reduced")
    d = np.abs(np.diag(R))
    if d.size and d.min() > 1e-13 * max(d.max(), 1.0):
        return sla.solve_triangular(R, Q.T @ b, check_finite=False)
    return np.linalg.lstsq(Ap, b, rcond=None)[0]


def nnls_lawson_hanson(A, b, tol=1e-10, max_iter=None, max_points=None):
    """Solve ``min ||A x - b||_2`` subject to ``x >= 0``.

    Parameters
    ----------
    A : array_like, shape (m, n)
    b : array_like, shape (m,)
    tol : float
        Stops when ``||b - A x|| <= tol * ||b||`` or when the largest dual
        entry over the zero set is at most ``tol * ||A.T b||_inf``.
    max_iter : int, optional
        Cap on least-squares solves, default ``3 * n``.
    max_points : int, optional
        Stop once the passive set holds this many columns.

    Returns
    -------
    NNLSResult
        The iterate is always feasible; when a cap is hit it is the last
        feasible iterate, flagged through ``status``.
    """
    A = as_matrix(A)
    b = as_vector(b)
    m, n = A.shape
    if b.shape[0] != m:
        raise ValueError(f"A has {m} rows but b has length {b.shape[0]}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    bnorm = np.linalg.norm(b)
    dual_scale = np.max(np.abs(A.T @ b)) if n else 0.0
    iterations = 0

    while True:
        resid = b - A @ x
        w = A.T @ resid
        dual_max = float(np.max(w[~passive])) if np.any(~passive) else 0.0
        candidates = ~passive & ~blocked
        if np.linalg.norm(resid) <= tol * bnorm:
            status = "residual"
            break
        if not np.any(candidates) or np.max(w[candidates]) <= tol * dual_scale:
            status = "dual"
            break
        if max_points is not None and np.count_nonzero(passive) >= max_points:
            status = "capped"
            break
        if iterations >= max_iter:
            status = "max_iter"
            break

        # np.argmax returns the first maximum: ties enter by lowest index
        t = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[t] = True
        first = True
        while True:
            iterations += 1
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            if idx.size:
                z[idx] = _passive_lstsq(A, b, idx)
            if np.all(z[idx] > 0):
                x = z
                blocked[:] = False
                break
            if first and z[t] <= 0:
                # rounding made the entering column useless; skip it this round
                passive[t] = False
                blocked[t] = True
                break
            first = False
            neg = np.flatnonzero(passive & (z <= 0))
            ratios = x[neg] / (x[neg] - z[neg])
            k = int(np.argmin(ratios))
            x = x + ratios[k] * (z - x)
            x[neg[k]] = 0.0
            drop = passive & (x <= 0)
            x[drop] = 0.0
            passive &= ~drop
            if iterations >= max_iter:
                break

    x = np.where(passive, np.maximum(x, 0.0), 0.0)
    residual = float(np.linalg.norm(b - A @ x))
    return NNLSResult(x=x, residual=residual, iterations=iterations,
                      status=status, dual_max=dual_max)
