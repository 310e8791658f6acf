"""Gappy-POD interpolation hyper-reduction.

Three greedy samplers choose which rows of the nonlinear-force basis are
observed online:

* ``deim``     oversampled DEIM, residual-maximizing per basis column
* ``qdeim_e``  pivoted-QR start followed by the GappyPOD+E eigenvalue-gain rule
* ``sopt``     greedy maximization of the S-measure

All argmax ties resolve to the lowest row index, so every sampler is
deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, pseudoinverse, qr_column_pivoted, thin_svd

METHODS = ("deim", "qdeim_e", "sopt")


@dataclass
class ForceBasis:
    basis: np.ndarray
    singular_values: np.ndarray = None

    def __post_init__(self):
        self.basis = as_matrix(self.basis, "force basis")
        if self.singular_values is None:
            self.singular_values = np.ones(self.basis.shape[1])

    @property
    def r_f(self):
        return self.basis.shape[1]

    @property
    def n_rows(self):
        return self.basis.shape[0]


@dataclass
class SampleIndexSet:
    indices: np.ndarray
    r_f: int
    method: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        if len(set(self.indices.tolist())) != self.indices.size:
            raise ValueError("sample indices must be distinct")

    @property
    def n_f(self):
        return self.indices.size

    def to_json(self):
        return json.dumps({"indices": self.indices.tolist(), "r_f": int(self.r_f),
                           "method": self.method})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["indices"], d["r_f"], d.get("method", ""))


@dataclass
class ObliqueProjector:
    """``P = Xi (Z^T Xi)^+ Z^T`` stored through its sampled pseudoinverse."""

    force_basis: ForceBasis
    samples: SampleIndexSet
    sampled_pinv: np.ndarray
    contracted: np.ndarray = None
    full_rank: bool = True

    def coefficients(self, f_sampled):
        return self.sampled_pinv @ f_sampled

    def apply(self, f):
        """Gappy reconstruction of a full-length vector from its sampled rows."""
        f = np.asarray(f, dtype=float)
        return self.force_basis.basis @ self.coefficients(f[self.samples.indices])

    def reduced(self, f_sampled):
        """Reduced force ``Psi^T Xi (Z^T Xi)^+ f_Z`` from sampled values only."""
        if self.contracted is None:
            raise ValueError("projector was built without a state basis")
        return self.contracted @ f_sampled


def force_basis_from_snapshots(F, target_E_r=None, r=None):
    """POD basis of force snapshots (zero offset)."""
    from .pod import truncate_for_energy

    U, sigma, _ = thin_svd(F)
    if r is None:
        r = truncate_for_energy(sigma, target_E_r)
    return ForceBasis(U[:, :r], sigma)


def _basis_matrix(xi):
    return xi.basis if isinstance(xi, ForceBasis) else as_matrix(xi, "force basis")


def _check_budget(Xi, n_f):
    N, r_f = Xi.shape
    if n_f > N:
        raise ValueError(f"n_f={n_f} exceeds the number of rows N={N}")
    if n_f < r_f:
        raise ValueError(f"n_f={n_f} is smaller than the force basis dimension r_f={r_f}")
    if r_f < 1:
        raise ValueError("force basis has no columns")


TIE_RTOL = 1e-12


def _argmax_unselected(scores, selected):
    """Lowest unselected index whose score is within rounding of the maximum."""
    scores = np.array(scores, dtype=float)
    scores[np.asarray(selected, dtype=int)] = -np.inf
    scores[np.isnan(scores)] = -np.inf
    best = scores.max()
    if not np.isfinite(best):
        return int(np.argmax(scores))
    return int(np.flatnonzero(scores >= best - TIE_RTOL * abs(best))[0])


def deim_oversampled(xi, n_f, trace=None):
    """Oversampled DEIM.

    For each basis column ``j >= 2`` up to ``n_iter = ceil((n_f-1)/(r_f-1))``
    indices are appended, each maximizing the residual between column ``j``
    and its gappy reconstruction from the previous columns on the current
    samples. Already-selected rows are excluded from the argmax.

    If `trace` is a list, ``(column, residual_vector, chosen_index)`` tuples
    are appended to it.
    """
    Xi = _basis_matrix(xi)
    _check_budget(Xi, n_f)
    N, r_f = Xi.shape
    Z = [int(np.argmax(np.abs(Xi[:, 0])))]
    if trace is not None:
        trace.append((0, np.abs(Xi[:, 0]), Z[0]))
    if len(Z) == n_f:
        return SampleIndexSet(Z, r_f, "deim")

    if r_f == 1:
        schedule = [(0, n_f - 1)]
    else:
        n_iter = math.ceil((n_f - 1) / (r_f - 1))
        schedule = [(j, n_iter) for j in range(1, r_f)]

    for j, n_iter in schedule:
        prev = Xi[:, :j]
        target = Xi[:, j]
        for _ in range(n_iter):
            if j == 0:
                eps = np.zeros(N)
            else:
                coef = pseudoinverse(prev[Z]) @ target[Z]
                eps = prev @ coef
            resid = np.abs(target - eps)
            i = _argmax_unselected(resid, Z)
            if trace is not None:
                trace.append((j, resid, i))
            Z.append(i)
            if len(Z) == n_f:
                return SampleIndexSet(Z, r_f, "deim")
    return SampleIndexSet(Z, r_f, "deim")  # pragma: no cover


def gappypod_e(xi, n_f):
    """GappyPOD+E: pivoted-QR initial rows, then eigenvalue-gap oversampling."""
    Xi = _basis_matrix(xi)
    _check_budget(Xi, n_f)
    N, r_f = Xi.shape
    _, _, piv = qr_column_pivoted(Xi.T)
    Z = [int(p) for p in piv[:r_f]]
    while len(Z) < n_f:
        _, s, V = thin_svd(Xi[Z])
        W = V.T @ Xi.T
        y = np.sum(W * W, axis=0)
        if r_f == 1:
            # no second singular value: the gain reduces to the row energy
            gain = y
        else:
            g = max(s[r_f - 2] ** 2 - s[r_f - 1] ** 2, 0.0)
            disc = np.maximum((g + y) ** 2 - 4.0 * g * W[r_f - 1] ** 2, 0.0)
            gain = g + y - np.sqrt(disc)
        Z.append(_argmax_unselected(gain, Z))
    return SampleIndexSet(Z, r_f, "qdeim_e")


def s_measure(A, rank_tol=1e-12):
    """S-measure ``(sqrt(det(A^T A)) / prod_k ||A e_k||)^(1/p)`` of a matrix.

    Returns 0 for a zero column or a numerically singular Gram matrix.
    """
    A = as_matrix(A)
    m, p = A.shape
    if p == 0:
        return 1.0
    norms = np.linalg.norm(A, axis=0)
    if m < p or np.any(norms == 0.0):
        return 0.0
    if p == 1:
        return 1.0
    R = np.linalg.qr(A / norms, mode="r")
    d = np.abs(np.diag(R))
    if d.min() <= rank_tol:
        return 0.0
    return float(np.exp(np.sum(np.log(d)) / p))


def _square_step_scores(Xi, Z, ell):
    """S of ``Xi[Z + [i], :ell]`` for every row i, via the Schur complement."""
    A = Xi[np.ix_(Z, range(ell - 1))]
    c = Xi[Z, ell - 1]
    R = Xi[:, :ell - 1]
    gamma = Xi[:, ell - 1]
    sign, logdet = np.linalg.slogdet(A)
    if sign == 0 or not np.isfinite(logdet) or np.linalg.cond(A) > 1e12:
        return None
    schur = np.abs(gamma - R @ np.linalg.solve(A, c))
    colsq = np.sum(A * A, axis=0)[None, :] + R * R
    lastsq = c @ c + gamma * gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        logS = (logdet + np.log(schur) - 0.5 * np.sum(np.log(colsq), axis=1)
                - 0.5 * np.log(lastsq)) / ell
        S = np.exp(logS)
    S[~np.isfinite(S)] = 0.0
    return S


def _overdetermined_step_scores(Xi, Z):
    """S of ``Xi[Z + [i], :]`` for every row i, via the rank-one Gram update."""
    A = Xi[Z]
    p = A.shape[1]
    G = A.T @ A
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0 or np.linalg.cond(G) > 1e12:
        return None
    quad = np.einsum("ij,ij->i", Xi, np.linalg.solve(G, Xi.T).T)
    colsq = np.sum(A * A, axis=0)[None, :] + Xi * Xi
    with np.errstate(divide="ignore", invalid="ignore"):
        logS = 0.5 * (logdet + np.log1p(quad) - np.sum(np.log(colsq), axis=1)) / p
        S = np.exp(logS)
    S[~np.isfinite(S)] = 0.0
    return np.minimum(S, 1.0)


def _direct_scores(Xi, Z, ncols):
    N = Xi.shape[0]
    return np.array([s_measure(Xi[Z + [i], :ncols]) if i not in Z else -np.inf
                     for i in range(N)])


def sopt(xi, n_f, fast=True):
    """Greedy S-optimal sampling.

    The first row maximizes ``|Xi[i, 0]|``. While fewer than ``r_f`` rows
    are chosen, step ``l`` maximizes S over the leading ``l`` columns; after
    that it maximizes S over all columns. Rank-one update formulas score all
    candidates at once; when the current sampled matrix is too ill
    conditioned for them the S-measure is evaluated directly.
    """
    Xi = _basis_matrix(xi)
    _check_budget(Xi, n_f)
    N, r_f = Xi.shape
    Z = [int(np.argmax(np.abs(Xi[:, 0])))]
    while len(Z) < n_f:
        ell = len(Z) + 1
        if ell <= r_f:
            scores = _square_step_scores(Xi, Z, ell) if fast else None
            if scores is None:
                scores = _direct_scores(Xi, Z, ell)
        else:
            scores = _overdetermined_step_scores(Xi, Z) if fast else None
            if scores is None:
                scores = _direct_scores(Xi, Z, r_f)
        Z.append(_argmax_unselected(scores, Z))
    return SampleIndexSet(Z, r_f, "sopt")


SAMPLERS = {"deim": deim_oversampled, "qdeim_e": gappypod_e, "sopt": sopt}


def sample(method, xi, n_f):
    try:
        sampler = SAMPLERS[method]
    except KeyError:
        raise ValueError(f"unknown sampler {method!r}; choose from {METHODS}") from None
    return sampler(xi, n_f)


def build_projector(xi, z, psi=None):
    """Precompute ``(Z^T Xi)^+`` and, given a state basis, ``Psi^T Xi (Z^T Xi)^+``."""
    if not isinstance(xi, ForceBasis):
        xi = ForceBasis(xi)
    idx = z.indices
    if np.any(idx < 0) or np.any(idx >= xi.n_rows):
        raise ValueError("sample index out of range for the force basis")
    sampled = xi.basis[idx]
    pinv = pseudoinverse(sampled)
    full_rank = np.linalg.matrix_rank(sampled) == xi.r_f if sampled.size else False
    contracted = None
    if psi is not None:
        Psi = psi.basis if hasattr(psi, "basis") else np.asarray(psi, dtype=float)
        contracted = (Psi.T @ xi.basis) @ pinv
    return ObliqueProjector(xi, z, pinv, contracted, bool(full_rank))


@dataclass(frozen=True)
class ProjectionDiagnostics:
    error: float
    bound: float
    epsilon_norm: float
    orthogonal_error: float
    within_bound: bool
    identity_holds: bool


def projection_error_diagnostics(xi, z, f, rel_tol=1e-8):
    """Oblique projection error, its pseudoinverse-norm bound and the
    orthogonal/oblique error split for one vector `f`."""
    if not isinstance(xi, ForceBasis):
        xi = ForceBasis(xi)
    Xi = xi.basis
    f = np.asarray(f, dtype=float)
    A = Xi[z.indices]
    pinv = pseudoinverse(A)
    err = float(np.linalg.norm(f - Xi @ (pinv @ f[z.indices])))
    f_perp = f - Xi @ (Xi.T @ f)
    orth = float(np.linalg.norm(f_perp))
    bound = float(np.linalg.norm(pinv, 2) * orth) if pinv.size else 0.0
    eps = np.linalg.solve(A.T @ A, A.T @ f_perp[z.indices])
    eps_norm = float(np.linalg.norm(eps))
    lhs, rhs = err**2, orth**2 + eps_norm**2
    scale = max(lhs, rhs, np.finfo(float).tiny)
    return ProjectionDiagnostics(
        error=err,
        bound=bound,
        epsilon_norm=eps_norm,
        orthogonal_error=orth,
        within_bound=err <= bound * (1 + 1e-10) + 1e-14,
        identity_holds=abs(lhs - rhs) <= rel_tol * scale,
    )
