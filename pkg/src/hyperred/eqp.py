"""Empirical quadrature: sparse nonnegative reweighting of the FE quadrature.

The accuracy constraints matrix ``G`` has one row per (snapshot, reduced
test function) pair and one column per quadrature point; entry ``G[i, k]``
is the integrand at point ``k`` for the reduced test function ``psi_j`` and
the snapshot state ``y(t_s)``, with ``i = j + s * r_y``. The sparse weights
solve ``min_{r >= 0} ||G rho - G r||`` with Lawson-Hanson after row
max-abs scaling and LQ orthonormalization of the rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .numerics import lq, nnls_lawson_hanson


@dataclass
class ConstraintMatrix:
    data: np.ndarray
    row_meta: list
    rhs: np.ndarray

    @property
    def n_constraints(self):
        return self.data.shape[0]


@dataclass
class ConditionedConstraints:
    matrix: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    row_scale: np.ndarray
    kept_rows: np.ndarray
    zero_rows: int
    dependent_rows: int

    @property
    def report(self):
        return {
            "rows_in": int(self.row_scale.size),
            "zero_rows_dropped": self.zero_rows,
            "dependent_rows_dropped": self.dependent_rows,
            "rows_out": int(self.matrix.shape[0]),
        }


@dataclass
class SparseQuadratureRule:
    weights: np.ndarray
    tolerance_used: float = 0.0
    achieved_residual: float = 0.0
    status: str = "full"
    iterations: int = 0
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("quadrature weights must be nonnegative")
        self.support = np.flatnonzero(self.weights)

    @property
    def k_star(self):
        return int(self.support.size)

    @property
    def n_points(self):
        return int(self.weights.size)

    def to_json(self):
        return json.dumps({
            "K": self.n_points,
            "support": self.support.tolist(),
            "weights": self.weights[self.support].tolist(),
            "tol": self.tolerance_used,
            "residual": self.achieved_residual,
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        w = np.zeros(d["K"])
        w[np.asarray(d["support"], dtype=int)] = d["weights"]
        return cls(w, d.get("tol", 0.0), d.get("residual", 0.0), "loaded")


def full_rule(quadrature):
    """The unreduced rule, useful as a consistency reference."""
    return SparseQuadratureRule(quadrature.weights.copy())


def contracted_integrand(fom, state, t, psi, points=None):
    """``(len(points), r_y)`` integrand values contracted against ``Psi``."""
    Psi = getattr(psi, "basis", psi)
    if points is None:
        points = np.arange(fom.n_points)
    eta = fom.integrand(state, t, points)
    return np.einsum("ka,kar->kr", eta, Psi[fom.test_dofs[points]])


def assemble_constraints(fom, psi, snapshots, selected_times=None):
    """Accuracy constraints from training snapshots.

    `snapshots` is a :class:`~hyperred.pod.SnapshotMatrix` (its full states
    are used, offset included); `selected_times` picks its columns.
    """
    states = snapshots.states()
    times = snapshots.time_stamps
    if selected_times is None:
        selected_times = range(states.shape[1])
    selected_times = [int(s) for s in selected_times]
    Psi = getattr(psi, "basis", psi)
    if Psi.shape[0] != fom.state_dim:
        raise ValueError("basis rows do not match the problem dimension")
    r = Psi.shape[1]
    blocks, meta = [], []
    for s in selected_times:
        C = contracted_integrand(fom, states[:, s], times[s], Psi)
        if not np.all(np.isfinite(C)):
            k = int(np.argwhere(~np.isfinite(C))[0, 0])
            e = int(fom.quadrature.point_to_element[k])
            raise ValueError(f"non-finite integrand at quadrature point {k} (element {e}), snapshot {s}")
        blocks.append(C.T)
        meta.extend((s, j) for j in range(r))
    G = np.vstack(blocks) if blocks else np.zeros((0, fom.n_points))
    return ConstraintMatrix(G, meta, G @ fom.quadrature.weights)


def condition_constraints(G, rank_tol=1e-12, zero_tol=1e-12):
    """Row max-abs scaling followed by LQ; returns the orthonormal-row system.

    With ``D G = L Q`` the right-hand side becomes ``L^{-1} D (G rho)``.
    Rows whose largest entry is at most ``zero_tol`` times the largest entry
    of ``G`` are rounding noise and are dropped before scaling.
    """
    data = G.data if isinstance(G, ConstraintMatrix) else np.asarray(G, dtype=float)
    rhs = G.rhs if isinstance(G, ConstraintMatrix) else None
    if data.size == 0:
        raise ValueError("empty constraint matrix")
    scale = np.max(np.abs(data), axis=1)
    nonzero = scale > zero_tol * scale.max()
    scaled = data[nonzero] / scale[nonzero, None]
    scaled_rhs = None if rhs is None else rhs[nonzero] / scale[nonzero]
    fac = lq(scaled, rank_tol=rank_tol)
    kept = np.flatnonzero(nonzero)[fac.kept_rows]
    rhs_c = None
    if scaled_rhs is not None:
        rhs_c = sla.solve_triangular(fac.L, scaled_rhs[fac.kept_rows], lower=True)
    return ConditionedConstraints(
        matrix=fac.Q, rhs=rhs_c, lower=fac.L, row_scale=scale, kept_rows=kept,
        zero_rows=int(np.count_nonzero(~nonzero)), dependent_rows=fac.dropped,
    )


def solve_weights(Gc, rhs_c, rho_full=None, tol=1e-4, max_points=None, max_iter=None):
    """Sparse nonnegative weights from the conditioned system.

    ``rho_full`` is accepted for reporting symmetry with the full rule; the
    solve itself only needs the conditioned right-hand side.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Gc = np.asarray(Gc, dtype=float)
    if max_iter is None:
        max_iter = 3 * Gc.shape[1]
    res = nnls_lawson_hanson(Gc, rhs_c, tol=tol, max_iter=max_iter, max_points=max_points)
    denom = np.linalg.norm(rhs_c)
    rel = res.residual / denom if denom > 0 else res.residual
    return SparseQuadratureRule(res.x, tolerance_used=tol, achieved_residual=float(rel),
                                status=res.status, iterations=res.iterations)


def build_rule(fom, psi, snapshots, tol=1e-4, stride=1, max_points=None):
    """Offline EQP pipeline: constraints, conditioning, NNLS."""
    times = range(0, snapshots.n_snapshots, max(1, int(stride)))
    G = assemble_constraints(fom, psi, snapshots, times)
    cond = condition_constraints(G)
    rule = solve_weights(cond.matrix, cond.rhs, fom.quadrature.weights, tol, max_points)
    return rule, G, cond


class SparseEvaluator:
    """Online reduced force from the support points of a sparse rule.

    Only the state rows read at support points are lifted, so the cost
    scales with ``K*`` rather than with the full mesh.
    """

    def __init__(self, fom, psi, rule):
        self.fom = fom
        Psi = getattr(psi, "basis", psi)
        self.offset = getattr(psi, "offset", np.zeros(Psi.shape[0]))
        self.points = rule.support
        self.weights = rule.weights[self.points]
        self.psi_local = Psi[fom.test_dofs[self.points]] * self.weights[:, None, None]
        self.read_rows = np.unique(fom.read_dofs[self.points]) if self.points.size else np.zeros(0, int)
        self.psi_read = Psi[self.read_rows]
        self.offset_read = self.offset[self.read_rows]
        self.r = Psi.shape[1]
        self._buf = np.zeros(fom.state_dim)

    def __call__(self, y_hat, t):
        if self.points.size == 0:
            return np.zeros(self.r)
        self._buf[self.read_rows] = self.offset_read + self.psi_read @ y_hat
        eta = self.fom.integrand(self._buf, t, self.points)
        return np.einsum("ka,kar->r", eta, self.psi_local)

    def from_state(self, state, t):
        eta = self.fom.integrand(np.asarray(state, dtype=float), t, self.points)
        return np.einsum("ka,kar->r", eta, self.psi_local) if self.points.size else np.zeros(self.r)


def evaluate_sparse(fom, psi, rule, state, t=0.0):
    """Reduced force ``sum_{k in support} rho*_k (contracted integrand at x_k)``."""
    Psi = getattr(psi, "basis", psi)
    if rule.n_points != fom.n_points:
        raise ValueError("rule layout does not match the problem's quadrature")
    pts = rule.support
    if pts.size == 0:
        return np.zeros(Psi.shape[1])
    C = contracted_integrand(fom, fom.check_state(state), t, Psi, pts)
    return rule.weights[pts] @ C


def sample_mesh_from_rule(rule, full):
    """Elements owning at least one support point."""
    return np.unique(full.point_to_element[rule.support])
