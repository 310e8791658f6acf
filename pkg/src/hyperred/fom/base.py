"""Common machinery for the full-order finite element benchmarks.

A benchmark exposes its nonlinear force through a per-quadrature-point
integrand: for point ``k`` it returns the unweighted contributions
``eta(y, phi_a, t, x_k)`` to each local test function ``a``, whose global row
is ``test_dofs[k, a]``. Full assembly, entry-wise assembly on a sample mesh,
and reduced EQP assembly are all weighted sums of these rows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..numerics import as_vector


@dataclass
class FullQuadratureRule:
    weights: np.ndarray
    point_to_element: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.point_to_element = np.asarray(self.point_to_element, dtype=int)
        if np.any(self.weights <= 0):
            raise ValueError("full quadrature weights must be positive")
        if self.point_to_element.shape != self.weights.shape:
            raise ValueError("every quadrature point needs an owning element")

    @property
    def n_points(self):
        return self.weights.size


@dataclass
class PointPlan:
    """Gather/scatter data for evaluating the integrand on a subset of points.

    ``rows`` lists the distinct global test rows touched; ``local_rows`` maps
    each (point, local function) pair into that list. ``read_rows`` are the
    state entries the integrand reads at these points.
    """

    points: np.ndarray
    weights: np.ndarray
    rows: np.ndarray
    local_rows: np.ndarray
    read_rows: np.ndarray
    elements: np.ndarray


class FomProblem:
    """Semi-discrete system ``M dy/dt + A y = f(y, t)`` on a finite element mesh.

    Subclasses fill in the arrays below and implement :meth:`integrand`.
    """

    name = "fom"
    solver = "backward_euler"

    mass: np.ndarray
    linear_op: np.ndarray
    quadrature: FullQuadratureRule
    initial_state: np.ndarray
    parameter: float
    field_layout: tuple
    test_dofs: np.ndarray     # (K, n_local) rows receiving each point's contributions
    read_dofs: np.ndarray     # (K, n_read) state entries each point reads
    element_dofs: np.ndarray  # (n_elements, n_local_dofs) state rows owned by each element
    dt: float
    n_steps: int

    def _finalize(self):
        """Validate invariants and cache factorizations."""
        self.state_dim = self.mass.shape[0]
        starts = 0
        for _, off, length in self.field_layout:
            if off != starts:
                raise ValueError("field layout must tile the state")
            starts += length
        if starts != self.state_dim:
            raise ValueError("field layout must tile the state")
        self._mass_cho = sla.cho_factor(self.mass)
        n_el = self.element_dofs.shape[0]
        # elements containing each degree of freedom, for sample-mesh extraction
        self._row_elements = [[] for _ in range(self.state_dim)]
        for e in range(n_el):
            for r in np.unique(self.element_dofs[e]):
                self._row_elements[r].append(e)
        self._row_elements = [np.asarray(v, dtype=int) for v in self._row_elements]
        self._points_of_element = [np.flatnonzero(self.quadrature.point_to_element == e)
                                   for e in range(n_el)]

    # subclasses --------------------------------------------------------
    def integrand(self, state, t, points):
        """Unweighted integrand values, shape ``(len(points), n_local)``."""
        raise NotImplementedError

    def force_jacobian(self, state, t):
        """Dense ``df/dy``; only needed by implicit full-order solves."""
        raise NotImplementedError

    # assembly ----------------------------------------------------------
    @property
    def n_points(self):
        return self.quadrature.n_points

    def check_state(self, state):
        state = as_vector(state, "state")
        if state.shape[0] != self.state_dim:
            raise ValueError(f"state has length {state.shape[0]}, expected {self.state_dim}")
        return state

    def force(self, state, t=0.0):
        state = self.check_state(state)
        pts = np.arange(self.n_points)
        vals = self.integrand(state, t, pts) * self.quadrature.weights[:, None]
        return np.bincount(self.test_dofs.ravel(), vals.ravel(), minlength=self.state_dim)

    def plan_for_points(self, points, weights=None):
        points = np.asarray(points, dtype=int)
        if weights is None:
            weights = self.quadrature.weights[points]
        rows, inv = np.unique(self.test_dofs[points], return_inverse=True)
        return PointPlan(
            points=points,
            weights=np.asarray(weights, dtype=float),
            rows=rows,
            local_rows=inv.reshape(len(points), -1),
            read_rows=np.unique(self.read_dofs[points]),
            elements=np.unique(self.quadrature.point_to_element[points]),
        )

    def elements_for_rows(self, rows):
        rows = np.asarray(rows, dtype=int)
        if rows.size == 0:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([self._row_elements[r] for r in rows] + [np.zeros(0, int)]))

    def plan_for_rows(self, rows):
        """Points of every element adjacent to the given test rows."""
        elems = self.elements_for_rows(rows)
        pts = (np.concatenate([self._points_of_element[e] for e in elems])
               if elems.size else np.zeros(0, dtype=int))
        return self.plan_for_points(np.sort(pts))

    def force_on_plan(self, state, t, plan):
        """Force rows ``plan.rows`` accumulated from the plan's points only."""
        if plan.points.size == 0:
            return np.zeros(plan.rows.size)
        vals = self.integrand(state, t, plan.points) * plan.weights[:, None]
        return np.bincount(plan.local_rows.ravel(), vals.ravel(), minlength=plan.rows.size)

    # time integration ----------------------------------------------------
    def solve_mass(self, rhs):
        return sla.cho_solve(self._mass_cho, rhs)

    def rhs(self, state, t):
        return self.solve_mass(self.force(state, t) - self.linear_op @ state)


@dataclass
class FomTrajectory:
    times: np.ndarray
    states: np.ndarray   # (N, n_steps + 1)
    forces: np.ndarray   # (N, n_steps + 1), co-timed with states
    wall_time: float
    newton_iters_total: int = 0


class SolverError(RuntimeError):
    """Time integration failed; ``step`` holds the failing step index."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


def solve_fom(fom, dt=None, n_steps=None, newton_tol=1e-10, max_newton=25, y0=None, t0=0.0):
    """Integrate the full-order model with its configured scheme."""
    dt = fom.dt if dt is None else dt
    n_steps = fom.n_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ValueError("need at least one time step")
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(fom.initial_state if y0 is None else y0, dtype=float)
    states = [y.copy()]
    newton_total = 0
    start = time.perf_counter()
    if fom.solver == "rk4":
        step = _rk4_step_factory(fom)
        for n in range(n_steps):
            y = step(y, t0 + n * dt, dt)
            if not np.all(np.isfinite(y)):
                raise SolverError("non-finite full-order state", n + 1)
            states.append(y.copy())
    else:
        lhs_const = fom.mass / dt + fom.linear_op
        for n in range(n_steps):
            t = t0 + (n + 1) * dt
            base = fom.mass @ y / dt
            z = y.copy()
            scale = 1.0 + np.linalg.norm(base)
            for it in range(max_newton + 1):
                res = lhs_const @ z - fom.force(z, t) - base
                if np.linalg.norm(res) <= newton_tol * scale:
                    break
                if it == max_newton:
                    raise SolverError("Newton did not converge", n + 1)
                jac = lhs_const - fom.force_jacobian(z, t)
                z = z - np.linalg.solve(jac, res)
                newton_total += 1
            y = z
            states.append(y.copy())
    wall = time.perf_counter() - start
    times = t0 + dt * np.arange(n_steps + 1)
    X = np.column_stack(states)
    F = np.column_stack([fom.force(X[:, i], times[i]) for i in range(X.shape[1])])
    return FomTrajectory(times, X, F, wall, newton_total)


def _rk4_step_factory(fom):
    def step(y, t, dt):
        k1 = fom.rhs(y, t)
        k2 = fom.rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = fom.rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = fom.rhs(y + dt * k3, t + dt)
        return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return step


# module-level API ------------------------------------------------------------

def eval_force_full(fom, state, t=0.0):
    """Full-rule assembly ``sum_k rho_k eta(y, phi_j, t, x_k)`` for every row j."""
    return fom.force(state, t)


def eval_force_entries(fom, state, t, indices, plan=None):
    """Force entries at `indices`, assembled from the adjacent elements only."""
    idx = np.asarray(getattr(indices, "indices", indices), dtype=int)
    state = fom.check_state(state)
    if plan is None:
        plan = fom.plan_for_rows(idx)
    vals = fom.force_on_plan(state, t, plan)
    out = np.zeros(idx.size)
    pos = np.searchsorted(plan.rows, idx)
    hit = (pos < plan.rows.size) & (plan.rows[np.minimum(pos, plan.rows.size - 1)] == idx)
    out[hit] = vals[pos[hit]]
    return out


def eval_integrand_contracted(fom, state, t, quad_index, psi):
    """Integrand at one quadrature point contracted against the state basis rows."""
    Psi = getattr(psi, "basis", psi)
    k = int(quad_index)
    if not 0 <= k < fom.n_points:
        raise ValueError(f"quadrature index {k} out of range")
    eta = fom.integrand(fom.check_state(state), t, np.array([k]))[0]
    return eta @ Psi[fom.test_dofs[k]]


def sample_mesh_from_indices(fom, indices):
    """Elements adjacent to each sampled degree of freedom."""
    idx = np.asarray(getattr(indices, "indices", indices), dtype=int)
    return fom.elements_for_rows(idx)
