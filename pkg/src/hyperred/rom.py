"""Galerkin reduced models and their online time integrators.

The reduced system is ``Mh dyh/dt + Ah yh + c = fh(yh, t)`` with
``Mh = Psi^T M Psi``, ``Ah = Psi^T A Psi`` and ``c = Psi^T A offset``. The
reduced force ``fh`` comes from one of three strategies:

``none``           ``Psi^T f(lift(yh))`` with full assembly
``interpolation``  gappy reconstruction from sampled force entries
``eqp``            sparse quadrature over the support points of a rule
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .eqp import SparseEvaluator, SparseQuadratureRule
from .fom.base import SolverError
from .interpolation import ObliqueProjector, build_projector
from .pod import ReducedBasis

STRATEGIES = ("none", "interpolation", "eqp")


class _FullForce:
    def __init__(self, fom, basis):
        self.fom, self.basis = fom, basis

    def __call__(self, y_hat, t):
        return self.basis.basis.T @ self.fom.force(self.basis.lift(y_hat), t)


class _InterpolatedForce:
    """Gappy reconstruction from force entries at the sampled rows.

    Only the elements adjacent to the samples are visited and only the
    state entries they read are lifted.
    """

    def __init__(self, fom, basis, projector):
        self.fom = fom
        self.projector = projector
        idx = projector.samples.indices
        self.plan = fom.plan_for_rows(idx)
        pos = np.searchsorted(self.plan.rows, idx)
        pos_c = np.minimum(pos, max(self.plan.rows.size - 1, 0))
        # sampled rows that no point contributes to hold an exact zero
        self.hit = (pos < self.plan.rows.size) & (self.plan.rows[pos_c] == idx) if self.plan.rows.size \
            else np.zeros(idx.size, bool)
        self.pos = pos_c[self.hit]
        self._sampled = np.zeros(idx.size)
        self.read_rows = self.plan.read_rows
        self.psi_read = basis.basis[self.read_rows]
        self.offset_read = basis.offset[self.read_rows]
        self.contracted = projector.contracted
        self._buf = np.zeros(fom.state_dim)

    @property
    def elements(self):
        return self.plan.elements

    def __call__(self, y_hat, t):
        self._buf[self.read_rows] = self.offset_read + self.psi_read @ y_hat
        vals = self.fom.force_on_plan(self._buf, t, self.plan)
        self._sampled[self.hit] = vals[self.pos]
        return self.contracted @ self._sampled


@dataclass
class ReducedModel:
    basis: ReducedBasis
    reduced_mass: np.ndarray
    reduced_linear: np.ndarray
    reduced_affine: np.ndarray
    fom: object
    strategy: str = "none"
    artifact: object = None
    _force: object = field(default=None, repr=False)

    def __post_init__(self):
        if self._force is None:
            self._force = _FullForce(self.fom, self.basis)
        self._mass_cho = sla.cho_factor(self.reduced_mass)

    @property
    def r(self):
        return self.basis.retained

    def with_interpolation(self, xi, samples):
        """Copy of the model using gappy interpolation on ``samples``."""
        proj = xi if isinstance(xi, ObliqueProjector) else build_projector(xi, samples, self.basis)
        if proj.contracted is None:
            proj = build_projector(proj.force_basis, proj.samples, self.basis)
        return self._with("interpolation", proj, _InterpolatedForce(self.fom, self.basis, proj))

    def with_eqp(self, rule: SparseQuadratureRule):
        return self._with("eqp", rule, SparseEvaluator(self.fom, self.basis, rule))

    def without_hr(self):
        return self._with("none", None, _FullForce(self.fom, self.basis))

    def _with(self, strategy, artifact, force):
        return ReducedModel(self.basis, self.reduced_mass, self.reduced_linear, self.reduced_affine,
                            self.fom, strategy, artifact, force)

    def initial_reduced_state(self, y0=None):
        y0 = self.fom.initial_state if y0 is None else y0
        return self.basis.restrict(y0)

    def solve_mass(self, rhs):
        return sla.cho_solve(self._mass_cho, rhs)


def project_operators(fom, psi):
    """Galerkin-project the mass and linear operators onto ``psi``."""
    Psi = psi.basis
    if Psi.shape[0] != fom.state_dim:
        raise ValueError(f"basis has {Psi.shape[0]} rows, problem has {fom.state_dim}")
    Mh = Psi.T @ fom.mass @ Psi
    Mh = 0.5 * (Mh + Mh.T)
    Ah = Psi.T @ fom.linear_op @ Psi
    c = Psi.T @ (fom.linear_op @ psi.offset)
    return ReducedModel(psi, Mh, Ah, c, fom)


def reduced_force(model, y_hat, t=0.0):
    y_hat = np.asarray(y_hat, dtype=float)
    if y_hat.shape != (model.r,):
        raise ValueError(f"reduced state must have length {model.r}")
    return model._force(y_hat, t)


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    reduced_states: list
    lifted_final: np.ndarray
    wall_time: float
    n_steps: int
    newton_iters_total: int = 0
    window_starts: tuple = (0,)

    def __post_init__(self):
        if len(self.times) != len(self.reduced_states) or len(self.times) != self.n_steps + 1:
            raise ValueError("trajectory lengths are inconsistent")


def _check_step(dt, n_steps):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("need at least one time step")


def _backward_euler_loop(model, y, t0, dt, n_steps, newton_tol, max_newton):
    Mh, Ah, c = model.reduced_mass, model.reduced_linear, model.reduced_affine
    lhs = Mh / dt + Ah
    force = model._force
    r = model.r
    states = [y.copy()]
    iters = 0
    for n in range(n_steps):
        t = t0 + (n + 1) * dt
        base = Mh @ y / dt
        scale = 1.0 + np.linalg.norm(base)
        z = y.copy()
        for it in range(max_newton + 1):
            fz = force(z, t)
            res = lhs @ z + c - fz - base
            if np.linalg.norm(res) <= newton_tol * scale:
                break
            if it == max_newton:
                raise SolverError("reduced Newton did not converge", n + 1)
            jac = lhs.copy()
            for i in range(r):
                h = 1e-7 * (1.0 + abs(z[i]))
                zp = z.copy()
                zp[i] += h
                jac[:, i] -= (force(zp, t) - fz) / h
            z = z - np.linalg.solve(jac, res)
            iters += 1
        if not np.all(np.isfinite(z)):
            raise SolverError("non-finite reduced state", n + 1)
        y = z
        states.append(y.copy())
    return states, iters


def _rk4_loop(model, y, t0, dt, n_steps):
    Ah, c, force = model.reduced_linear, model.reduced_affine, model._force

    def rhs(v, t):
        g = force(v, t) - Ah @ v - c
        if not np.all(np.isfinite(g)):
            raise SolverError("non-finite reduced force", n + 1)
        return model.solve_mass(g)

    states = [y.copy()]
    for n in range(n_steps):
        t = t0 + n * dt
        k1 = rhs(y, t)
        k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = rhs(y + dt * k3, t + dt)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise SolverError("non-finite reduced state", n + 1)
        states.append(y)
    return states, 0


def solve_backward_euler(model, dt, n_steps, newton_tol=1e-10, max_newton=25, y_hat0=None, t0=0.0):
    """Implicit Euler with Newton on a forward-difference reduced Jacobian."""
    _check_step(dt, n_steps)
    y = model.initial_reduced_state() if y_hat0 is None else np.array(y_hat0, dtype=float)
    start = time.perf_counter()
    states, iters = _backward_euler_loop(model, y, t0, dt, n_steps, newton_tol, max_newton)
    wall = time.perf_counter() - start
    return TrajectoryRecord(t0 + dt * np.arange(n_steps + 1), states,
                            model.basis.lift(states[-1]), wall, n_steps, iters)


def solve_rk4(model, dt, n_steps, y_hat0=None, t0=0.0):
    """Classical four-stage Runge-Kutta with the reduced mass factored once."""
    _check_step(dt, n_steps)
    y = model.initial_reduced_state() if y_hat0 is None else np.array(y_hat0, dtype=float)
    start = time.perf_counter()
    states, _ = _rk4_loop(model, y, t0, dt, n_steps)
    wall = time.perf_counter() - start
    return TrajectoryRecord(t0 + dt * np.arange(n_steps + 1), states,
                            model.basis.lift(states[-1]), wall, n_steps, 0)


INTEGRATORS = {"backward_euler": solve_backward_euler, "rk4": solve_rk4}


@dataclass
class TimeWindowSchedule:
    """Window boundaries ``0 = b_0 < ... < b_W = T`` and one reduced model per window."""

    boundaries: np.ndarray
    per_window: list

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float)
        b = self.boundaries
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ValueError("window boundaries must start at 0 and increase strictly")
        if len(self.per_window) != b.size - 1:
            raise ValueError("need exactly one reduced model per window")

    @property
    def n_windows(self):
        return len(self.per_window)


def solve_windowed(schedule, integrator, dt, newton_tol=1e-10, y0=None):
    """Integrate window by window, transferring the state by lift-then-project."""
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    times, states, starts = [], [], []
    wall, iters, total = 0.0, 0, 0
    model0 = schedule.per_window[0]
    full = np.asarray(model0.fom.initial_state if y0 is None else y0, dtype=float)
    step0 = 0
    for w, model in enumerate(schedule.per_window):
        a, b = schedule.boundaries[w], schedule.boundaries[w + 1]
        n = int(round((b - a) / dt))
        if n < 1:
            raise ValueError(f"window {w} is shorter than one time step")
        y_hat = model.basis.restrict(full)
        t0 = step0 * dt
        if integrator == "rk4":
            rec = solve_rk4(model, dt, n, y_hat0=y_hat, t0=t0)
        else:
            rec = solve_backward_euler(model, dt, n, newton_tol, y_hat0=y_hat, t0=t0)
        skip = 0 if w == 0 else 1
        starts.append(len(states) - (0 if w == 0 else 1))
        times.extend(rec.times[skip:])
        states.extend(rec.reduced_states[skip:])
        wall += rec.wall_time
        iters += rec.newton_iters_total
        total += n
        step0 += n
        full = rec.lifted_final
    return TrajectoryRecord(np.asarray(times), states, full, wall, total, iters, tuple(starts))


def _field_norms(v, layout, weight, mass):
    out = []
    for _, off, length in layout:
        s = v[off:off + length]
        if weight == "mass":
            out.append(float(s @ (mass[off:off + length, off:off + length] @ s)))
        else:
            out.append(float(s @ s))
    return out


def relative_l2_error(rom_final, fom_final, weight="euclidean", field_layout=None, mass=None):
    """Relative error per field plus the product-space combination.

    Returns ``{"fields": {name: err}, "combined": err, "norm": weight}``.
    """
    rom_final = np.asarray(rom_final, dtype=float)
    fom_final = np.asarray(fom_final, dtype=float)
    if rom_final.shape != fom_final.shape:
        raise ValueError("ROM and FOM states differ in length")
    if weight not in ("euclidean", "mass"):
        raise ValueError(f"unknown weight {weight!r}")
    if weight == "mass" and mass is None:
        raise ValueError("mass weighting needs the mass matrix")
    layout = field_layout or (("state", 0, fom_final.size),)
    diff = _field_norms(rom_final - fom_final, layout, weight, mass)
    ref = _field_norms(fom_final, layout, weight, mass)
    if sum(ref) <= 0:
        raise ValueError("reference state has zero norm")
    fields = {}
    for (name, _, _), d, f in zip(layout, diff, ref):
        fields[name] = float(np.sqrt(d / f)) if f > 0 else float("nan")
    return {"fields": fields, "combined": float(np.sqrt(sum(diff) / sum(ref))), "norm": weight}
