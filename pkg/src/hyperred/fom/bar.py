"""Visco-hyperelastic neo-Hookean bar on ``[0, 8]``, the 1D analog of the
2D elasticity benchmark.

State ``y = (v, x)`` holds nodal velocities then nodal positions on
quadratic elements. The system is

    rho M1 dv/dt + eta K1 v = f_P(x),      M1 dx/dt - M1 v = 0

with ``f_P`` the internal force of the 1D first Piola stress
``P(J) = nu (J - 1/J) + (K / g^2) J (J - g)`` and ``J = dx/dX``.
The velocity at ``X = 0`` is clamped to zero.
"""

from __future__ import annotations

import numpy as np

from .base import FomProblem, FullQuadratureRule

GAUSS3_PTS = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS3_WTS = np.array([5.0, 8.0, 5.0]) / 9.0
LENGTH = 8.0


def p2_reference(xi):
    """Quadratic shape functions on [-1, 1] with nodes (-1, 0, 1)."""
    N = np.array([0.5 * xi * (xi - 1), 1 - xi * xi, 0.5 * xi * (xi + 1)])
    dN = np.array([xi - 0.5, -2 * xi, xi + 0.5])
    return N, dN


def piola_stress(J, nu=0.25, bulk=5.0, g=1.0):
    return nu * (J - 1.0 / J) + (bulk / g**2) * J * (J - g)


class HyperelasticBar(FomProblem):
    name = "bar"
    solver = "rk4"

    def __init__(self, n_elem=64, mu=1.0, dt=0.01, n_steps=500,
                 rho=1.0, nu=0.25, bulk=5.0, g=1.0, eta=0.01):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.n_elem = int(n_elem)
        self.parameter = float(mu)
        self.dt, self.n_steps = float(dt), int(n_steps)
        self.rho, self.nu, self.bulk, self.g, self.eta = rho, nu, bulk, g, eta
        h = LENGTH / n_elem
        n_nodes = 2 * n_elem + 1
        self.n_nodes = n_nodes
        self.X = np.linspace(0.0, LENGTH, n_nodes)
        conn = np.array([[2 * e, 2 * e + 1, 2 * e + 2] for e in range(n_elem)])
        self.connectivity = conn

        phi, dphi = zip(*(p2_reference(q) for q in GAUSS3_PTS))
        phi = np.array(phi)
        dphi = np.array(dphi) * (2.0 / h)
        nq = len(GAUSS3_PTS)
        self.phi = np.tile(phi, (n_elem, 1))
        self.dphi = np.tile(dphi, (n_elem, 1))
        weights = np.tile(GAUSS3_WTS * h / 2.0, n_elem)
        point_el = np.repeat(np.arange(n_elem), nq)
        self.quadrature = FullQuadratureRule(weights, point_el)

        node_of_point = conn[point_el]
        self.test_dofs = node_of_point                 # velocity rows
        self.read_dofs = node_of_point + n_nodes       # position entries
        self.element_dofs = np.hstack([conn, conn + n_nodes])
        # the clamped velocity row receives no force
        self.test_mask = (node_of_point != 0).astype(float)

        w = weights[:, None, None]
        M1 = self._assemble(w * self.phi[:, :, None] * self.phi[:, None, :], node_of_point, n_nodes)
        K1 = self._assemble(w * self.dphi[:, :, None] * self.dphi[:, None, :], node_of_point, n_nodes)
        self.M1, self.K1 = M1, K1

        Mv = rho * M1.copy()
        Av = eta * K1.copy()
        Mv[0, :] = 0.0
        Mv[:, 0] = 0.0
        Mv[0, 0] = 1.0
        Av[0, :] = 0.0
        N = 2 * n_nodes
        self.mass = np.zeros((N, N))
        self.mass[:n_nodes, :n_nodes] = Mv
        self.mass[n_nodes:, n_nodes:] = M1
        self.linear_op = np.zeros((N, N))
        self.linear_op[:n_nodes, :n_nodes] = Av
        self.linear_op[n_nodes:, :n_nodes] = -M1

        v0 = -(mu / 80.0) * np.sin(mu * self.X)
        v0[0] = 0.0
        self.initial_state = np.concatenate([v0, self.X.copy()])
        self.field_layout = (("v", 0, n_nodes), ("x", n_nodes, n_nodes))
        self._finalize()

    @staticmethod
    def _assemble(local, dofs, n):
        rows = np.repeat(dofs[:, :, None], local.shape[2], axis=2)
        cols = np.repeat(dofs[:, None, :], local.shape[1], axis=1)
        return np.bincount((rows * n + cols).ravel(), local.ravel(), minlength=n * n).reshape(n, n)

    def stretch(self, state, points):
        return np.einsum("sa,sa->s", self.dphi[points], state[self.read_dofs[points]])

    def integrand(self, state, t, points):
        J = self.stretch(state, points)
        if np.any(J <= 0):
            raise FloatingPointError("element inverted (J <= 0)")
        P = piola_stress(J, self.nu, self.bulk, self.g)
        return -P[:, None] * self.dphi[points] * self.test_mask[points]


def make_hyperelastic_bar(n_elem=64, mu=1.0, dt=0.01, n_steps=500, **material):
    return HyperelasticBar(n_elem, mu, dt, n_steps, **material)
