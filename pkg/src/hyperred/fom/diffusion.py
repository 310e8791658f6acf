"""Nonlinear diffusion ``dp/dt = div(kappa(p) grad p)`` on the unit square.

Primal bilinear-quadrilateral discretization with zero-flux boundaries,
conductivity ``kappa(p) = 2 + p`` and no source. The initial pressure is
the nodal interpolant of the indicator of the centred square of
half-width ``mu``.
"""

from __future__ import annotations

import numpy as np

from .base import FomProblem, FullQuadratureRule

GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def kappa(p):
    return 2.0 + p


def dkappa(p):
    return np.ones_like(p)


def q1_reference(xi, eta):
    """Bilinear shape functions and reference gradients at one point.

    Local node order is counter-clockwise from the lower-left corner.
    """
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    N = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    dN = np.column_stack([0.25 * sx * (1 + sy * eta), 0.25 * sy * (1 + sx * xi)])
    return N, dN


class NonlinearDiffusion(FomProblem):
    name = "diffusion"
    solver = "backward_euler"

    def __init__(self, nx=16, ny=16, mu=0.3, dt=1e-3, n_steps=100):
        if not 0.0 < mu <= 0.5:
            raise ValueError(f"mu must lie in (0, 0.5], got {mu}")
        self.nx, self.ny = int(nx), int(ny)
        self.parameter = float(mu)
        self.dt, self.n_steps = float(dt), int(n_steps)
        hx, hy = 1.0 / nx, 1.0 / ny
        self.h = (hx, hy)

        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
        self.nodes = np.column_stack([ix.ravel() * hx, iy.ravel() * hy])
        n_nodes = self.nodes.shape[0]

        def node(i, j):
            return j * (nx + 1) + i

        conn = []
        for j in range(ny):
            for i in range(nx):
                conn.append([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)])
        self.connectivity = np.array(conn, dtype=int)
        n_el = self.connectivity.shape[0]

        # 2x2 Gauss on each element; uniform mesh so one reference table serves all
        phi, dphi = [], []
        for gy in GAUSS2:
            for gx in GAUSS2:
                N, dN = q1_reference(gx, gy)
                phi.append(N)
                dphi.append(dN / np.array([hx / 2, hy / 2]))
        phi, dphi = np.array(phi), np.array(dphi)  # (4, 4), (4, 4, 2)
        n_q = phi.shape[0]
        self.phi = np.tile(phi, (n_el, 1))
        self.dphi = np.tile(dphi, (n_el, 1, 1))
        weights = np.full(n_el * n_q, hx * hy / 4.0)
        point_el = np.repeat(np.arange(n_el), n_q)
        self.quadrature = FullQuadratureRule(weights, point_el)
        self.test_dofs = self.connectivity[point_el]
        self.read_dofs = self.test_dofs
        self.element_dofs = self.connectivity

        w = weights[:, None, None]
        M_loc = w * self.phi[:, :, None] * self.phi[:, None, :]
        L_loc = w * np.einsum("kad,kbd->kab", self.dphi, self.dphi)
        self.mass = self._assemble_matrix(M_loc, n_nodes)
        self.laplacian = self._assemble_matrix(L_loc, n_nodes)
        self.linear_op = np.zeros((n_nodes, n_nodes))

        dist = np.max(np.abs(self.nodes - 0.5), axis=1)
        # closed square so that mu = 0.5 covers the whole domain
        self.initial_state = (dist <= mu + 1e-14).astype(float)
        self.field_layout = (("p", 0, n_nodes),)
        self._finalize()

    def _assemble_matrix(self, local, n):
        rows = np.repeat(self.test_dofs[:, :, None], local.shape[2], axis=2)
        cols = np.repeat(self.test_dofs[:, None, :], local.shape[1], axis=1)
        flat = np.bincount((rows * n + cols).ravel(), local.ravel(), minlength=n * n)
        return flat.reshape(n, n)

    def integrand(self, state, t, points):
        pe = state[self.read_dofs[points]]                      # (S, 4)
        p = np.einsum("sa,sa->s", self.phi[points], pe)
        # shape gradients sum to zero, so shifting by one nodal value keeps
        # the gradient of a constant exactly zero
        grad = np.einsum("sad,sa->sd", self.dphi[points], pe - pe[:, :1])
        return -kappa(p)[:, None] * np.einsum("sd,sad->sa", grad, self.dphi[points])

    def force_jacobian(self, state, t):
        pe = state[self.read_dofs]
        phi, dphi = self.phi, self.dphi
        p = np.einsum("sa,sa->s", phi, pe)
        grad = np.einsum("sad,sa->sd", dphi, pe)
        gphi = np.einsum("sd,sad->sa", grad, dphi)
        stiff = np.einsum("sad,sbd->sab", dphi, dphi)
        w = self.quadrature.weights
        local = -w[:, None, None] * (dkappa(p)[:, None, None] * gphi[:, :, None] * phi[:, None, :]
                                     + kappa(p)[:, None, None] * stiff)
        return self._assemble_matrix(local, self.state_dim)


def make_nonlinear_diffusion(nx=16, ny=16, mu=0.3, dt=1e-3, n_steps=100):
    return NonlinearDiffusion(nx, ny, mu, dt, n_steps)
