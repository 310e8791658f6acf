import numpy as np
import pytest

from hyperred.fom import (
    SolverError,
    eval_force_entries,
    eval_force_full,
    eval_integrand_contracted,
    make_hyperelastic_bar,
    make_nonlinear_diffusion,
    make_problem,
    piola_stress,
    sample_mesh_from_indices,
    solve_fom,
)

from oracles import bar_force_dense, diffusion_force_dense, diffusion_laplacian_dense


def test_diffusion_layout(diffusion):
    assert diffusion.state_dim == 289
    assert diffusion.n_points == 4 * 16 * 16
    np.linalg.cholesky(diffusion.mass)


def test_diffusion_constant_state_has_zero_force(diffusion):
    assert np.abs(eval_force_full(diffusion, np.full(289, 0.7))).max() <= 1e-12


def test_diffusion_mu_half_covers_domain():
    assert np.all(make_nonlinear_diffusion(4, 4, mu=0.5).initial_state == 1.0)


def test_diffusion_rejects_bad_mu():
    for mu in (0.0, -0.1, 0.6):
        with pytest.raises(ValueError):
            make_nonlinear_diffusion(mu=mu)


def test_diffusion_linear_limit_matches_dense_laplacian():
    fom = make_nonlinear_diffusion(2, 2)
    L = diffusion_laplacian_dense(2, 2)
    np.testing.assert_allclose(fom.laplacian, L, atol=1e-12)
    p = np.random.default_rng(0).standard_normal(9)
    f2 = diffusion_force_dense(2, 2, p, kappa=lambda u: 2.0)
    np.testing.assert_allclose(f2, -2 * L @ p, atol=1e-12)


def test_diffusion_force_matches_dense_assembly():
    fom = make_nonlinear_diffusion(5, 4)
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = rng.standard_normal(fom.state_dim)
        np.testing.assert_allclose(eval_force_full(fom, p), diffusion_force_dense(5, 4, p), atol=1e-12)


def test_diffusion_jacobian_matches_finite_differences():
    fom = make_nonlinear_diffusion(3, 3)
    p = np.random.default_rng(2).random(fom.state_dim)
    J = fom.force_jacobian(p, 0.0)
    h = 1e-6
    fd = np.column_stack([(fom.force(p + h * e) - fom.force(p - h * e)) / (2 * h)
                          for e in np.eye(fom.state_dim)])
    np.testing.assert_allclose(J, fd, atol=1e-7)


def test_diffusion_mass_direction_is_force_free(diffusion):
    rng = np.random.default_rng(3)
    for _ in range(5):
        f = eval_force_full(diffusion, rng.standard_normal(289))
        assert abs(f.sum()) <= 1e-12 * max(1.0, np.abs(f).max())


def test_diffusion_trajectory(diffusion_traj, diffusion):
    assert diffusion_traj.states.shape == (289, 101)
    mass = diffusion.mass.sum(axis=0) @ diffusion_traj.states
    assert np.abs(mass - mass[0]).max() <= 1e-8 * abs(mass[0])
    np.testing.assert_allclose(diffusion_traj.forces[:, 5],
                               diffusion.force(diffusion_traj.states[:, 5]), atol=1e-14)


def test_bar_layout(bar):
    assert bar.state_dim == 2 * 129
    assert bar.n_points == 3 * 64
    np.linalg.cholesky(bar.mass)


def test_bar_stress_free_reference():
    fom = make_hyperelastic_bar(n_elem=8, mu=0.0)
    assert np.abs(eval_force_full(fom, fom.initial_state)).max() <= 1e-12
    assert np.abs(fom.rhs(fom.initial_state, 0.0)).max() <= 1e-12


def test_bar_single_element_nodal_force():
    fom = make_hyperelastic_bar(n_elem=1)
    x = 2.0 * fom.X
    state = np.concatenate([np.zeros(3), x])
    f = eval_force_full(fom, state)[:3]
    P2 = 0.25 * (2 - 0.5) + 5.0 * 2 * (2 - 1)
    assert piola_stress(2.0) == pytest.approx(P2)
    # constant stress: interior node gets no net force, the free end gets -P
    np.testing.assert_allclose(f, [0.0, 0.0, -P2], atol=1e-12)


def test_bar_force_matches_dense_assembly():
    fom = make_hyperelastic_bar(n_elem=6)
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = fom.X * (1 + 0.05 * rng.standard_normal()) + 0.01 * rng.standard_normal(fom.X.size)
        state = np.concatenate([rng.standard_normal(fom.X.size), x])
        f = eval_force_full(fom, state)
        np.testing.assert_allclose(f[:fom.n_nodes], bar_force_dense(6, x), atol=1e-12)
        assert np.all(f[fom.n_nodes:] == 0)


def test_bar_inversion_raises():
    fom = make_hyperelastic_bar(n_elem=4)
    state = np.concatenate([np.zeros(9), -fom.X])
    with pytest.raises(FloatingPointError):
        fom.force(state)


def test_bar_clamped_velocity_and_constant_zero_trajectory(bar_traj):
    assert np.all(bar_traj.states[0] == 0.0)
    fom = make_hyperelastic_bar(mu=0.0, n_steps=50)
    tr = solve_fom(fom)
    assert np.abs(tr.states - tr.states[:, :1]).max() <= 1e-12


def test_entries_match_full(diffusion, bar):
    rng = np.random.default_rng(5)
    for fom in (diffusion, bar):
        state = fom.initial_state + 0.01 * rng.standard_normal(fom.state_dim)
        full = fom.force(state)
        idx = rng.choice(fom.state_dim, 15, replace=False)
        np.testing.assert_allclose(eval_force_entries(fom, state, 0.0, idx), full[idx], atol=1e-13)
        np.testing.assert_allclose(eval_force_entries(fom, state, 0.0, np.arange(fom.state_dim)), full,
                                   atol=1e-13)


def test_entries_interior_node_constant_state(diffusion):
    assert eval_force_entries(diffusion, np.ones(289), 0.0, [8 * 17 + 8])[0] == 0.0


def test_contracted_integrand_sums_to_projected_force(diffusion):
    rng = np.random.default_rng(6)
    Psi = np.linalg.qr(rng.standard_normal((289, 3)))[0]
    p = rng.random(289)
    total = sum(diffusion.quadrature.weights[k] * eval_integrand_contracted(diffusion, p, 0.0, k, Psi)
                for k in range(diffusion.n_points))
    np.testing.assert_allclose(total, Psi.T @ diffusion.force(p), atol=1e-12)
    e = np.zeros((289, 1))
    e[20] = 1
    k, row = np.argwhere(diffusion.test_dofs == 20)[0]
    raw = diffusion.integrand(p, 0.0, np.array([k]))[0, row]
    assert eval_integrand_contracted(diffusion, p, 0.0, k, e)[0] == pytest.approx(raw)
    assert np.all(eval_integrand_contracted(diffusion, np.ones(289), 0.0, k, Psi) == 0)
    with pytest.raises(ValueError):
        eval_integrand_contracted(diffusion, p, 0.0, diffusion.n_points, Psi)


def test_sample_mesh_connectivity():
    fom = make_nonlinear_diffusion(2, 2)
    assert sample_mesh_from_indices(fom, []).size == 0
    assert sample_mesh_from_indices(fom, [0]).tolist() == [0]
    assert sample_mesh_from_indices(fom, [4]).tolist() == [0, 1, 2, 3]


def test_rejects_bad_state(diffusion):
    with pytest.raises(ValueError):
        diffusion.force(np.ones(5))
    bad = np.ones(289)
    bad[3] = np.inf
    with pytest.raises(ValueError):
        diffusion.force(bad)


def test_make_problem_config():
    fom = make_problem({"problem": "diffusion", "nx": 4, "mu": 0.2, "t_final": 0.01})
    assert fom.state_dim == 25 and fom.n_steps == 10
    fom = make_problem({"problem": "bar", "n_elem": 4, "t_final": 0.1})
    assert fom.state_dim == 18 and fom.n_steps == 10
    with pytest.raises(ValueError):
        make_problem({"problem": "heat"})


def test_solver_guards(diffusion):
    with pytest.raises(ValueError):
        solve_fom(diffusion, n_steps=0)
    with pytest.raises(SolverError):
        solve_fom(diffusion, n_steps=2, max_newton=0, newton_tol=1e-30)
