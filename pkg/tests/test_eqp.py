import json

import numpy as np
import pytest

from hyperred.eqp import (
    SparseEvaluator,
    SparseQuadratureRule,
    assemble_constraints,
    build_rule,
    condition_constraints,
    evaluate_sparse,
    full_rule,
    sample_mesh_from_rule,
    solve_weights,
)
from hyperred.fom import FullQuadratureRule, make_nonlinear_diffusion, solve_fom
from hyperred.numerics import nnls_lawson_hanson
from hyperred.pod import assemble_snapshots, augment_basis, pod_basis


@pytest.fixture(scope="module")
def small():
    fom = make_nonlinear_diffusion(4, 4, mu=0.25, n_steps=20)
    tr = solve_fom(fom)
    X = assemble_snapshots(list(tr.states.T), "zero", tr.times)
    psi = augment_basis(pod_basis(X, target_E_r=4), np.ones(fom.state_dim))
    return fom, X, psi


def test_unit_basis_row_is_raw_integrand(small):
    fom, X, _ = small
    node = 7
    e = np.zeros((fom.state_dim, 1))
    e[node, 0] = 1.0
    G = assemble_constraints(fom, e, X, [3])
    state = X.states()[:, 3]
    raw = np.zeros(fom.n_points)
    eta = fom.integrand(state, X.time_stamps[3], np.arange(fom.n_points))
    for k in range(fom.n_points):
        hits = fom.test_dofs[k] == node
        raw[k] = eta[k, hits].sum()
    np.testing.assert_allclose(G.data[0], raw, atol=1e-14)
    assert G.row_meta == [(3, 0)]


def test_zero_state_gives_zero_constraints(small):
    fom, _, psi = small
    Z = assemble_snapshots([np.zeros(fom.state_dim)])
    G = assemble_constraints(fom, psi, Z)
    assert np.all(G.data == 0) and np.all(G.rhs == 0)


def test_rhs_and_row_ordering(small):
    fom, X, psi = small
    sel = [0, 5, 9]
    G = assemble_constraints(fom, psi, X, sel)
    r = psi.retained
    assert G.n_constraints == len(sel) * r
    assert G.row_meta[r + 2] == (5, 2)
    rhs = np.array([sum(G.data[i, k] * fom.quadrature.weights[k] for k in range(fom.n_points))
                    for i in range(G.n_constraints)])
    np.testing.assert_allclose(G.rhs, rhs, atol=1e-12)
    # rows reproduce the projected force of each snapshot
    np.testing.assert_allclose(G.rhs[r:2 * r], psi.basis.T @ fom.force(X.states()[:, 5]), atol=1e-12)


def test_rejects_mismatched_basis(small):
    fom, X, _ = small
    with pytest.raises(ValueError):
        assemble_constraints(fom, np.ones((3, 1)), X)


def test_condition_single_row():
    c = condition_constraints(np.array([[2.0, 4.0]]))
    np.testing.assert_allclose(np.abs(c.matrix), [[2 / np.sqrt(20), 4 / np.sqrt(20)]])
    np.testing.assert_allclose(c.row_scale, [4.0])
    np.testing.assert_allclose(np.abs(c.lower), [[np.sqrt(0.25 + 1)]])


def test_condition_orthonormal_rows_and_reports(small):
    fom, X, psi = small
    G = assemble_constraints(fom, psi, X)
    c = condition_constraints(G)
    np.testing.assert_allclose(c.matrix @ c.matrix.T, np.eye(c.matrix.shape[0]), atol=1e-10)
    rep = c.report
    assert rep["rows_in"] == G.n_constraints
    assert rep["rows_out"] + rep["zero_rows_dropped"] + rep["dependent_rows_dropped"] == rep["rows_in"]
    # the constant test direction has an identically zero integrand
    assert rep["zero_rows_dropped"] >= X.n_snapshots
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((9, 4)))[0].T
    c = condition_constraints(Q)
    np.testing.assert_allclose(np.abs(c.matrix @ Q.T), np.eye(4) * np.abs(c.matrix @ Q.T).max(axis=1),
                               atol=1e-10)


def test_conditioning_preserves_residual_metric():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n_c = int(rng.integers(2, 9))
        K = int(rng.integers(n_c + 1, 21))
        G = rng.standard_normal((n_c, K)) * rng.random(n_c)[:, None] * 10
        rho = rng.random(K) + 0.1
        rhs = G @ rho
        raw = nnls_lawson_hanson(G, rhs, tol=1e-12).x
        c = condition_constraints(G)
        c_rhs = np.linalg.solve(c.lower, (rhs / c.row_scale)[c.kept_rows])
        cond = nnls_lawson_hanson(c.matrix, c_rhs, tol=1e-12).x
        r_raw = np.linalg.norm(G @ raw - rhs)
        r_cond = np.linalg.norm(G @ cond - rhs)
        assert abs(r_raw - r_cond) <= 1e-6 * np.linalg.norm(rhs)


def test_solve_weights_identity_and_full():
    b = np.array([0.5, -1.0, 2.0])
    rule = solve_weights(np.eye(3), b, tol=1e-12)
    np.testing.assert_allclose(rule.weights, [0.5, 0.0, 2.0])
    assert rule.k_star == 2 and rule.support.tolist() == [0, 2]
    with pytest.raises(ValueError):
        solve_weights(np.eye(3), b, tol=0)


def test_rule_json_and_validation():
    rule = SparseQuadratureRule(np.array([0.0, 0.2, 0.0, 0.3]), 1e-4, 5e-5, "residual")
    d = json.loads(rule.to_json())
    assert d == {"K": 4, "support": [1, 3], "weights": [0.2, 0.3], "tol": 1e-4, "residual": 5e-5}
    back = SparseQuadratureRule.from_json(rule.to_json())
    np.testing.assert_array_equal(back.weights, rule.weights)
    with pytest.raises(ValueError):
        SparseQuadratureRule(np.array([1.0, -0.1]))


def test_full_rule_equals_full_assembly(small):
    fom, _, psi = small
    rule = full_rule(fom.quadrature)
    rng = np.random.default_rng(2)
    ev = SparseEvaluator(fom, psi, rule)
    for _ in range(5):
        state = rng.random(fom.state_dim)
        ref = psi.basis.T @ fom.force(state)
        np.testing.assert_allclose(evaluate_sparse(fom, psi, rule, state), ref, atol=1e-12)
        np.testing.assert_allclose(ev.from_state(state, 0.0), ref, atol=1e-12)
        y = rng.standard_normal(psi.retained)
        np.testing.assert_allclose(ev(y, 0.0), psi.basis.T @ fom.force(psi.lift(y)), atol=1e-12)


def test_zero_rule_gives_zero(small):
    fom, _, psi = small
    rule = SparseQuadratureRule(np.zeros(fom.n_points))
    assert np.all(evaluate_sparse(fom, psi, rule, np.random.default_rng(0).random(fom.state_dim)) == 0)


def test_sparse_rule_on_training_data(small):
    fom, X, psi = small
    rule, G, cond = build_rule(fom, psi, X, tol=1e-4)
    assert np.all(rule.weights >= 0) and rule.k_star == np.count_nonzero(rule.weights)
    if rule.status in ("residual", "dual"):
        assert np.linalg.norm(cond.matrix @ rule.weights - cond.rhs) <= 1e-4 * np.linalg.norm(cond.rhs) + 1e-15
    assert rule.k_star < fom.n_points
    assert len(sample_mesh_from_rule(rule, fom.quadrature)) <= fom.n_points // 4
    capped, _, _ = build_rule(fom, psi, X, tol=1e-12, max_points=5)
    assert capped.k_star <= 5


def test_sample_mesh_from_rule():
    q = FullQuadratureRule(np.ones(16), np.repeat(np.arange(4), 4))
    assert sample_mesh_from_rule(SparseQuadratureRule(np.zeros(16)), q).size == 0
    w = np.zeros(16)
    w[5] = 1
    assert sample_mesh_from_rule(SparseQuadratureRule(w), q).tolist() == [1]
    w[[0, 1, 9, 14]] = 1
    assert sample_mesh_from_rule(SparseQuadratureRule(w), q).tolist() == [0, 1, 2, 3]
    w = np.zeros(16)
    w[[0, 6, 13]] = 1
    assert len(sample_mesh_from_rule(SparseQuadratureRule(w), q)) == 3
