"""Conjugate functionals, feasibility sets A1-A4 and the certificate."""

import numpy as np
import pytest
import scipy.linalg as sla

from klcert import (
    Loads,
    build_grid,
    build_material,
    build_t_tilde,
    check_A1_A2,
    check_A4,
    conjugate_F,
    conjugate_G,
    dual_value,
    duality_gap,
    extract_certificate,
    plate_model,
    shift_membrane,
    solve,
)
from klcert.dual import (
    DualOperator,
    auto_shift,
    project_membrane_feasible,
    project_transverse_feasible,
)


def _case(n=17, eps=1e-3):
    g = build_grid((0.0, 1.0, 0.0, 1.0), n, n)
    model = plate_model(g, build_material(1.0, 0.3, 0.1))
    loads = Loads(g, P=eps * np.sin(np.pi * g.X) * np.sin(np.pi * g.Y))
    return g, model, loads


def _sym_random(rng, g, amp):
    N = amp * rng.standard_normal((g.nx, g.ny, 2, 2))
    N[..., 0, 1] = N[..., 1, 0] = 0.5 * (N[..., 0, 1] + N[..., 1, 0])
    return N


# -- shift_membrane ------------------------------------------------------


def test_shift_zero_membrane():
    g = build_grid((0.0, 1.0, 0.0, 1.0), 9, 9)
    s = shift_membrane(g, np.zeros((9, 9, 2, 2)), K=1.0)
    eye = np.broadcast_to(np.eye(2), (9, 9, 2, 2))
    assert np.array_equal(s.M, eye)
    assert np.array_equal(s.M_inv, eye)
    assert s.lambda_min == 1.0
    assert s.in_A3


def test_shift_auto_K_rule():
    g = build_grid((0.0, 1.0, 0.0, 1.0), 9, 9)
    N = np.zeros((9, 9, 2, 2))
    N[..., 0, 0] = 2.0
    N[..., 1, 1] = -1.0
    s = shift_membrane(g, N)
    assert s.K == pytest.approx(2.1 + 1e-8, rel=1e-12)
    assert s.lambda_min == pytest.approx(0.1, rel=1e-6)


def test_shift_inverse_identity():
    rng = np.random.default_rng(20)
    g = build_grid((0.0, 1.0, 0.0, 1.0), 9, 9)
    N = _sym_random(rng, g, 1.0)
    s = shift_membrane(g, N)
    prod = np.einsum("xyab,xybc->xyac", s.M, s.M_inv)
    assert np.max(np.abs(prod - np.eye(2))) <= 1e-12


def test_shift_singular_K_rejected():
    g = build_grid((0.0, 1.0, 0.0, 1.0), 9, 9)
    N = np.zeros((9, 9, 2, 2))
    N[..., 0, 0] = 1.0
    with pytest.raises(ValueError, match="singular at node"):
        shift_membrane(g, N, K=1.0)


def test_shift_rejects_asymmetric():
    g = build_grid((0.0, 1.0, 0.0, 1.0), 9, 9)
    N = np.zeros((9, 9, 2, 2))
    N[..., 0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        shift_membrane(g, N, K=5.0)


# -- conjugate functionals -----------------------------------------------


def test_conjugate_F_zero():
    g, model, _ = _case(n=9)
    val, x = conjugate_F(model, 1.0, np.zeros((9, 9, 2)), np.zeros((9, 9, 2)))
    assert val == 0.0
    assert np.max(np.abs(x)) == 0.0


def test_conjugate_F_quadratic_scaling():
    rng = np.random.default_rng(21)
    g, model, _ = _case(n=9)
    z = rng.standard_normal((9, 9, 2))
    Q = rng.standard_normal((9, 9, 2))
    v1, _ = conjugate_F(model, 1.0, z, Q)
    v2, _ = conjugate_F(model, 1.0, 2.0 * z, 2.0 * Q)
    assert v2 == pytest.approx(4.0 * v1, rel=1e-10)
    assert v1 >= 0.0


def _F_value(model, K, q):
    # convex part: bending energy plus (K/2) <phi, phi>_w
    _, ka, _, ph = model.strain_voigt(q)
    w = model.weights
    G2 = 0.5 * float(np.sum(w * np.einsum("na,na->n", model.moment_voigt(ka), ka)))
    return G2 + 0.5 * K * float(np.sum(w * (ph[:, 0] ** 2 + ph[:, 1] ** 2)))


def _pairing(model, zq, q):
    w2 = np.concatenate([model.weights, model.weights])
    return float((w2 * zq) @ (model.Phi @ q))


def test_conjugate_F_fenchel_young():
    rng = np.random.default_rng(22)
    g, model, _ = _case(n=9)
    K = 0.7
    z = rng.standard_normal((9, 9, 2))
    Q = rng.standard_normal((9, 9, 2))
    fstar, xstar = conjugate_F(model, K, z, Q)
    zq = np.concatenate([g.flat(z[..., 0]), g.flat(z[..., 1])]) + \
        np.concatenate([g.flat(Q[..., 0]), g.flat(Q[..., 1])])
    # equality at the returned argmax
    assert fstar == pytest.approx(_pairing(model, zq, xstar) - _F_value(model, K, xstar),
                                  rel=1e-8)
    # inequality at random states
    for _ in range(5):
        q = rng.standard_normal(3 * model.n)
        q[~model.free_mask] = 0.0
        assert fstar >= _pairing(model, zq, q) - _F_value(model, K, q) - 1e-10


def test_conjugate_G_zero():
    g, model, _ = _case(n=9)
    assert conjugate_G(model, 1.0, np.zeros((9, 9, 2)), np.zeros((9, 9, 2, 2))) == 0.0


def test_conjugate_G_identity_shift():
    rng = np.random.default_rng(23)
    g, model, _ = _case(n=9)
    z = rng.standard_normal((9, 9, 2))
    val = conjugate_G(model, 1.0, z, np.zeros((9, 9, 2, 2)))
    w = g.quad_weights
    direct = 0.5 * float(np.sum(w * (z[..., 0] ** 2 + z[..., 1] ** 2)))
    assert val == pytest.approx(direct, rel=1e-13)


def test_conjugate_G_brute_force_oracle():
    rng = np.random.default_rng(24)
    g, model, _ = _case(n=9)
    N = _sym_random(rng, g, 0.3)
    K = auto_shift(N) + 1.0
    z = rng.standard_normal((9, 9, 2))
    val = conjugate_G(model, K, z, N)
    # node-wise loop re-implementation from the definition
    Hbar = np.linalg.inv(model.Hv[0])
    total = 0.0
    for i in range(g.nx):
        for j in range(g.ny):
            M = K * np.eye(2) - N[i, j]
            zv = z[i, j]
            nv = np.array([N[i, j, 0, 0], N[i, j, 1, 1], N[i, j, 0, 1]])
            wq = g.quad_weights[i, j]
            total += 0.5 * wq * (zv @ np.linalg.solve(M, zv))
            total -= 0.5 * wq * (nv @ Hbar @ nv)
    assert val == pytest.approx(total, abs=1e-12 * (1.0 + abs(total)))


def test_conjugate_G_refuses_outside_A3():
    g, model, _ = _case(n=9)
    N = np.zeros((9, 9, 2, 2))
    N[..., 0, 0] = 2.0
    with pytest.raises(ValueError, match="A3"):
        conjugate_G(model, 1.0, np.zeros((9, 9, 2)), N)


# -- A4 and dual value ---------------------------------------------------


def test_A4_positive_for_zero_membrane():
    g, model, _ = _case(n=9)
    lam = check_A4(model, np.zeros((9, 9, 2, 2)), 1.0)
    assert lam > 0.0


def test_A4_dense_oracle_generalized_eig():
    # independent route: smallest eigenvalue of the pencil
    # (W M^{-1} - W Phi K_F^{-1} Phi' W, W) on the z space
    rng = np.random.default_rng(25)
    g, model, _ = _case(n=9)
    N = _sym_random(rng, g, 0.2)
    K = auto_shift(N) + 0.5
    lam = check_A4(model, N, K, method="dense")
    n = model.n
    w2 = np.concatenate([model.weights, model.weights])
    W = np.diag(w2)
    s = shift_membrane(g, N, K)
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = np.diag(g.flat(s.M_inv[..., 0, 0]))
    C[:n, n:] = np.diag(g.flat(s.M_inv[..., 0, 1]))
    C[n:, :n] = np.diag(g.flat(s.M_inv[..., 1, 0]))
    C[n:, n:] = np.diag(g.flat(s.M_inv[..., 1, 1]))
    dofs = model.conj_dofs
    KF = (model.stiffness_bending() + K * model.gram_phi()).toarray()[np.ix_(dofs, dofs)]
    P = model.Phi.toarray()[:, dofs]
    B = W @ P @ np.linalg.solve(KF, P.T) @ W
    A = W @ C - B
    lam_oracle = float(np.min(sla.eigh(0.5 * (A + A.T), W, eigvals_only=True)))
    assert lam == pytest.approx(lam_oracle, rel=1e-8)


def test_A4_negative_for_strong_compression():
    g, model, _ = _case(n=17)
    N = np.zeros((17, 17, 2, 2))
    N[..., 0, 0] = N[..., 1, 1] = -0.1
    lam = check_A4(model, N, auto_shift(N))
    assert lam < 0.0


def test_A4_dense_iterative_agree():
    g, model, _ = _case(n=17)
    N = np.zeros((17, 17, 2, 2))
    N[..., 0, 0] = -1e-3
    N[..., 1, 1] = -2e-3
    K = auto_shift(N)
    ld = check_A4(model, N, K, method="dense")
    li = check_A4(model, N, K, method="iterative")
    assert li == pytest.approx(ld, rel=1e-6)


def test_A4_requires_A3():
    g, model, _ = _case(n=9)
    N = np.zeros((9, 9, 2, 2))
    N[..., 0, 0] = 5.0
    with pytest.raises(ValueError, match="A3"):
        check_A4(model, N, 1.0)


def test_dual_value_zero_point():
    g, model, _ = _case(n=9)
    val, z = dual_value(model, 1.0, np.zeros((9, 9, 2)), np.zeros((9, 9, 2, 2)))
    assert val == pytest.approx(0.0, abs=1e-14)
    assert np.max(np.abs(z)) < 1e-14


def test_dual_value_refuses_failed_A4():
    g, model, _ = _case(n=17)
    N = np.zeros((17, 17, 2, 2))
    N[..., 0, 0] = N[..., 1, 1] = -0.1
    with pytest.raises(ValueError, match="A4"):
        dual_value(model, auto_shift(N), np.zeros((17, 17, 2)), N)


def test_dual_z_minimizer_is_stationary():
    rng = np.random.default_rng(26)
    g, model, _ = _case(n=9)
    N = _sym_random(rng, g, 1e-3)
    K = auto_shift(N) + 0.5
    Q = rng.standard_normal((9, 9, 2))
    val, zmin = dual_value(model, K, Q, N)
    # random perturbations of z never decrease the dual functional
    from klcert.dual import _ConjugateSolver, _stack2
    cs = _ConjugateSolver(model, K)
    Qs = _stack2(g, Q)
    for _ in range(5):
        dz = 1e-4 * rng.standard_normal((9, 9, 2))
        zs = _stack2(g, zmin + dz)
        fs, _ = cs.fstar(zs, Qs)
        vp = -fs + conjugate_G(model, K, zmin + dz, N)
        assert vp >= val - 1e-12


# -- A1/A2 residuals ------------------------------------------------------


def test_A1_residual_of_t_tilde():
    g, model, _ = _case(n=33)
    P1 = np.sin(np.pi * g.X) * np.sin(np.pi * g.Y)
    loads = Loads(g, P1=P1)
    T = build_t_tilde(g, P1, np.zeros((33, 33)))
    r1, r2 = check_A1_A2(model, T.values, np.zeros((33, 33, 2)), loads)
    assert r1 <= 3.0 * g.hx ** 2  # frozen: measured 2.4e-3 at h = 1/32
    assert r2 == 0.0


def test_A2_zero_fields():
    g, model, _ = _case(n=9)
    r1, r2 = check_A1_A2(model, np.zeros((9, 9, 2, 2)), np.zeros((9, 9, 2)), Loads(g))
    assert (r1, r2) == (0.0, 0.0)


def test_A1_flags_infeasible_membrane():
    rng = np.random.default_rng(27)
    g, model, _ = _case(n=17)
    N = _sym_random(rng, g, 1.0)
    r1, _ = check_A1_A2(model, N, np.zeros((17, 17, 2)), Loads(g))
    assert r1 > 1.0


# -- certificate extraction and gap ---------------------------------------


def test_certificate_zero_loads():
    g, model, _ = _case(n=9)
    loads = Loads(g)
    cert = extract_certificate(model, np.zeros(3 * model.n), loads)
    assert np.max(np.abs(cert.N)) == 0.0
    assert np.max(np.abs(cert.Q)) < 1e-14
    assert np.max(np.abs(cert.zstar)) == 0.0
    assert duality_gap(model, np.zeros(3 * model.n), cert, loads) == \
        pytest.approx(0.0, abs=1e-14)


def test_certificate_zstar_definition():
    g, model, loads = _case(n=17, eps=1e-3)
    res = solve(model, loads)
    cert = extract_certificate(model, res.u_star, loads)
    _, _, _, ph = model.strain_voigt(res.u_star)
    Nv = model.membrane_force_voigt(model.strain_voigt(res.u_star)[0])
    z0 = np.empty((g.nx, g.ny, 2))
    z0[..., 0] = g.unflat(Nv[:, 0] * ph[:, 0] + Nv[:, 2] * ph[:, 1] + cert.K * ph[:, 0])
    z0[..., 1] = g.unflat(Nv[:, 2] * ph[:, 0] + Nv[:, 1] * ph[:, 1] + cert.K * ph[:, 1])
    assert np.array_equal(z0, cert.zstar)


def test_certificate_constitutive_identity():
    g, model, loads = _case(n=17, eps=1e-3)
    res = solve(model, loads)
    cert = extract_certificate(model, res.u_star, loads)
    ga = model.strain_voigt(res.u_star)[0]
    Nv = model.membrane_force_voigt(ga)
    assert np.array_equal(cert.N[..., 0, 0], g.unflat(Nv[:, 0]))
    assert np.array_equal(cert.N[..., 1, 1], g.unflat(Nv[:, 1]))


def test_certificate_linear_regime_end_to_end():
    g, model, loads = _case(n=17, eps=1e-4)
    res = solve(model, loads)
    assert res.converged
    cert = extract_certificate(model, res.u_star, loads)
    scale = loads.scale()
    assert cert.residual_A1 <= 1e-6 * scale
    assert cert.residual_A2 <= 1e-6 * scale
    assert cert.in_A3
    assert cert.lambda_min_A4 > 0.0
    assert cert.verifies(scale)
    gap = duality_gap(model, res.u_star, cert, loads)
    J = model.energy(res.u_star, loads).J
    assert abs(gap) <= 1e-6 * (1.0 + abs(J))


def test_gap_detects_suboptimal_state():
    rng = np.random.default_rng(28)
    g, model, loads = _case(n=17, eps=1e-4)
    res = solve(model, loads)
    cert = extract_certificate(model, res.u_star, loads)
    pert = res.u_star.copy()
    noise = 1e-2 * rng.standard_normal(3 * model.n)
    noise[~model.free_mask] = 0.0
    pert += noise
    gap = duality_gap(model, pert, cert, loads)
    J = model.energy(res.u_star, loads).J
    assert gap > 10.0 * 1e-6 * (1.0 + abs(J))


def test_weak_duality_sampler():
    rng = np.random.default_rng(29)
    g, model, loads = _case(n=17, eps=1e-4)
    scale = loads.scale()
    duals = []
    for _ in range(5):
        N = project_membrane_feasible(model, _sym_random(rng, g, 1e-4), loads)
        Q = project_transverse_feasible(model, 1e-4 * rng.standard_normal((17, 17, 2)), loads)
        val, _ = dual_value(model, auto_shift(N), Q, N)
        duals.append(val)
    for _ in range(5):
        q = 1e-3 * rng.standard_normal(3 * model.n)
        q[~model.free_mask] = 0.0
        J = model.energy(q, loads).J
        assert all(J >= v - 1e-8 * scale for v in duals)
