"""Energy minimization and the coercivity probe."""

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from klcert import (
    Loads,
    build_grid,
    build_material,
    build_t0_plate,
    coercivity_probe,
    linear_solution,
    plate_model,
    solve,
)


def _case(n=17, eps=1e-3):
    g = build_grid((0.0, 1.0, 0.0, 1.0), n, n)
    model = plate_model(g, build_material(1.0, 0.3, 0.1))
    loads = Loads(g, P=eps * np.sin(np.pi * g.X) * np.sin(np.pi * g.Y))
    return g, model, loads


def test_zero_loads_converge_immediately():
    g, model, _ = _case()
    res = solve(model, Loads(g))
    assert res.converged
    assert res.iterations == 0
    assert res.J_star == 0.0
    assert np.max(np.abs(res.u_star)) == 0.0


def test_linear_regime_matches_sparse_linear_solve():
    g, model, loads = _case(n=17, eps=1e-4)
    res = solve(model, loads)
    assert res.converged
    w_nl = res.u_star[2 * model.n:]
    w_lin = linear_solution(model, loads)[2 * model.n:]
    rel = np.linalg.norm(w_nl - w_lin) / np.linalg.norm(w_lin)
    assert rel <= 1e-3


def test_linear_solution_residual():
    g, model, loads = _case(n=17, eps=1e-2)
    q = linear_solution(model, loads)
    K = (model.stiffness_membrane() + model.stiffness_bending()).tocsr()
    free = model.free_mask
    r = (K @ q - model.load_vector(loads))[free]
    assert np.max(np.abs(r)) < 1e-12 * loads.scale()


def test_nonlinear_no_worse_than_linear():
    g, model, loads = _case(n=17, eps=1e-1)
    res = solve(model, loads)
    J_lin = model.energy(linear_solution(model, loads), loads).J
    assert res.J_star <= J_lin + 1e-14


def test_monotone_descent_history():
    g, model, loads = _case(n=17, eps=1e-2)
    res = solve(model, loads)
    J_hist = [h[0] for h in res.history]
    assert all(b <= a + 1e-15 for a, b in zip(J_hist, J_hist[1:]))


def test_converged_implies_gtol():
    g, model, loads = _case(n=17, eps=1e-3)
    res = solve(model, loads)
    assert res.converged
    assert res.grad_norm <= 1e-8 * loads.scale() * float(np.min(model.weights))


def test_determinism():
    g, model, loads = _case(n=17, eps=1e-2)
    r1 = solve(model, loads)
    r2 = solve(model, loads)
    assert r1.history == r2.history
    assert np.array_equal(r1.u_star, r2.u_star)


def test_iteration_cap_reports_not_converged():
    g, model, loads = _case(n=17, eps=1e-2)
    res = solve(model, loads, u_init=np.zeros(3 * model.n), max_iter=2)
    assert not res.converged
    assert res.iterations == 2


def test_nonfinite_initial_energy_rejected():
    g, model, loads = _case()
    bad = np.full(3 * model.n, np.nan)
    with pytest.raises(ValueError, match="non-finite"):
        solve(model, loads, u_init=bad)


def _bending_direction(g, model):
    q = np.zeros(3 * model.n)
    w = np.sin(np.pi * g.X) ** 2 * np.sin(np.pi * g.Y) ** 2
    q[2 * model.n:] = g.flat(w)
    return q


def test_probe_positive_semidefinite_t0():
    g, model, _ = _case(n=17)
    T0 = np.broadcast_to(np.eye(2), (g.nx, g.ny, 2, 2))
    probe = coercivity_probe(model, T0, Loads(g), [_bending_direction(g, model)],
                             np.linspace(0.5, 4.0, 8))
    assert probe["coercive_along_sample"]
    assert np.all(np.diff(probe["values"][0]) >= 0)


def test_probe_built_t0_small_load():
    g, model, _ = _case(n=17)
    P1 = 1e-3 * np.sin(np.pi * g.Y)
    loads = Loads(g, P=1e-3 * np.sin(np.pi * g.X) * np.sin(np.pi * g.Y), P1=P1)
    T0 = build_t0_plate(g, P1, np.zeros((17, 17)))
    probe = coercivity_probe(model, T0.values, loads,
                             [_bending_direction(g, model)], np.linspace(0.5, 6.0, 10))
    assert probe["direction_flags"][0]


def test_probe_detects_adversarial_t0():
    g, model, _ = _case(n=17)
    T0 = -1e3 * np.broadcast_to(np.eye(2), (g.nx, g.ny, 2, 2))
    probe = coercivity_probe(model, T0, Loads(g), [_bending_direction(g, model)],
                             np.linspace(0.5, 4.0, 8))
    assert not probe["coercive_along_sample"]


def test_probe_input_validation():
    g, model, loads = _case()
    d = _bending_direction(g, model)
    with pytest.raises(ValueError, match="increasing"):
        coercivity_probe(model, np.zeros((17, 17, 2, 2)), loads, [d], [2.0, 1.0])
    with pytest.raises(ValueError, match="zero probe direction"):
        coercivity_probe(model, np.zeros((17, 17, 2, 2)), loads,
                         [np.zeros(3 * model.n)], [1.0, 2.0])
