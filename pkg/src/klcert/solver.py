"""Minimization of the discrete potential energy and the coercivity probe.

The minimizer is a limited-memory quasi-Newton method (two-loop
recursion over curvature pairs) with Armijo backtracking; it works on
the stacked displacement vector with clamped DOFs held at zero by the
gradient mask.  The default initial iterate is the solution of the
linearized problem (membrane coupling off), which lands in the basin
relevant for small loads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .model import DiscreteModel, DisplacementField, Loads


@dataclass
class MinimizeResult:
    u_star: np.ndarray
    J_star: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)  # (J, grad_norm) per iteration


def minimize(energy_fn, gradient_fn, x0, gtol=None, max_iter=5000, memory=10) -> MinimizeResult:
    """Descent with curvature-pair memory and backtracking line search.

    ``energy_fn``/``gradient_fn`` map a flat state vector to J and its
    gradient (clamped entries zero).  Returns the best iterate found.
    """
    x = np.array(x0, dtype=float)
    f = float(energy_fn(x))
    if not np.isfinite(f):
        raise ValueError("non-finite energy at the initial iterate")
    if gtol is None:
        gtol = 1e-8 * (1.0 + abs(f))
    g = gradient_fn(x)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    history = [(f, gnorm)]
    if gnorm <= gtol:
        return MinimizeResult(x, f, gnorm, 0, True, history)

    s_list, y_list, rho_list = [], [], []
    c1 = 1e-4
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # two-loop recursion for the quasi-Newton direction
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_list:
            h0 = (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
            q *= h0
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            b = rho * (y @ q)
            q += s * (a - b)
        d = -q
        gd = g @ d
        if gd >= 0:  # memory produced a non-descent direction; restart
            d = -g
            gd = g @ d
            s_list, y_list, rho_list = [], [], []

        t = 1.0
        f_new, x_new = None, None
        while t > 1e-20:
            x_try = x + t * d
            f_try = float(energy_fn(x_try))
            if np.isfinite(f_try) and f_try <= f + c1 * t * gd:
                f_new, x_new = f_try, x_try
                break
            t *= 0.5
        if x_new is None:
            break  # line search failed; return best iterate so far

        g_new = gradient_fn(x_new)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * (np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        history.append((f, gnorm))
        if gnorm <= gtol:
            converged = True
            break
    return MinimizeResult(x, f, gnorm, it, converged, history)


def linear_solution(model: DiscreteModel, loads: Loads):
    """Solution of the linearized (small-rotation) problem; the default
    initial iterate for the nonlinear minimization."""
    K = (model.stiffness_membrane() + model.stiffness_bending()).tocsr()
    free = model.free_mask
    f = model.load_vector(loads)[free]
    Kff = K[free][:, free].tocsc()
    q = model.zero_state()
    q[free] = spla.splu(Kff).solve(f)
    if not np.all(np.isfinite(q)):
        raise RuntimeError("linearized system solve failed")
    return q


def solve(model: DiscreteModel, loads: Loads, u_init=None, gtol=None, max_iter=5000,
          memory=10) -> MinimizeResult:
    """Minimize the full nonlinear energy on the model's free DOFs.

    The default tolerance ties the gradient sup-norm to the load scale
    and the quadrature weight, tight enough that the certificate's
    equilibrium residuals are load-tolerance small.
    """
    if gtol is None:
        gtol = 1e-8 * loads.scale() * float(np.min(model.weights))
    if u_init is None:
        x0 = linear_solution(model, loads)
    elif isinstance(u_init, DisplacementField):
        x0 = u_init.flat()
    else:
        x0 = np.asarray(u_init, dtype=float)
    x0 = x0.copy()
    x0[~model.free_mask] = 0.0
    return minimize(
        lambda q: model.energy(q, loads).J,
        lambda q: model.gradient(q, loads),
        x0, gtol=gtol, max_iter=max_iter, memory=memory,
    )


def coercivity_probe(model: DiscreteModel, T0, loads: Loads, directions, t_list):
    """Samples the reduced transverse functional J1 along rays t*d.

    Returns a dict with the value table, a per-direction flag that J1 is
    eventually increasing with final value above the initial one, and
    the conjunction over directions.  A sampling diagnostic only; it
    cannot prove coercivity.
    """
    t_list = np.asarray(t_list, dtype=float)
    if np.any(t_list <= 0) or np.any(np.diff(t_list) <= 0):
        raise ValueError("t_list must be increasing and positive")
    T0v = T0.values if hasattr(T0, "values") else np.asarray(T0, dtype=float)
    table = np.empty((len(directions), len(t_list)))
    flags = []
    for i, d in enumerate(directions):
        q = d.flat() if isinstance(d, DisplacementField) else np.asarray(d, dtype=float)
        if np.max(np.abs(q)) == 0:
            raise ValueError("zero probe direction")
        for j, t in enumerate(t_list):
            table[i, j] = model.coercivity_value(t * q, T0v, loads)
        tail_increasing = bool(np.all(np.diff(table[i, len(t_list) // 2 :]) >= 0))
        flags.append(tail_increasing and table[i, -1] > table[i, 0])
    return {
        "t": t_list,
        "values": table,
        "direction_flags": flags,
        "coercive_along_sample": bool(all(flags)),
    }
