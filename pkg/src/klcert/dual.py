"""Duality engine: conjugate functionals, feasibility sets and the
global-optimality certificate.

The nonconvex energy is split as J = F - (F - J) with a convex
F(q) = G2(kappa(q)) + (K/2)<phi(q), phi(q)>.  The dual variables are a
membrane force N, a transverse flux Q and an auxiliary field z*.  The
certificate machinery checks:

* A1: in-plane equilibrium residual of N (covariant for shells),
* A2: transverse equilibrium residual of Q (and the curvature term),
* A3: node-wise positive definiteness of M = K*I - N,
* A4: positive definiteness of the reduced quadratic z -> <M^{-1}z, z>
  minus the conjugate-F quadratic, checked through eigenvalues of the
  quadrature-whitened operator.

A zero duality gap J(u0) = -F*(z0, Q0) + G*(z0, N0) at a feasible dual
point certifies u0 as a global minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, TensorField2x2
from .loads import min_norm_div_solve
from .model import DiscreteModel, Loads, voigt_to_tensor

DENSE_NODE_CAP = 33 * 33  # dense eigen/solve path up to this many nodes


def _stack2(grid, v):
    """(nx,ny,2) vector field -> stacked flat vector [v1; v2]."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([grid.flat(v[..., 0]), grid.flat(v[..., 1])])


def _unstack2(grid, s):
    out = np.empty((grid.nx, grid.ny, 2))
    n = grid.n_nodes
    out[..., 0] = grid.unflat(s[:n])
    out[..., 1] = grid.unflat(s[n:])
    return out


def _tensor_values(N):
    return N.values if isinstance(N, TensorField2x2) else np.asarray(N, dtype=float)


@dataclass
class ShiftedMembrane:
    """Node-wise matrix M = K*I - N with its inverse and spectrum."""

    grid: Grid
    K: float
    M: np.ndarray  # (nx, ny, 2, 2)
    M_inv: np.ndarray
    lambda_min: float  # smallest node-wise eigenvalue of M

    @property
    def in_A3(self):
        return self.lambda_min > 0


def membrane_eig_bounds(N):
    """Node-wise (lambda_min, lambda_max) of a symmetric 2x2 field."""
    v = _tensor_values(N)
    mean = 0.5 * (v[..., 0, 0] + v[..., 1, 1])
    rad = np.sqrt((0.5 * (v[..., 0, 0] - v[..., 1, 1])) ** 2 + v[..., 0, 1] ** 2)
    return mean - rad, mean + rad


def auto_shift(N):
    """Default K: 1.05 times the largest node-wise eigenvalue of N
    (clipped at zero) plus a small margin."""
    _, lmax = membrane_eig_bounds(N)
    return 1.05 * max(0.0, float(np.max(lmax))) + 1e-8


def shift_membrane(grid: Grid, N, K=None) -> ShiftedMembrane:
    v = _tensor_values(N)
    if np.max(np.abs(v[..., 0, 1] - v[..., 1, 0])) != 0.0:
        raise ValueError("membrane tensor must be symmetric")
    if K is None:
        K = auto_shift(v)
    if K <= 0:
        raise ValueError("shift K must be positive")
    M = -v.copy()
    M[..., 0, 0] += K
    M[..., 1, 1] += K
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    scale = K + float(np.max(np.abs(v)))
    bad = np.abs(det) < (1e-13 * scale) ** 2
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"shifted tensor singular at node ({i}, {j}); increase K")
    M_inv = np.empty_like(M)
    M_inv[..., 0, 0] = M[..., 1, 1] / det
    M_inv[..., 1, 1] = M[..., 0, 0] / det
    M_inv[..., 0, 1] = -M[..., 0, 1] / det
    M_inv[..., 1, 0] = -M[..., 1, 0] / det
    lmin, _ = membrane_eig_bounds(M)
    return ShiftedMembrane(grid, float(K), M, M_inv, float(np.min(lmin)))


class _ConjugateSolver:
    """Factorized solver for the convex part F: its Hessian is
    K_F = (bending stiffness) + K * (phi Gram matrix) on the DOFs F
    sees.  Falls back to least squares when K_F is singular (curved
    geometries can have zero-energy in-plane directions)."""

    def __init__(self, model: DiscreteModel, K):
        self.model = model
        self.K = float(K)
        self.dofs = model.conj_dofs
        KF = (model.stiffness_bending() + self.K * model.gram_phi()).tocsr()
        self.KF = KF[self.dofs][:, self.dofs].tocsc()
        self._lu = None
        try:
            lu = spla.splu(self.KF)
            probe = lu.solve(np.ones(self.KF.shape[0]))
            if np.all(np.isfinite(probe)):
                self._lu = lu
        except RuntimeError:
            pass

    def solve(self, rhs):
        if rhs.ndim == 1:
            rhs = rhs[:, None]
            squeeze = True
        else:
            squeeze = False
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x = np.column_stack(
                [spla.lsmr(self.KF, rhs[:, k], atol=1e-13, btol=1e-13)[0]
                 for k in range(rhs.shape[1])]
            )
        return x[:, 0] if squeeze else x

    def argmax_state(self, zq_stacked):
        """State attaining sup_q {<zq, phi(q)>_w - F(q)} (full 3n vector)."""
        m = self.model
        w2 = np.concatenate([m.weights, m.weights])
        rhs = (m.Phi.T @ (w2 * zq_stacked))[self.dofs]
        x = m.zero_state()
        x[self.dofs] = self.solve(rhs)
        return x

    def fstar(self, z_stacked, q_stacked):
        zq = z_stacked + q_stacked
        x = self.argmax_state(zq)
        m = self.model
        w2 = np.concatenate([m.weights, m.weights])
        val = 0.5 * float((w2 * zq) @ (m.Phi @ x))
        return val, x


def conjugate_F(model: DiscreteModel, K, zstar, Q):
    """Conjugate of the convex part at z* + Q; returns (value, argmax
    state).  Nonnegative, zero at zero, quadratic (homogeneous of
    degree 2)."""
    g = model.grid
    val, x = _ConjugateSolver(model, K).fstar(_stack2(g, zstar), _stack2(g, Q))
    return val, x


def conjugate_G(model: DiscreteModel, K, zstar, N):
    """G*(z*, N) = 1/2 <M^{-1} z*, z*> - 1/2 <H^{-1}N, N> with
    M = K*I - N; defined only when M is node-wise positive definite."""
    g = model.grid
    shift = shift_membrane(g, N, K)
    if not shift.in_A3:
        raise ValueError("shifted tensor not positive definite (outside A3)")
    z = _unstack2(g, _stack2(g, zstar))
    quad = np.einsum("xyab,xya,xyb->xy", shift.M_inv, z, z)
    term1 = 0.5 * float(np.sum(g.unflat(model.weights) * quad))
    Nv = np.stack(
        [
            g.flat(_tensor_values(N)[..., 0, 0]),
            g.flat(_tensor_values(N)[..., 1, 1]),
            g.flat(_tensor_values(N)[..., 0, 1]),
        ],
        axis=1,
    )
    comp = np.einsum("nab,na,nb->n", model.Hv_inv, Nv, Nv)
    term2 = 0.5 * float(np.sum(model.weights * comp))
    return term1 - term2


class DualOperator:
    """Whitened reduced dual quadratic A = C - B on the z* space.

    C is the node-wise M^{-1} block form; B is the conjugate-F quadratic
    D^{1/2} Phi K_F^+ Phi' D^{1/2} with D the quadrature weights.
    Positive definiteness of A is condition A4.
    """

    def __init__(self, model: DiscreteModel, shift: ShiftedMembrane):
        self.model = model
        self.shift = shift
        self.cs = _ConjugateSolver(model, shift.K)
        n = model.n
        self.n2 = 2 * n
        self.ds = np.sqrt(np.concatenate([model.weights, model.weights]))
        self.Pd = (sp.diags(self.ds) @ model.Phi[:, self.cs.dofs].tocsc()).tocsr()
        g = model.grid
        self.Mi = np.stack(
            [
                g.flat(shift.M_inv[..., 0, 0]),
                g.flat(shift.M_inv[..., 0, 1]),
                g.flat(shift.M_inv[..., 1, 1]),
            ]
        )
        self._dense = None

    def _apply_C(self, y):
        n = self.model.n
        out = np.empty_like(y)
        out[:n] = self.Mi[0] * y[:n] + self.Mi[1] * y[n:]
        out[n:] = self.Mi[1] * y[:n] + self.Mi[2] * y[n:]
        return out

    def _apply_B(self, y):
        return self.Pd @ self.cs.solve(self.Pd.T @ y)

    def apply(self, y):
        return self._apply_C(y) - self._apply_B(y)

    def dense(self):
        if self._dense is None:
            n = self.model.n
            A = np.zeros((self.n2, self.n2))
            A[np.arange(n), np.arange(n)] = self.Mi[0]
            A[np.arange(n), n + np.arange(n)] = self.Mi[1]
            A[n + np.arange(n), np.arange(n)] = self.Mi[1]
            A[n + np.arange(n), n + np.arange(n)] = self.Mi[2]
            X = self.cs.solve(self.Pd.T.toarray())
            A -= self.Pd @ X
            self._dense = 0.5 * (A + A.T)
        return self._dense

    def lambda_min(self, method="auto"):
        if method == "auto":
            method = "dense" if self.model.n <= DENSE_NODE_CAP else "iterative"
        if method == "dense":
            return float(sla.eigh(self.dense(), eigvals_only=True, subset_by_index=[0, 0])[0])
        if method != "iterative":
            raise ValueError(f"unknown eigen method {method!r}")
        op = spla.LinearOperator((self.n2, self.n2), matvec=self.apply, dtype=float)
        v0 = np.full(self.n2, 1.0 / np.sqrt(self.n2))
        # tol=0 requests machine-precision Lanczos residuals; loose
        # tolerances stall on clustered interior eigenvalues.
        lmax = float(spla.eigsh(op, k=1, which="LA", v0=v0, tol=0, maxiter=20000)[0][0])
        shift = abs(lmax) * 1.01 + 1e-8
        op2 = spla.LinearOperator(
            (self.n2, self.n2), matvec=lambda y: shift * y - self.apply(y), dtype=float
        )
        mu = float(spla.eigsh(op2, k=1, which="LA", v0=v0, tol=0, maxiter=20000)[0][0])
        return shift - mu

    def minimize_z(self, Q_stacked):
        """z* minimizing -F*(z, Q) + G*(z, N); requires A4 > 0."""
        rhs = self._apply_B(self.ds * Q_stacked)
        if self.model.n <= DENSE_NODE_CAP:
            y = sla.solve(self.dense(), rhs, assume_a="sym")
        else:
            y, info = spla.cg(
                spla.LinearOperator((self.n2, self.n2), matvec=self.apply, dtype=float),
                rhs, rtol=1e-12, atol=0.0, maxiter=20 * self.n2,
            )
            if info != 0:
                raise RuntimeError("dual z-solve did not converge (A4 may fail)")
        return y / self.ds


def check_A4(model: DiscreteModel, N, K, method="auto"):
    """Smallest eigenvalue of the whitened reduced dual quadratic;
    A4 holds iff the result is positive."""
    shift = shift_membrane(model.grid, N, K)
    if not shift.in_A3:
        raise ValueError("A3 fails; A4 operator undefined")
    return DualOperator(model, shift).lambda_min(method)


def check_A1_A2(model: DiscreteModel, N, Q, loads: Loads):
    """Interior sup-norm residuals of the two equilibrium identities."""
    return model.equilibrium_residuals(_tensor_values(N), np.asarray(Q, dtype=float), loads)


def dual_value(model: DiscreteModel, K, Q, N):
    """Dual functional inf_z {-F*(z, Q) + G*(z, N)}; returns the value
    and the minimizing z* field."""
    g = model.grid
    shift = shift_membrane(g, N, K)
    if not shift.in_A3:
        raise ValueError("outside A3: dual value undefined")
    op = DualOperator(model, shift)
    if op.lambda_min() <= 0:
        raise ValueError("A4 fails: dual value not certified (unbounded below)")
    Qs = _stack2(g, Q)
    zs = op.minimize_z(Qs)
    fs, _ = op.cs.fstar(zs, Qs)
    gs = conjugate_G(model, K, _unstack2(g, zs), N)
    return -fs + gs, _unstack2(g, zs)


@dataclass
class DualCertificate:
    N: np.ndarray  # (nx, ny, 2, 2)
    Q: np.ndarray  # (nx, ny, 2)
    zstar: np.ndarray  # (nx, ny, 2)
    K: float
    residual_A1: float
    residual_A2: float
    lambda_min_A3: float
    in_A3: bool
    lambda_min_A4: float
    dual_value: float  # inf over z of the dual functional; nan if refused

    def verifies(self, load_scale, tol_res=1e-6):
        tol = tol_res * load_scale
        return (
            self.residual_A1 <= tol
            and self.residual_A2 <= tol
            and self.in_A3
            and self.lambda_min_A4 > 0
        )


def extract_certificate(model: DiscreteModel, state, loads: Loads, K=None,
                        eig_method="auto") -> DualCertificate:
    """Builds the dual point (N0, Q0, z0*) at a (near-)stationary state.

    N0 = H gamma(u0); z0* = (N0 + K*I) phi(u0); Q0 is the minimal-norm
    solution of the conjugate-F stationarity identity, which transfers
    primal stationarity into transverse dual equilibrium.
    """
    g = model.grid
    q0 = state.flat() if hasattr(state, "flat") and not isinstance(state, np.ndarray) else np.asarray(state, dtype=float)
    ga, _, _, ph = model.strain_voigt(q0)
    Nv = model.membrane_force_voigt(ga)
    N = voigt_to_tensor(g, Nv)
    if K is None:
        K = auto_shift(N)
    K = float(K)

    z = np.empty((2, model.n))
    z[0] = Nv[:, 0] * ph[:, 0] + Nv[:, 2] * ph[:, 1] + K * ph[:, 0]
    z[1] = Nv[:, 2] * ph[:, 0] + Nv[:, 1] * ph[:, 1] + K * ph[:, 1]
    z_stacked = z.ravel()

    # Q0: minimal-norm field satisfying the transverse equilibrium
    # identity at every interior node (covariant divergence for curved
    # geometry).  The conjugate stationarity identity then holds weakly
    # up to discretization error, which perturbs the gap only at
    # second order.
    n = model.n
    D = [g.op("dx"), g.op("dy")]
    col1 = D[0] + sp.diags(model.gamma[0][0][0] + model.gamma[1][0][1])
    col2 = D[1] + sp.diags(model.gamma[0][1][0] + model.gamma[1][1][1])
    interior = g.flat(g.interior_mask)
    A = sp.hstack([col1, col2], format="csr")[interior]
    Nc = [[g.flat(N[..., a, b]) for b in range(2)] for a in range(2)]
    bN = sum(model.b_lower[a][b] * Nc[a][b] for a in range(2) for b in range(2))
    rhs = (-g.flat(loads.P) - bN)[interior]
    w2 = np.concatenate([model.weights, model.weights])
    Q_stacked = min_norm_div_solve(A, rhs, weights=w2)

    Qf = _unstack2(g, Q_stacked)
    r1, r2 = model.equilibrium_residuals(N, Qf, loads)
    shift = shift_membrane(g, N, K)
    in_A3 = shift.in_A3
    if in_A3:
        op = DualOperator(model, shift)
        lam4 = op.lambda_min(eig_method)
        if lam4 > 0:
            zmin = op.minimize_z(Q_stacked)
            fs, _ = op.cs.fstar(zmin, Q_stacked)
            dval = -fs + conjugate_G(model, K, _unstack2(g, zmin), N)
        else:
            dval = float("nan")
    else:
        lam4 = float("nan")
        dval = float("nan")
    return DualCertificate(
        N=N, Q=Qf, zstar=_unstack2(g, z_stacked), K=K,
        residual_A1=r1, residual_A2=r2,
        lambda_min_A3=shift.lambda_min, in_A3=in_A3,
        lambda_min_A4=lam4, dual_value=dval,
    )


def duality_gap(model: DiscreteModel, state, cert: DualCertificate, loads: Loads):
    """J(u0) - J*(v0*, z0*) evaluated at the certificate's own z0*."""
    q0 = state.flat() if hasattr(state, "flat") and not isinstance(state, np.ndarray) else np.asarray(state, dtype=float)
    J = model.energy(q0, loads).J
    fs, _ = conjugate_F(model, cert.K, cert.zstar, cert.Q)
    gs = conjugate_G(model, cert.K, cert.zstar, cert.N)
    return J - (-fs + gs)


# -- feasible dual samplers (weak-form projections) ----------------------


def project_membrane_feasible(model: DiscreteModel, N_guess, loads: Loads):
    """Projects a symmetric tensor field onto the discrete weak in-plane
    equilibrium constraint (pairing with every admissible in-plane test
    displacement equals the in-plane load work)."""
    g = model.grid
    v = _tensor_values(N_guess)
    x0 = np.concatenate([g.flat(v[..., 0, 0]), g.flat(v[..., 1, 1]), g.flat(v[..., 0, 1])])
    w3 = np.tile(model.weights, 3)
    idx = np.arange(3 * model.n)
    rows = (idx < 2 * model.n) & model.free_mask
    A = (model.Theta.T @ sp.diags(w3)).tocsr()[rows]
    b = model.load_vector(loads)[rows]
    x = min_norm_div_solve(A, b, weights=w3, x0=x0)
    n = model.n
    return voigt_to_tensor(g, np.stack([x[:n], x[n : 2 * n], x[2 * n :]], axis=1))


def project_transverse_feasible(model: DiscreteModel, Q_guess, loads: Loads):
    """Projects a vector field onto the discrete weak transverse
    equilibrium constraint (pairing with every admissible deflection
    gradient equals the transverse load work)."""
    g = model.grid
    x0 = _stack2(g, Q_guess)
    w2 = np.concatenate([model.weights, model.weights])
    idx = np.arange(3 * model.n)
    rows = (idx >= 2 * model.n) & model.free_mask
    A = (model.Phi.T @ sp.diags(w2)).tocsr()[rows]
    b = model.load_vector(loads)[rows]
    x = min_norm_div_solve(A, b, weights=w2, x0=x0)
    return _unstack2(g, x)
