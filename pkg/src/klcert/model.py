"""Discrete model core shared by the flat-plate and shell front ends.

A :class:`DiscreteModel` bundles, for one grid and one material:

* sparse operators mapping the stacked displacement vector
  q = [u1; u2; w] to the Voigt strain measures
  (linear membrane part theta, rotation phi, bending kappa),
* node-wise membrane/bending elasticity matrices in Voigt form,
* quadrature weights (area element included for shells),
* equilibrium residual operators and the load functional.

The flat plate is the special case with identity metric, zero curvature
and zero Christoffel symbols; building it through the same code path
makes the shell model reduce to the plate model exactly.

Voigt conventions used throughout: strain-like vectors are
[t11, t22, 2*t12]; force-like vectors are [N11, N22, N12]; the 3x3
elasticity matrix maps the former to the latter, and one half of their
dot product (weighted by quadrature) is the stored energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import CLAMPED, Grid


def elasticity_voigt(E, nu, h, a_inv):
    """Isotropic membrane/bending elasticity in Voigt form.

    H^{ablm} = Eh/(2(1+nu)) * (A^{al}A^{bm} + A^{am}A^{bl}
               + 2nu/(1-nu) A^{ab}A^{lm}) with A the inverse metric;
    the bending tensor is (h^2/12) times the membrane one.

    ``a_inv`` has shape (..., 2, 2); returns (Hv, hv) of shape (..., 3, 3).
    """
    if not (-1.0 < nu < 0.5):
        raise ValueError(f"Poisson ratio nu={nu} outside (-1, 0.5)")
    if E <= 0 or h <= 0:
        raise ValueError("E and h must be positive")
    c = E * h / (2.0 * (1.0 + nu))
    m = 2.0 * nu / (1.0 - nu)
    A = np.asarray(a_inv, dtype=float)

    def H(al, be, la, mu):
        return c * (
            A[..., al, la] * A[..., be, mu]
            + A[..., al, mu] * A[..., be, la]
            + m * A[..., al, be] * A[..., la, mu]
        )

    Hv = np.empty(A.shape[:-2] + (3, 3))
    Hv[..., 0, 0] = H(0, 0, 0, 0)
    Hv[..., 1, 1] = H(1, 1, 1, 1)
    Hv[..., 2, 2] = H(0, 1, 0, 1)
    Hv[..., 0, 1] = Hv[..., 1, 0] = H(0, 0, 1, 1)
    Hv[..., 0, 2] = Hv[..., 2, 0] = H(0, 0, 0, 1)
    Hv[..., 1, 2] = Hv[..., 2, 1] = H(1, 1, 0, 1)
    ev = np.linalg.eigvalsh(Hv)
    if np.min(ev) <= 0:
        raise ValueError("elasticity matrix lost positive definiteness")
    return Hv, (h * h / 12.0) * Hv


def voigt_to_tensor(grid, v3):
    """(n,3) force-Voigt [N11,N22,N12] -> (nx,ny,2,2) symmetric tensor."""
    t = np.empty((grid.nx, grid.ny, 2, 2))
    t[..., 0, 0] = grid.unflat(v3[:, 0])
    t[..., 1, 1] = grid.unflat(v3[:, 1])
    t[..., 0, 1] = t[..., 1, 0] = grid.unflat(v3[:, 2])
    return t


@dataclass
class Loads:
    """Distributed loads (P transverse, P1/P2 in-plane) and optional
    traction data on Gamma_t nodes."""

    grid: Grid
    P: np.ndarray | None = None
    P1: np.ndarray | None = None
    P2: np.ndarray | None = None
    Pt: np.ndarray | None = None
    Pt1: np.ndarray | None = None
    Pt2: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.grid.nx, self.grid.ny)
        for name in ("P", "P1", "P2", "Pt", "Pt1", "Pt2"):
            v = getattr(self, name)
            v = np.zeros(shape) if v is None else np.asarray(v, dtype=float)
            if v.shape != shape:
                raise ValueError(f"load {name} shape {v.shape} != grid {shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"load {name} contains non-finite values")
            setattr(self, name, v)

    def scale(self):
        """Reference magnitude used by residual tolerances: 1 + max |load|."""
        return 1.0 + max(
            np.max(np.abs(v)) for v in (self.P, self.P1, self.P2, self.Pt, self.Pt1, self.Pt2)
        )


@dataclass
class DisplacementField:
    """In-plane components u1, u2 and transverse deflection w on one grid."""

    grid: Grid
    u1: np.ndarray
    u2: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        shape = (self.grid.nx, self.grid.ny)
        for name in ("u1", "u2", "w"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != shape:
                raise ValueError(f"{name} shape {v.shape} != grid {shape}")
            setattr(self, name, v)

    @classmethod
    def zeros(cls, grid):
        z = np.zeros((grid.nx, grid.ny))
        return cls(grid, z.copy(), z.copy(), z.copy())

    @classmethod
    def from_flat(cls, grid, q):
        n = grid.n_nodes
        return cls(grid, grid.unflat(q[:n]), grid.unflat(q[n : 2 * n]), grid.unflat(q[2 * n :]))

    def flat(self):
        g = self.grid
        return np.concatenate([g.flat(self.u1), g.flat(self.u2), g.flat(self.w)])


@dataclass
class EnergyBreakdown:
    G1: float  # membrane stored energy
    G2: float  # bending stored energy
    F1: float  # external work
    J: float  # total potential energy


def _diag(v):
    return sp.diags(v, format="csr")


class DiscreteModel:
    """Operators and material data for one plate or shell configuration."""

    def __init__(self, grid: Grid, Hv, hv, geometry=None):
        self.grid = grid
        self.geometry = geometry
        n = grid.n_nodes
        self.n = n
        Hv = np.asarray(Hv, dtype=float)
        hv = np.asarray(hv, dtype=float)
        if Hv.shape == (3, 3):
            Hv = np.broadcast_to(Hv, (n, 3, 3))
            hv = np.broadcast_to(hv, (n, 3, 3))
        else:
            Hv = Hv.reshape(n, 3, 3)
            hv = hv.reshape(n, 3, 3)
        self.Hv, self.hv = Hv, hv
        self.Hv_inv = np.linalg.inv(Hv)
        self.hv_inv = np.linalg.inv(hv)

        if geometry is None:
            sqrt_a = np.ones(n)
            zero = np.zeros(n)
            self.b_lower = np.zeros((2, 2, n))
            self.b_mixed = np.zeros((2, 2, n))  # b_alpha^beta, index [alpha][beta]
            self.gamma = np.zeros((2, 2, 2, n))  # Gamma^lam_{al,be}, [lam][al][be]
            self.b_cov = np.zeros((2, 2, 2, n))  # b^lam_{al|be}, [lam][al][be]
        else:
            sqrt_a = grid.flat(geometry.sqrt_a)
            self.b_lower = np.array(
                [[grid.flat(geometry.b[..., a, b]) for b in range(2)] for a in range(2)]
            )
            self.b_mixed = np.array(
                [[grid.flat(geometry.b_mixed[..., a, b]) for b in range(2)] for a in range(2)]
            )
            self.gamma = np.array(
                [
                    [[grid.flat(geometry.christoffel_mixed[..., l, a, b]) for b in range(2)]
                     for a in range(2)]
                    for l in range(2)
                ]
            )
            self.b_cov = np.array(
                [
                    [[grid.flat(geometry.b_mixed_cov_deriv[..., l, a, b]) for b in range(2)]
                     for a in range(2)]
                    for l in range(2)
                ]
            )
        self.sqrt_a = sqrt_a
        self.weights = grid.flat(grid.quad_weights) * sqrt_a

        self.flat_geometry = geometry is None or (
            np.max(np.abs(self.b_lower)) == 0.0 and np.max(np.abs(self.gamma)) == 0.0
        )

        self._build_operators()
        self._free_mask = None
        self._cache = {}

    # -- operator assembly ----------------------------------------------

    def _build_operators(self):
        g = self.grid
        n = self.n
        kxx, kyy, kxy = g.op("kxx"), g.op("kyy"), g.op("kxy")
        # summation-by-parts first derivatives: the strain-pairing
        # adjoint then equals the central divergence at interior nodes,
        # so strong equilibrium residuals track the gradient norm
        D1 = [g.op("sx"), g.op("sy")]   # derivatives of in-plane components
        K1 = [g.op("ksx"), g.op("ksy")]  # derivatives of the deflection
        K2 = [[kxx, kxy], [kxy, kyy]]
        Z = sp.csr_matrix((n, n))

        def blocks(bu1, bu2, bw):
            return sp.hstack([bu1, bu2, bw], format="csr")

        # covariant derivative of the in-plane components:
        # u_{lam|be} = u_{lam,be} - Gamma^mu_{lam,be} u_mu
        Ucov = [[None, None], [None, None]]
        for lam in range(2):
            for be in range(2):
                cols = [D1[be] if mu == lam else Z.copy() for mu in range(2)]
                for mu in range(2):
                    cols[mu] = cols[mu] - _diag(self.gamma[mu][lam][be])
                Ucov[lam][be] = blocks(cols[0], cols[1], Z)

        # theta_{ab} = (u_{a|b} + u_{b|a})/2 - b_{ab} w, Voigt [t11, t22, 2 t12]
        th11 = Ucov[0][0] - blocks(Z, Z, _diag(self.b_lower[0][0]))
        th22 = Ucov[1][1] - blocks(Z, Z, _diag(self.b_lower[1][1]))
        th12x2 = Ucov[0][1] + Ucov[1][0] - blocks(Z, Z, 2.0 * _diag(self.b_lower[0][1]))
        self.Theta = sp.vstack([th11, th22, th12x2], format="csr")

        # phi_a = w_{,a} + b_a^b u_b
        phi = []
        for a in range(2):
            phi.append(blocks(_diag(self.b_mixed[a][0]), _diag(self.b_mixed[a][1]), K1[a]))
        self.Phi = sp.vstack(phi, format="csr")

        # kappa_{ab} = -w_{|ab} - b^l_{a|b} u_l - b_a^l u_{l|b} - b_b^l u_{l|a}
        #             + b_a^l b_{lb} w        (Voigt row 3 is kappa12 + kappa21)
        def kappa(a, b):
            wcol = -K2[a][b]
            for lam in range(2):
                wcol = wcol + _diag(self.gamma[lam][a][b]) @ K1[lam]
            bb = np.zeros(self.n)
            for lam in range(2):
                bb += self.b_mixed[a][lam] * self.b_lower[lam][b]
            wcol = wcol + _diag(bb)
            out = blocks(Z, Z, wcol)
            for lam in range(2):
                out = out - _diag(self.b_cov[lam][a][b]) @ blocks(
                    *( [ _diag(np.ones(n)) if mu == lam else Z for mu in range(2) ] + [Z] )
                )
                out = out - _diag(self.b_mixed[a][lam]) @ Ucov[lam][b]
                out = out - _diag(self.b_mixed[b][lam]) @ Ucov[lam][a]
            return out

        k11 = kappa(0, 0)
        k22 = kappa(1, 1)
        k12 = kappa(0, 1)
        k21 = kappa(1, 0)
        self.Bend = sp.vstack([k11, k22, k12 + k21], format="csr")
        self._kappa12_pair = (k12, k21)

    # -- masks and DOF bookkeeping ---------------------------------------

    @property
    def free_mask(self):
        """Boolean mask over the stacked DOF vector; False on Gamma_0."""
        if self._free_mask is None:
            free = self.grid.flat(self.grid.boundary_tags != CLAMPED)
            self._free_mask = np.concatenate([free, free, free])
        return self._free_mask

    @property
    def transverse_only(self):
        """True when bending/rotation decouple from u (flat geometry):
        the convex split F then acts on the deflection DOFs only."""
        return self.flat_geometry

    @property
    def conj_dofs(self):
        """Indices (into the stacked vector) of the DOFs entering F."""
        free = self.free_mask
        idx = np.arange(3 * self.n)
        if self.transverse_only:
            keep = (idx >= 2 * self.n) & free
        else:
            keep = free
        return idx[keep]

    def zero_state(self):
        return np.zeros(3 * self.n)

    # -- strains, energy, gradient ---------------------------------------

    def strain_voigt(self, q):
        """Returns (gamma_v, kappa_v, theta_v, phi) with shapes
        (n,3), (n,3), (n,3), (n,2); Voigt rows carry the doubled shear."""
        th = (self.Theta @ q).reshape(3, self.n).T
        ph = (self.Phi @ q).reshape(2, self.n).T
        ka = (self.Bend @ q).reshape(3, self.n).T
        ga = th.copy()
        ga[:, 0] += 0.5 * ph[:, 0] ** 2
        ga[:, 1] += 0.5 * ph[:, 1] ** 2
        ga[:, 2] += ph[:, 0] * ph[:, 1]
        return ga, ka, th, ph

    def membrane_force_voigt(self, gamma_v):
        return np.einsum("nab,nb->na", self.Hv, gamma_v)

    def moment_voigt(self, kappa_v):
        return np.einsum("nab,nb->na", self.hv, kappa_v)

    def load_vector(self, loads: Loads):
        g = self.grid
        w = self.weights
        bw = g.flat(g.boundary_weights)
        return np.concatenate(
            [
                w * g.flat(loads.P1) + bw * g.flat(loads.Pt1),
                w * g.flat(loads.P2) + bw * g.flat(loads.Pt2),
                w * g.flat(loads.P) + bw * g.flat(loads.Pt),
            ]
        )

    def energy(self, q, loads: Loads | None = None) -> EnergyBreakdown:
        if not np.all(np.isfinite(q)):
            raise ValueError("non-finite displacement state")
        ga, ka, _, _ = self.strain_voigt(q)
        w = self.weights
        G1 = 0.5 * float(np.sum(w * np.einsum("na,na->n", self.membrane_force_voigt(ga), ga)))
        G2 = 0.5 * float(np.sum(w * np.einsum("na,na->n", self.moment_voigt(ka), ka)))
        F1 = 0.0 if loads is None else float(self.load_vector(loads) @ q)
        return EnergyBreakdown(G1, G2, F1, G1 + G2 - F1)

    def gradient(self, q, loads: Loads | None = None):
        """Exact gradient of the discrete energy; Gamma_0 rows zeroed."""
        ga, ka, _, ph = self.strain_voigt(q)
        w = self.weights
        nv = self.membrane_force_voigt(ga)
        mv = self.moment_voigt(ka)
        grad = self.Theta.T @ (w[None, :] * nv.T).ravel()
        grad += self.Bend.T @ (w[None, :] * mv.T).ravel()
        dphi = np.empty((2, self.n))
        dphi[0] = w * (nv[:, 0] * ph[:, 0] + nv[:, 2] * ph[:, 1])
        dphi[1] = w * (nv[:, 2] * ph[:, 0] + nv[:, 1] * ph[:, 1])
        grad += self.Phi.T @ dphi.ravel()
        if loads is not None:
            grad -= self.load_vector(loads)
        grad[~self.free_mask] = 0.0
        return grad

    # -- quadratic-form assemblies ----------------------------------------

    def _weighted_block(self, mat33):
        """Sparse (3n x 3n) matrix of the quadrature-weighted node-wise
        3x3 form ``mat33`` acting on stacked Voigt vectors."""
        w = self.weights
        rows = []
        for a in range(3):
            rows.append([_diag(w * mat33[:, a, b]) for b in range(3)])
        return sp.bmat(rows, format="csr")

    def stiffness_membrane(self):
        if "K_mem" not in self._cache:
            self._cache["K_mem"] = (self.Theta.T @ self._weighted_block(self.Hv) @ self.Theta).tocsc()
        return self._cache["K_mem"]

    def stiffness_bending(self):
        if "K_bend" not in self._cache:
            self._cache["K_bend"] = (self.Bend.T @ self._weighted_block(self.hv) @ self.Bend).tocsc()
        return self._cache["K_bend"]

    def gram_phi(self):
        """Quadrature Gram matrix of the rotation map phi."""
        if "K_phi" not in self._cache:
            w2 = np.concatenate([self.weights, self.weights])
            self._cache["K_phi"] = (self.Phi.T @ _diag(w2) @ self.Phi).tocsc()
        return self._cache["K_phi"]

    # -- equilibrium residuals --------------------------------------------

    def equilibrium_residuals(self, N, Q, loads: Loads):
        """Sup-norm interior residuals of the two equilibrium identities.

        In-plane: -N^{ab}|_b + b^a_l Q^l - P^a = 0.
        Transverse: -b_{ab} N^{ab} - Q^a_{|a} - P = 0.
        For flat geometry these reduce to the plain divergence identities.
        """
        g = self.grid
        D1 = [g.op("dx"), g.op("dy")]
        Nc = [[g.flat(N[..., a, b]) for b in range(2)] for a in range(2)]
        Qc = [g.flat(Q[..., a]) for a in range(2)]
        P = [g.flat(loads.P1), g.flat(loads.P2)]
        interior = g.flat(g.interior_mask)

        r1 = 0.0
        for a in range(2):
            cov = sum(D1[b] @ Nc[a][b] for b in range(2))
            for lam in range(2):
                for b in range(2):
                    cov = cov + self.gamma[a][lam][b] * Nc[lam][b]
                    cov = cov + self.gamma[b][lam][b] * Nc[a][lam]
            res = -cov - P[a]
            for lam in range(2):
                res = res + self.b_mixed[lam][a] * Qc[lam]
            r1 = max(r1, float(np.max(np.abs(res[interior]))))

        div_q = sum(D1[a] @ Qc[a] for a in range(2))
        for lam in range(2):
            for a in range(2):
                div_q = div_q + self.gamma[a][lam][a] * Qc[lam]
        bn = sum(self.b_lower[a][b] * Nc[a][b] for a in range(2) for b in range(2))
        r2 = -bn - div_q - g.flat(loads.P)
        r2 = float(np.max(np.abs(r2[interior])))
        return r1, r2

    # -- coercivity functional J1 -----------------------------------------

    def coercivity_value(self, q, T0, loads: Loads):
        """Reduced transverse functional: bending energy plus the
        T0-weighted rotation quadratic minus the transverse work."""
        g = self.grid
        _, ka, _, ph = self.strain_voigt(q)
        w = self.weights
        mv = self.moment_voigt(ka)
        G2 = 0.5 * float(np.sum(w * np.einsum("na,na->n", mv, ka)))
        T = [[g.flat(T0[..., a, b]) for b in range(2)] for a in range(2)]
        quad = 0.5 * float(
            np.sum(w * sum(T[a][b] * ph[:, a] * ph[:, b] for a in range(2) for b in range(2)))
        )
        tb = sum(T[a][b] * self.b_lower[a][b] for a in range(2) for b in range(2))
        wflat = q[2 * self.n :]
        work = float(np.sum(w * (tb + g.flat(loads.P)) * wflat))
        work += float(np.sum(g.flat(g.boundary_weights) * g.flat(loads.Pt) * wflat))
        return G2 + quad - work
