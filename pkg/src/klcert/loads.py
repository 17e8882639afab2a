"""Constructive load-potential tensors.

Two distinct constructions of a tensor T balancing the in-plane loads:

* ``build_t_tilde``: cumulative integration along grid lines plus a
  positive multiple of the identity, giving a symmetric positive
  definite T whose divergence matches -(P1, P2).
* ``build_t0_plate`` / ``build_t0_shell``: the minimal-norm tensor
  satisfying the (covariant, for shells) divergence constraint, found
  by an equality-constrained least-norm solve.  This T is not symmetric
  in general.

The shared kernel ``min_norm_div_solve`` minimizes a weighted norm
subject to a linear constraint and is reused for the dual field Q0.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid

from .grid import CLAMPED, TRACTION, Grid, TensorField2x2


def build_t_tilde(grid: Grid, P1, P2, C=None) -> TensorField2x2:
    """Diagonal tensor from cumulative load integrals, shifted to be
    positive definite.

    T11(x,y) = -int_0^x P1, T22(x,y) = -int_0^y P2, T12 = 0, then
    T += C*I with C defaulting to (max node-wise spectral radius) + 1.
    """
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    if not (np.all(np.isfinite(P1)) and np.all(np.isfinite(P2))):
        raise ValueError("non-finite in-plane loads")
    t11 = -cumulative_trapezoid(P1, x=grid.x, axis=0, initial=0.0)
    t22 = -cumulative_trapezoid(P2, x=grid.y, axis=1, initial=0.0)
    if C is None:
        C = float(np.max(np.maximum(np.abs(t11), np.abs(t22)))) + 1.0
    elif C <= 0:
        raise ValueError("shift C must be positive")
    return TensorField2x2.from_components(grid, t11 + C, np.zeros_like(t11), t22 + C)


def min_norm_div_solve(A, b, weights=None, x0=None):
    """Minimize (x - x0)' W (x - x0) / 2 subject to A x = b.

    W is diagonal (``weights``, default identity); x0 defaults to zero,
    giving the minimal-norm feasible point.  Solved through the normal
    equations of the multiplier system; when the constraint operator is
    rank deficient the solve falls back to a least-squares multiplier.
    """
    A = sp.csr_matrix(A)
    m, n = A.shape
    b = np.asarray(b, dtype=float).reshape(m)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(n)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    Winv_At = sp.diags(1.0 / w) @ A.T
    S = (A @ Winv_At).tocsc()
    rhs = b if x0 is None else b - A @ x0
    try:
        lam = spla.splu(S).solve(rhs)
        if not np.all(np.isfinite(lam)):
            raise RuntimeError("singular multiplier system")
    except RuntimeError:
        # rank-deficient constraint: least-squares multiplier, which
        # yields the least-squares-feasible minimal-norm point
        lam = spla.lsmr(S, rhs, atol=1e-14, btol=1e-14, maxiter=50 * m)[0]
    x = Winv_At @ lam
    return x if x0 is None else x0 + x


def _covariant_div_operator(grid: Grid, geometry=None):
    """Constraint operator for the tensor divergence identity.

    Unknown layout: stacked flat components [T11; T12; T21; T22].
    Row blocks: for each alpha, interior-node rows of
    (sqrt(a) T_{ab})_{,b}/sqrt(a) + Gamma^a_{lb} T_{lb}  (plain
    divergence when no geometry), plus traction-edge rows T_{ab} n_b.
    Returns (A, interior_rows_per_alpha, traction_row_info).
    """
    n = grid.n_nodes
    D = [grid.op("dx"), grid.op("dy")]
    comp = {(0, 0): 0, (0, 1): 1, (1, 0): 2, (1, 1): 3}
    Z = sp.csr_matrix((n, n))

    if geometry is None:
        sqrt_a = np.ones(n)
        gamma = np.zeros((2, 2, 2, n))
    else:
        sqrt_a = grid.flat(geometry.sqrt_a)
        gamma = np.array(
            [
                [[grid.flat(geometry.christoffel_mixed[..., l, a, b]) for b in range(2)]
                 for a in range(2)]
                for l in range(2)
            ]
        )

    inv_sa = sp.diags(1.0 / sqrt_a)
    blocks = []
    for a in range(2):
        row = [Z.copy(), Z.copy(), Z.copy(), Z.copy()]
        for b in range(2):
            row[comp[(a, b)]] = row[comp[(a, b)]] + inv_sa @ D[b] @ sp.diags(sqrt_a)
        for l in range(2):
            for b in range(2):
                row[comp[(l, b)]] = row[comp[(l, b)]] + sp.diags(gamma[a][l][b])
        blocks.append(sp.hstack(row, format="csr"))

    interior = grid.flat(grid.interior_mask)
    rows = []
    for a in range(2):
        rows.append(blocks[a][interior])

    # traction rows: T_{ab} n_b at non-corner traction-edge nodes
    normals = {"left": (-1.0, 0.0), "right": (1.0, 0.0),
               "bottom": (0.0, -1.0), "top": (0.0, 1.0)}
    edge_nodes = {
        "left": [(0, j) for j in range(1, grid.ny - 1)],
        "right": [(grid.nx - 1, j) for j in range(1, grid.ny - 1)],
        "bottom": [(i, 0) for i in range(1, grid.nx - 1)],
        "top": [(i, grid.ny - 1) for i in range(1, grid.nx - 1)],
    }
    trac_rows = [[], []]  # per alpha: list of (node_index, normal)
    for e, tag in grid.edge_tags.items():
        if tag != TRACTION:
            continue
        nvec = normals[e]
        for (i, j) in edge_nodes[e]:
            k = i * grid.ny + j
            for a in range(2):
                trac_rows[a].append((k, nvec))
    return rows, trac_rows, comp


def _build_t0(grid: Grid, P1, P2, geometry=None, tractions=None) -> TensorField2x2:
    if not grid.has_clamped:
        raise ValueError("divergence-constrained solve needs a clamped edge")
    n = grid.n_nodes
    rows, trac_rows, comp = _covariant_div_operator(grid, geometry)
    interior = grid.flat(grid.interior_mask)
    P = [grid.flat(np.asarray(P1, dtype=float)), grid.flat(np.asarray(P2, dtype=float))]
    Pt = None
    if tractions is not None:
        Pt = [grid.flat(np.asarray(t, dtype=float)) for t in tractions]

    A_blocks, b_parts = [], []
    for a in range(2):
        A_blocks.append(rows[a])
        b_parts.append(-P[a][interior])
        if trac_rows[a]:
            lil = sp.lil_matrix((len(trac_rows[a]), 4 * n))
            rhs = np.zeros(len(trac_rows[a]))
            for r, (k, nvec) in enumerate(trac_rows[a]):
                for b in range(2):
                    lil[r, comp[(a, b)] * n + k] = nvec[b]
                rhs[r] = Pt[a][k] if Pt is not None else 0.0
            A_blocks.append(lil.tocsr())
            b_parts.append(rhs)
    A = sp.vstack(A_blocks, format="csr")
    b = np.concatenate(b_parts)

    w1 = grid.flat(grid.quad_weights)
    if geometry is not None:
        w1 = w1 * grid.flat(geometry.sqrt_a)
    x = min_norm_div_solve(A, b, weights=np.tile(w1, 4))
    vals = np.empty((grid.nx, grid.ny, 2, 2))
    for (a, b_), c in comp.items():
        vals[..., a, b_] = grid.unflat(x[c * n : (c + 1) * n])
    return TensorField2x2(grid, vals, symmetric=False)


def build_t0_plate(grid: Grid, P1, P2, tractions=None) -> TensorField2x2:
    """Minimal-norm tensor with T_{ab,b} + P_a = 0 in the interior and
    T_{ab} n_b = Pt_a on traction edges.  Not symmetric in general."""
    return _build_t0(grid, P1, P2, geometry=None, tractions=tractions)


def build_t0_shell(grid: Grid, P1, P2, geometry) -> TensorField2x2:
    """Shell analogue with the covariant divergence constraint
    (sqrt(a) T_{ab})_{,b}/sqrt(a) + Gamma^a_{lb} T_{lb} + P_a = 0 and
    the sqrt(a)-weighted norm."""
    return _build_t0(grid, P1, P2, geometry=geometry)
