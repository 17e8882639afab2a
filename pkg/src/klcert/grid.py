"""Structured rectangular grid with finite-difference calculus and quadrature.

Fields live on the nodes of a tensor-product grid over [x0,x1] x [y0,y1]
(or a shell parameter domain).  All derivative operators are second order:
central stencils in the interior, one-sided second-order stencils at
boundary rows.  Nodes are flattened C-order, k = i*ny + j, so that 1-D
stencil matrices lift to 2-D by Kronecker products (x-operators and
y-operators then commute exactly).

Boundary edges are tagged either clamped (displacement eliminated, ghost
reflection for the deflection slope) or traction (free).  Corner nodes
shared by a clamped and a traction edge count as clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

INTERIOR = 0
CLAMPED = 1  # Gamma_0
TRACTION = 2  # Gamma_t

EDGES = ("left", "right", "bottom", "top")


def _d1_matrix(n, h):
    """First derivative, central interior, one-sided second order at ends."""
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -0.5 / h
        m[i, i + 1] = 0.5 / h
    m[0, 0], m[0, 1], m[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    m[n - 1, n - 1], m[n - 1, n - 2], m[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    return m.tocsr()


def _d2_matrix(n, h):
    """Second derivative, compact central interior, one-sided at ends."""
    m = sp.lil_matrix((n, n))
    h2 = h * h
    for i in range(1, n - 1):
        m[i, i - 1] = 1.0 / h2
        m[i, i] = -2.0 / h2
        m[i, i + 1] = 1.0 / h2
    m[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h2
    m[n - 1, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h2
    return m.tocsr()


def _d1_sbp(n, h):
    """First derivative compatible with trapezoid summation by parts.

    Central interior rows with two-point one-sided rows at the ends;
    together with the trapezoid norm W this satisfies
    W D + (W D)' = boundary terms only, so the discrete adjoint of the
    strain pairing is the central divergence at every interior node.
    """
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -0.5 / h
        m[i, i + 1] = 0.5 / h
    m[0, 0], m[0, 1] = -1.0 / h, 1.0 / h
    m[n - 1, n - 2], m[n - 1, n - 1] = -1.0 / h, 1.0 / h
    return m.tocsr()


def _d1_clamped(n, h, lo, hi):
    """First derivative for a field clamped (value and slope zero) at ends.

    Clamped boundary rows are exactly zero; free ends keep one-sided rows.
    """
    m = _d1_matrix(n, h).tolil()
    if lo:
        m[0, :] = 0.0
    if hi:
        m[n - 1, :] = 0.0
    return m.tocsr()


def _d2_clamped(n, h, lo, hi):
    """Second derivative with ghost reflection at clamped ends.

    At a clamped end the ghost value mirrors the first interior value
    (zero normal slope) and the end value itself is zero, giving the
    two-point row 2*(w1 - w0)/h^2.
    """
    m = _d2_matrix(n, h).tolil()
    h2 = h * h
    if lo:
        m[0, :] = 0.0
        m[0, 0] = -2.0 / h2
        m[0, 1] = 2.0 / h2
    if hi:
        m[n - 1, :] = 0.0
        m[n - 1, n - 1] = -2.0 / h2
        m[n - 1, n - 2] = 2.0 / h2
    return m.tocsr()


class Grid:
    """Nodes, boundary tags, quadrature weights and cached FD operators."""

    def __init__(self, extents, nx, ny, boundary_spec="clamped"):
        x0, x1, y0, y1 = extents
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate extents {extents}")
        if nx < 5 or ny < 5:
            raise ValueError(
                f"node counts nx={nx}, ny={ny} below stencil width (need >= 5)"
            )
        if isinstance(boundary_spec, str):
            boundary_spec = {e: boundary_spec for e in EDGES}
        unknown = set(boundary_spec) - set(EDGES)
        if unknown:
            raise ValueError(f"unknown boundary edges {sorted(unknown)}")
        tags = {}
        for e in EDGES:
            t = boundary_spec.get(e, "clamped")
            if t not in ("clamped", "traction"):
                raise ValueError(f"edge {e!r}: tag must be 'clamped' or 'traction'")
            tags[e] = CLAMPED if t == "clamped" else TRACTION

        self.nx, self.ny = nx, ny
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.hx = (x1 - x0) / (nx - 1)
        self.hy = (y1 - y0) / (ny - 1)
        self.edge_tags = tags
        self.x = np.linspace(x0, x1, nx)
        self.y = np.linspace(y0, y1, ny)
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")

        bt = np.zeros((nx, ny), dtype=np.int8)
        # traction first so that clamped wins at shared corners
        for e, sl in (("left", np.s_[0, :]), ("right", np.s_[-1, :]),
                      ("bottom", np.s_[:, 0]), ("top", np.s_[:, -1])):
            if tags[e] == TRACTION:
                bt[sl] = TRACTION
        for e, sl in (("left", np.s_[0, :]), ("right", np.s_[-1, :]),
                      ("bottom", np.s_[:, 0]), ("top", np.s_[:, -1])):
            if tags[e] == CLAMPED:
                bt[sl] = CLAMPED
        self.boundary_tags = bt
        self.interior_mask = bt == INTERIOR
        self.n_nodes = nx * ny

        wx = np.full(nx, self.hx)
        wx[[0, -1]] = 0.5 * self.hx
        wy = np.full(ny, self.hy)
        wy[[0, -1]] = 0.5 * self.hy
        self.quad_weights = np.outer(wx, wy)

        # 1-D trapezoid weights along traction edges, for boundary work terms
        bw = np.zeros((nx, ny))
        if tags["left"] == TRACTION:
            bw[0, :] += wy
        if tags["right"] == TRACTION:
            bw[-1, :] += wy
        if tags["bottom"] == TRACTION:
            bw[:, 0] += wx
        if tags["top"] == TRACTION:
            bw[:, -1] += wx
        self.boundary_weights = bw

        self._ops = {}

    # -- operator cache -------------------------------------------------

    def _kron_x(self, m1d):
        return sp.kron(m1d, sp.identity(self.ny, format="csr"), format="csr")

    def _kron_y(self, m1d):
        return sp.kron(sp.identity(self.nx, format="csr"), m1d, format="csr")

    def op(self, name):
        """Cached flat-field operators (act on vectors of length nx*ny).

        Generic (any field): dx, dy, dxx, dyy, dxy.
        Summation-by-parts first derivatives (strain assembly): sx, sy;
        kinematic variants with clamped-edge rows zeroed: ksx, ksy.
        Kinematic deflection operators (clamped edges): kx, ky, kxx,
        kyy, kxy.
        """
        if name in self._ops:
            return self._ops[name]
        t = self.edge_tags
        cl, cr = t["left"] == CLAMPED, t["right"] == CLAMPED
        cb, ct = t["bottom"] == CLAMPED, t["top"] == CLAMPED
        if name == "dx":
            m = self._kron_x(_d1_matrix(self.nx, self.hx))
        elif name == "dy":
            m = self._kron_y(_d1_matrix(self.ny, self.hy))
        elif name == "dxx":
            m = self._kron_x(_d2_matrix(self.nx, self.hx))
        elif name == "dyy":
            m = self._kron_y(_d2_matrix(self.ny, self.hy))
        elif name == "dxy":
            m = self.op("dy") @ self.op("dx")
        elif name == "sx":
            m = self._kron_x(_d1_sbp(self.nx, self.hx))
        elif name == "sy":
            m = self._kron_y(_d1_sbp(self.ny, self.hy))
        elif name == "ksx":
            m1d = _d1_sbp(self.nx, self.hx).tolil()
            if cl:
                m1d[0, :] = 0.0
            if cr:
                m1d[self.nx - 1, :] = 0.0
            m = self._kron_x(m1d.tocsr())
        elif name == "ksy":
            m1d = _d1_sbp(self.ny, self.hy).tolil()
            if cb:
                m1d[0, :] = 0.0
            if ct:
                m1d[self.ny - 1, :] = 0.0
            m = self._kron_y(m1d.tocsr())
        elif name == "kx":
            m = self._kron_x(_d1_clamped(self.nx, self.hx, cl, cr))
        elif name == "ky":
            m = self._kron_y(_d1_clamped(self.ny, self.hy, cb, ct))
        elif name == "kxx":
            m = self._kron_x(_d2_clamped(self.nx, self.hx, cl, cr))
        elif name == "kyy":
            m = self._kron_y(_d2_clamped(self.ny, self.hy, cb, ct))
        elif name == "kxy":
            m = self.op("ky") @ self.op("kx")
        else:
            raise KeyError(name)
        self._ops[name] = m
        return m

    # -------------------------------------------------------------------

    @property
    def fully_clamped(self):
        return all(t == CLAMPED for t in self.edge_tags.values())

    @property
    def has_clamped(self):
        return any(t == CLAMPED for t in self.edge_tags.values())

    def flat(self, a):
        return np.asarray(a).reshape(self.n_nodes)

    def unflat(self, v):
        return np.asarray(v).reshape(self.nx, self.ny)

    def __eq__(self, other):
        return self is other

    def __hash__(self):
        return id(self)


def build_grid(extents, nx, ny, boundary_spec="clamped"):
    return Grid(extents, nx, ny, boundary_spec)


# -- fields -------------------------------------------------------------


def _check_same_grid(a, b):
    if a.grid is not b.grid:
        raise ValueError("fields live on different grids")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"scalar field shape {self.values.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, f(grid.X, grid.Y))


@dataclass
class VectorField2:
    grid: Grid
    values: np.ndarray  # (nx, ny, 2)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny, 2):
            raise ValueError("vector field shape does not match grid")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nx, grid.ny, 2)))


@dataclass
class TensorField2x2:
    grid: Grid
    values: np.ndarray  # (nx, ny, 2, 2)
    symmetric: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny, 2, 2):
            raise ValueError("tensor field shape does not match grid")

    @classmethod
    def zeros(cls, grid, symmetric=False):
        return cls(grid, np.zeros((grid.nx, grid.ny, 2, 2)), symmetric)

    @classmethod
    def from_components(cls, grid, t11, t12, t22, t21=None):
        v = np.empty((grid.nx, grid.ny, 2, 2))
        v[..., 0, 0] = t11
        v[..., 0, 1] = t12
        v[..., 1, 0] = t12 if t21 is None else t21
        v[..., 1, 1] = t22
        return cls(grid, v, symmetric=t21 is None)


# -- calculus -----------------------------------------------------------


def diff(f: ScalarField, mode: str):
    """Gradient or Hessian of a scalar field (generic stencils).

    The mixed second derivative is the composition of the two first
    derivatives, which commute exactly, so the Hessian is symmetric by
    construction.
    """
    g = f.grid
    v = g.flat(f.values)
    if mode == "grad":
        out = np.empty((g.nx, g.ny, 2))
        out[..., 0] = g.unflat(g.op("dx") @ v)
        out[..., 1] = g.unflat(g.op("dy") @ v)
        return VectorField2(g, out)
    if mode == "hess":
        hxy = g.unflat(g.op("dxy") @ v)
        return TensorField2x2.from_components(
            g, g.unflat(g.op("dxx") @ v), hxy, g.unflat(g.op("dyy") @ v)
        )
    raise ValueError(f"mode must be 'grad' or 'hess', got {mode!r}")


def div_vec(q: VectorField2) -> ScalarField:
    g = q.grid
    out = g.op("dx") @ g.flat(q.values[..., 0]) + g.op("dy") @ g.flat(q.values[..., 1])
    return ScalarField(g, g.unflat(out))


def div_tensor(t: TensorField2x2) -> VectorField2:
    """Row-wise divergence (div T)_a = T_{a1,1} + T_{a2,2}."""
    g = t.grid
    out = np.empty((g.nx, g.ny, 2))
    for a in range(2):
        out[..., a] = g.unflat(
            g.op("dx") @ g.flat(t.values[..., a, 0])
            + g.op("dy") @ g.flat(t.values[..., a, 1])
        )
    return VectorField2(g, out)


def integrate(f: ScalarField, weight: ScalarField | None = None) -> float:
    """Trapezoidal quadrature of f (optionally times a weight field)."""
    g = f.grid
    vals = f.values
    if weight is not None:
        _check_same_grid(f, weight)
        vals = vals * weight.values
    return float(np.sum(g.quad_weights * vals))
