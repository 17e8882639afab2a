"""Shell middle-surface geometry and kinematics.

The surface is given by a parametrization r(xi1, xi2) over the grid's
parameter domain, either analytically (with first and second partials)
or as sampled positions.  From it the metric, curvature, Christoffel
symbols and covariant curvature derivative are built; the discrete
shell model then shares all operator machinery with the plate, which
it reduces to exactly on a plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .model import DiscreteModel, DisplacementField, Loads, elasticity_voigt


@dataclass
class SurfaceGeometry:
    """Node-wise first and second fundamental forms and derived data.

    Index conventions: christoffel_mixed[..., l, a, b] = Gamma^l_{ab};
    b_mixed[..., a, b] = b_a^b; b_mixed_cov_deriv[..., l, a, b] =
    b^l_{a|b} (surface covariant derivative of the mixed tensor).
    """

    grid: Grid
    a: np.ndarray  # (nx, ny, 2, 2) metric
    a_inv: np.ndarray
    sqrt_a: np.ndarray  # (nx, ny)
    normal: np.ndarray  # (nx, ny, 3)
    b: np.ndarray  # (nx, ny, 2, 2) curvature, lower indices
    b_mixed: np.ndarray  # (nx, ny, 2, 2)
    christoffel_lower: np.ndarray  # (nx, ny, 2, 2, 2)  Gamma_{l,ab}
    christoffel_mixed: np.ndarray  # (nx, ny, 2, 2, 2)  Gamma^l_{ab}
    b_mixed_cov_deriv: np.ndarray  # (nx, ny, 2, 2, 2)

    @property
    def is_flat(self):
        return np.max(np.abs(self.b)) == 0.0 and np.max(np.abs(self.christoffel_mixed)) == 0.0


@dataclass
class ShellStrains:
    theta: np.ndarray  # (nx, ny, 2, 2)
    phi: np.ndarray  # (nx, ny, 2)
    gamma: np.ndarray  # (nx, ny, 2, 2)
    kappa: np.ndarray  # (nx, ny, 2, 2), off-diagonal symmetrized


@dataclass
class ShellMaterial:
    E: float
    nu: float
    h: float
    Hv: np.ndarray  # (nx*ny, 3, 3)
    hv: np.ndarray


def surface_catalogue(name, **params):
    """Analytic parametrizations: r plus first and second partials.

    Known names: plane, cylinder(R), sphere-patch(R), paraboloid(a, b).
    """

    def pack(*fns):
        keys = ("r", "r1", "r2", "r11", "r12", "r22")
        return dict(zip(keys, fns))

    def vec(*comps):
        return np.stack(np.broadcast_arrays(*comps), axis=-1).astype(float)

    if name == "plane":
        z = lambda x, y: np.zeros_like(x)
        return pack(
            lambda x, y: vec(x, y, z(x, y)),
            lambda x, y: vec(np.ones_like(x), z(x, y), z(x, y)),
            lambda x, y: vec(z(x, y), np.ones_like(x), z(x, y)),
            lambda x, y: vec(z(x, y), z(x, y), z(x, y)),
            lambda x, y: vec(z(x, y), z(x, y), z(x, y)),
            lambda x, y: vec(z(x, y), z(x, y), z(x, y)),
        )
    if name == "cylinder":
        R = float(params["R"])
        zero = lambda x: np.zeros_like(x)
        one = lambda x: np.ones_like(x)
        return pack(
            lambda x, y: vec(R * np.cos(x), R * np.sin(x), y),
            lambda x, y: vec(-R * np.sin(x), R * np.cos(x), zero(x)),
            lambda x, y: vec(zero(x), zero(x), one(x)),
            lambda x, y: vec(-R * np.cos(x), -R * np.sin(x), zero(x)),
            lambda x, y: vec(zero(x), zero(x), zero(x)),
            lambda x, y: vec(zero(x), zero(x), zero(x)),
        )
    if name == "sphere-patch":
        R = float(params["R"])
        return pack(
            lambda x, y: vec(R * np.cos(x) * np.cos(y), R * np.cos(x) * np.sin(y), R * np.sin(x)),
            lambda x, y: vec(-R * np.sin(x) * np.cos(y), -R * np.sin(x) * np.sin(y), R * np.cos(x)),
            lambda x, y: vec(-R * np.cos(x) * np.sin(y), R * np.cos(x) * np.cos(y), np.zeros_like(x)),
            lambda x, y: vec(-R * np.cos(x) * np.cos(y), -R * np.cos(x) * np.sin(y), -R * np.sin(x)),
            lambda x, y: vec(R * np.sin(x) * np.sin(y), -R * np.sin(x) * np.cos(y), np.zeros_like(x)),
            lambda x, y: vec(-R * np.cos(x) * np.cos(y), -R * np.cos(x) * np.sin(y), np.zeros_like(x)),
        )
    if name == "paraboloid":
        ca = float(params["a"])
        cb = float(params["b"])
        zero = lambda x: np.zeros_like(x)
        one = lambda x: np.ones_like(x)
        return pack(
            lambda x, y: vec(x, y, ca * x * x + cb * y * y),
            lambda x, y: vec(one(x), zero(x), 2 * ca * x),
            lambda x, y: vec(zero(x), one(x), 2 * cb * y),
            lambda x, y: vec(zero(x), zero(x), 2 * ca * one(x)),
            lambda x, y: vec(zero(x), zero(x), zero(x)),
            lambda x, y: vec(zero(x), zero(x), 2 * cb * one(x)),
        )
    raise ValueError(f"unknown surface {name!r}")


def _numeric_partials(grid: Grid, positions):
    """First and second partials of sampled positions via grid stencils."""
    out = {}
    flat = lambda a: grid.flat(a)
    ops = {"r1": "dx", "r2": "dy", "r11": "dxx", "r12": "dxy", "r22": "dyy"}
    out["r"] = positions
    for key, op in ops.items():
        d = np.empty_like(positions)
        for c in range(3):
            d[..., c] = grid.unflat(grid.op(op) @ flat(positions[..., c]))
        out[key] = d
    return out


def build_geometry(grid: Grid, surface) -> SurfaceGeometry:
    """Geometry from an analytic parametrization dict (keys r, r1, r2,
    r11, r12, r22 as callables of the parameter arrays) or from sampled
    positions of shape (nx, ny, 3)."""
    if isinstance(surface, np.ndarray):
        if surface.shape != (grid.nx, grid.ny, 3):
            raise ValueError("sampled positions must have shape (nx, ny, 3)")
        d = _numeric_partials(grid, surface.astype(float))
    else:
        X, Y = grid.X, grid.Y
        d = {k: np.asarray(surface[k](X, Y), dtype=float) for k in
             ("r", "r1", "r2", "r11", "r12", "r22")}
    r1, r2 = d["r1"], d["r2"]
    rdd = [[d["r11"], d["r12"]], [d["r12"], d["r22"]]]
    t = [r1, r2]

    a = np.empty((grid.nx, grid.ny, 2, 2))
    for al in range(2):
        for be in range(2):
            a[..., al, be] = np.einsum("...c,...c->...", t[al], t[be])
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if np.any(det <= 0):
        i, j = np.argwhere(det <= 0)[0]
        raise ValueError(f"degenerate metric (non-immersion) at node ({i}, {j})")
    sqrt_a = np.sqrt(det)
    a_inv = np.empty_like(a)
    a_inv[..., 0, 0] = a[..., 1, 1] / det
    a_inv[..., 1, 1] = a[..., 0, 0] / det
    a_inv[..., 0, 1] = a_inv[..., 1, 0] = -a[..., 0, 1] / det

    normal = np.cross(r1, r2)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)

    b = np.empty((grid.nx, grid.ny, 2, 2))
    for al in range(2):
        for be in range(2):
            b[..., al, be] = np.einsum("...c,...c->...", normal, rdd[al][be])
    b[..., 0, 1] = b[..., 1, 0] = 0.5 * (b[..., 0, 1] + b[..., 1, 0])
    b_mixed = np.einsum("...al,...lb->...ab", b, a_inv)

    # Gamma_{l,ab} = r_{,ab} . r_{,l} (tangential part of the second
    # derivative); raise the first index with the inverse metric
    gl = np.empty((grid.nx, grid.ny, 2, 2, 2))
    for l in range(2):
        for al in range(2):
            for be in range(2):
                gl[..., l, al, be] = np.einsum("...c,...c->...", rdd[al][be], t[l])
    gm = np.einsum("...lg,...gab->...lab", a_inv, gl)

    # b^l_{a|b} = b^l_{a,b} + Gamma^l_{mb} b^m_a - Gamma^m_{ab} b^l_m,
    # the partial derivative taken with the grid stencils
    bcov = np.empty((grid.nx, grid.ny, 2, 2, 2))
    D = {0: grid.op("dx"), 1: grid.op("dy")}
    bmix_la = np.transpose(b_mixed, (0, 1, 3, 2))  # [l, a] ordering of b_a^l
    for l in range(2):
        for al in range(2):
            for be in range(2):
                part = grid.unflat(D[be] @ grid.flat(bmix_la[..., l, al]))
                for m in range(2):
                    part = part + gm[..., l, m, be] * bmix_la[..., m, al]
                    part = part - gm[..., m, al, be] * bmix_la[..., l, m]
                bcov[..., l, al, be] = part

    # snap exactly-flat geometry so the plate reduction is exact
    if np.max(np.abs(b)) < 1e-13 and np.max(np.abs(gm)) < 1e-13:
        b[:] = 0.0
        b_mixed[:] = 0.0
        gl[:] = 0.0
        gm[:] = 0.0
        bcov[:] = 0.0

    return SurfaceGeometry(grid, a, a_inv, sqrt_a, normal, b, b_mixed, gl, gm, bcov)


def shell_material(geom: SurfaceGeometry, E, nu, h) -> ShellMaterial:
    """Node-wise isotropic elasticity built from the inverse metric."""
    g = geom.grid
    Hv, hv = elasticity_voigt(E, nu, h, geom.a_inv.reshape(g.n_nodes, 2, 2))
    return ShellMaterial(E, nu, h, Hv, hv)


def shell_model(grid: Grid, geom: SurfaceGeometry, material: ShellMaterial) -> DiscreteModel:
    return DiscreteModel(grid, material.Hv, material.hv, geometry=geom)


_strain_models = {}


def _strain_model(geom: SurfaceGeometry) -> DiscreteModel:
    key = id(geom)
    if key not in _strain_models:
        g = geom.grid
        I = np.broadcast_to(np.eye(3), (g.n_nodes, 3, 3))
        _strain_models[key] = DiscreteModel(g, I, I, geometry=geom)
    return _strain_models[key]


def shell_strains(u: DisplacementField, geom: SurfaceGeometry) -> ShellStrains:
    """theta, phi, gamma = theta + phi phi/2, and the curvature change
    kappa with all curvature-coupling terms."""
    if u.grid is not geom.grid:
        raise ValueError("displacement and geometry grids differ")
    m = _strain_model(geom)
    g = geom.grid
    ga, ka, th, ph = m.strain_voigt(u.flat())

    def unpack(v3):
        t = np.empty((g.nx, g.ny, 2, 2))
        t[..., 0, 0] = g.unflat(v3[:, 0])
        t[..., 1, 1] = g.unflat(v3[:, 1])
        t[..., 0, 1] = t[..., 1, 0] = 0.5 * g.unflat(v3[:, 2])
        return t

    phi = np.empty((g.nx, g.ny, 2))
    phi[..., 0] = g.unflat(ph[:, 0])
    phi[..., 1] = g.unflat(ph[:, 1])
    return ShellStrains(unpack(th), phi, unpack(ga), unpack(ka))


def shell_energy(u: DisplacementField, geom: SurfaceGeometry, material: ShellMaterial,
                 loads: Loads):
    """Potential energy with sqrt(a)-weighted quadrature."""
    return shell_model(u.grid, geom, material).energy(u.flat(), loads)
