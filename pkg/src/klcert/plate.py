"""Flat-plate kinematics, isotropic constitutive law and potential energy.

Thin wrappers over the shared discrete model with the identity metric:
membrane strain carries the rotation nonlinearity w_{,a} w_{,b} / 2,
bending strain is minus the deflection Hessian, and the potential
energy is J = G1 + G2 - F1 (membrane + bending stored energy minus
external work).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, TensorField2x2
from .model import (
    DiscreteModel,
    DisplacementField,
    EnergyBreakdown,
    Loads,
    elasticity_voigt,
)

PlateLoads = Loads


@dataclass
class PlateMaterial:
    """Isotropic membrane and bending elasticity in Voigt form.

    Hv maps [g11, g22, 2*g12] to [N11, N22, N12]; hv = (h^2/12) Hv does
    the same for curvatures and moments. Inverses are the compliances.
    """

    E: float
    nu: float
    h: float
    Hv: np.ndarray = field(repr=False, default=None)
    hv: np.ndarray = field(repr=False, default=None)
    Hv_inv: np.ndarray = field(repr=False, default=None)
    hv_inv: np.ndarray = field(repr=False, default=None)


def build_material(E, nu, h) -> PlateMaterial:
    """Isotropic plate elasticity; nu must lie in (-1, 0.5)."""
    Hv, hv = elasticity_voigt(E, nu, h, np.eye(2))
    return PlateMaterial(E, nu, h, Hv, hv, np.linalg.inv(Hv), np.linalg.inv(hv))


def plate_model(grid: Grid, material: PlateMaterial) -> DiscreteModel:
    """Discrete model for the flat plate (identity metric, no curvature)."""
    return DiscreteModel(grid, material.Hv, material.hv, geometry=None)


def membrane_strain(u: DisplacementField) -> TensorField2x2:
    """gamma_ab = (u_{a,b} + u_{b,a})/2 + w_{,a} w_{,b} / 2."""
    g = u.grid
    dx, dy = g.op("sx"), g.op("sy")
    kx, ky = g.op("ksx"), g.op("ksy")
    u1, u2, w = g.flat(u.u1), g.flat(u.u2), g.flat(u.w)
    wx, wy = kx @ w, ky @ w
    vals = np.empty((g.nx, g.ny, 2, 2))
    vals[..., 0, 0] = g.unflat(dx @ u1 + 0.5 * wx * wx)
    vals[..., 1, 1] = g.unflat(dy @ u2 + 0.5 * wy * wy)
    vals[..., 0, 1] = g.unflat(0.5 * (dy @ u1 + dx @ u2) + 0.5 * wx * wy)
    vals[..., 1, 0] = vals[..., 0, 1]
    return TensorField2x2(g, vals, symmetric=True)


def bending_strain(u: DisplacementField) -> TensorField2x2:
    """kappa_ab = -w_{,ab}; independent of the in-plane components."""
    g = u.grid
    w = g.flat(u.w)
    hxy = g.unflat(g.op("kxy") @ w)
    return TensorField2x2.from_components(
        g, -g.unflat(g.op("kxx") @ w), -hxy, -g.unflat(g.op("kyy") @ w)
    )


def energy(u: DisplacementField, material: PlateMaterial, loads: PlateLoads) -> EnergyBreakdown:
    model = plate_model(u.grid, material)
    return model.energy(u.flat(), loads)


def energy_gradient(u: DisplacementField, material: PlateMaterial, loads: PlateLoads) -> DisplacementField:
    """Exact gradient of the discrete energy; clamped DOFs zeroed."""
    model = plate_model(u.grid, material)
    return DisplacementField.from_flat(u.grid, model.gradient(u.flat(), loads))
