"""Nonlinear plate/shell energy minimization with dual global-optimality
certificates."""

__version__ = "0.1.0"

from .grid import (
    Grid,
    ScalarField,
    TensorField2x2,
    VectorField2,
    build_grid,
    diff,
    div_tensor,
    div_vec,
    integrate,
)
from .model import DiscreteModel, DisplacementField, EnergyBreakdown, Loads
from .plate import (
    PlateLoads,
    PlateMaterial,
    bending_strain,
    build_material,
    energy,
    energy_gradient,
    membrane_strain,
    plate_model,
)
from .loads import build_t0_plate, build_t0_shell, build_t_tilde, min_norm_div_solve
from .solver import MinimizeResult, coercivity_probe, linear_solution, minimize, solve
from .dual import (
    DualCertificate,
    ShiftedMembrane,
    check_A1_A2,
    check_A4,
    conjugate_F,
    conjugate_G,
    dual_value,
    duality_gap,
    extract_certificate,
    shift_membrane,
)
from .shell import (
    ShellMaterial,
    ShellStrains,
    SurfaceGeometry,
    build_geometry,
    shell_energy,
    shell_material,
    shell_model,
    shell_strains,
    surface_catalogue,
)
