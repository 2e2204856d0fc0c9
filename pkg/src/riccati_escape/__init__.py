"""Escape times of deterministic and Poisson-switched Riccati differential equations."""

__version__ = "0.1.0"

from .numerics import DimensionError, lambert_w0, matrix_exp, min_singular_value, spectral_norm
from .rde import (
    EscapedBefore,
    EscapeResult,
    NoEscapePossibleFromLinearPart,
    RiccatiSystem,
    delta_step,
    escape_profile,
    escape_time,
    escape_times,
    flow,
    rde_rhs,
    step_sequence,
)
from .grassmann import (
    OFF_CHART,
    ProjectiveAngle,
    SubspacePoint,
    build_net,
    chart_embed,
    chart_retract,
    grassmann_distance,
)
from .mean_escape import (
    Assumption1Violation,
    ChartGrid,
    PoissonLaw,
    SwitchedSystem,
    TransferMatrices,
    apply_M,
    build_transfer_matrices,
    check_bounded,
    g_value,
    make_grid,
    solve_power_series,
    solve_transfer,
)
from .montecarlo import EscapeSample, EstimatorReport, estimate_mean_escape, simulate_escape
from .systems import quadratic_growth, rotation, rotation_switch, three_dim_vector
