"""Grid graph signal processing: a physics-derived real shift operator for
multi-phase networks, with filtering, sensor placement, state estimation and
forecasting, and reinforcement-learning voltage control on top of an exact
power-flow oracle."""

from . import autodiff, forecasting, grid_model, gso, gsp, nn, sampling, voltvar
from .grid_model import (
    GridCase,
    InverterSpec,
    LineBranch,
    NodeIndex,
    OperatingPoint,
    assemble_admittance,
    compute_injections,
    load_case,
    solve_power_flow,
)
from .gso import (
    GammaMatrices,
    RealGso,
    ReducedGso,
    build_real_gso,
    gamma_matrices,
    kron_reduce,
    linearized_injections,
    recenter_phases,
)
from .gsp import (
    GftBasis,
    PolynomialFilter,
    SpatioTemporalFilter,
    apply_filter,
    apply_st_filter,
    gft,
)
from .nn import GcnModel, GrnModel, gcn_forward, grn_forward
from .sampling import build_measurement_model, place_pmus, recover_state
from .voltvar import PpoConfig, VoltVarEnv, VoltVarPolicy, ppo_train, reactive_limit

__version__ = "0.1.0"
