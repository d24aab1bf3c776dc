"""contagion-lab: dynamic default contagion in interbank networks.

Finite-network simulator with endogenous early defaults and instantaneous
cascade resolution, a mean-field density solver for the large-system limit,
and a harness demonstrating the convergence between the two.
"""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError
from .feedback import FeedbackSpec
from .network import (
    BlockSpec,
    LiabilityNetwork,
    NoiseSpec,
    PeripheryGroup,
    RankFactorization,
    TypeAtlas,
    apply_noise,
    atlas_from_labels,
    build_block_matrix,
    effective_exposures,
    interaction_matrix,
    net_liability,
    rank_factorize,
    scale_network,
)
from .finite_sim import (
    BankParams,
    CascadeReport,
    PiecewiseConstant,
    SimConfig,
    SystemState,
    Trajectory,
    bank_params_from_network,
    capital,
    empirical_losses,
    greatest_clearing_oracle,
    resolve_cascade,
    simulate,
    theta_shift,
    to_distance,
    xi_map,
)
from .mean_field import (
    DecayFit,
    DensityField,
    MeanFieldSolver,
    MFCascadeResult,
    MFConfig,
    MFOutput,
    MixtureSpec,
    TypeSpec,
    check_initial_decay,
    init_density,
    boundary_asset_value,
    loss_from_density,
    mixture_from_atlas,
    picard_solve,
    solve,
)
from .rngstreams import CommonNoisePath, brownian_common_path, philox_stream
