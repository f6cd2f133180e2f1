"""Monte-Carlo simulation and downlink power control for cell-free and
user-centric massive MIMO networks.

The pipeline: random drops (:mod:`cfmimo.geometry`), three-slope path loss
with correlated shadowing and Rayleigh fading (:mod:`cfmimo.channel`),
uplink pilot-matched channel estimation (:mod:`cfmimo.training`),
channel-inversion precoding and log-det rates (:mod:`cfmimo.linkmodel`),
block-alternating sum-rate / max-min power optimizers (:mod:`cfmimo.slbm`)
and a seeded experiment harness with CSV output (:mod:`cfmimo.harness`).
"""

__version__ = "0.1.0"

from .config import OptimizerOptions, SystemConfig, make_config, parse_config_file
from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    SingularChannelError,
)
from .geometry import ClusterMap, Scenario, drop_scenario, select_clusters
from .channel import (
    ChannelSet,
    LargeScale,
    cost_hata_constant,
    draw_channels,
    large_scale_from_scenario,
    large_scale_gain,
    path_loss_db,
    shadow_fields,
)
from .training import PilotBook, PilotObservation, make_pilots, pm_estimate, receive_pilots
from .linkmodel import (
    LinkGains,
    PowerMatrix,
    RateReport,
    all_user_rates,
    build_link_gains,
    composite_gain,
    effective_gain,
    grad_g2,
    precoder,
    rate_dc_parts,
    rate_lower_bound,
    stream_selector,
    user_rate,
)
from .slbm import (
    BlockContext,
    BoundReport,
    OptTrace,
    RateContext,
    optimize_maxmin,
    optimize_sumrate,
    project_capped_simplex,
    solve_subproblem_maxmin,
    solve_subproblem_sumrate,
    verify_bound_properties,
)
from .harness import (
    ExperimentResult,
    TrialResult,
    derive_trial_seed,
    emit_rate_cdf,
    emit_sumrate_curve,
    run_experiment,
    run_trial,
)
