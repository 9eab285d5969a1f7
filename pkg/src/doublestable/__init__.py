"""Simulation and estimation for the stable-regenerative double-stable model."""

from .errors import NumericalError, ParameterError
from .estimators import (
    BlockScheme,
    ClusterRecord,
    EstimateRecord,
    anticlustering_profile,
    block_exceedance_rate,
    candidate_index_estimate,
    extract_clusters,
    finite_block_constant,
    geometric_gof,
    hit_probability_check,
    macro_block_scheme,
    make_block_scheme,
    pair_hit_exact,
    poisson_dispersion,
    running_max_cdf,
    two_sided_count_identity,
)
from .process import (
    SeriesConfig,
    default_truncation,
    partial_sum,
    sample_limit_point_process,
    sample_limit_sums,
    sample_marginal,
    sample_tail_counts,
    sample_tail_process,
    sample_two_sided_tail,
    simulate_path,
)
from .renewal import (
    RenewalLaw,
    RenewalTables,
    asymptotic_u,
    build_tables,
    load_tables,
    make_renewal_law,
    residual_horizon,
    sample_renewal_path,
    sample_window_set,
    save_tables,
    scaling_b,
    theta_rho,
)
from .streams import stream, streams

__version__ = "0.1.0"
