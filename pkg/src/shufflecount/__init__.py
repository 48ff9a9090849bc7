"""Pure-DP binary counting in the shuffle model, with compositions and audits."""

from .audit import (
    AuditReport,
    DatasetSummary,
    check_geo_ratio,
    check_poi_ratio,
    crossvalidate_views,
    divergence_audit,
    exact_mean_messages,
    exact_mse,
    exact_view_logpmf,
    measure_comm,
    measure_mse,
    mse_bound,
    view_logpmf_grid,
)
from .composition import (
    HistogramRun,
    RealSumRun,
    TaggedMessage,
    encode_real,
    run_histogram,
    run_real_sum,
    split_budget,
)
from .dist import (
    RandomSource,
    dlap_variance,
    geo_logpmf,
    nb_logpmf,
    poi_logpmf,
    sample_dlap,
    sample_geo,
    sample_nb,
    sample_poi,
)
from .errors import (
    AuditInconclusiveError,
    DegenerateInputError,
    InfeasibleParametersError,
    ParameterError,
)
from .params import (
    ProtocolParams,
    check_condition,
    derive_params,
    minimal_params,
)
from .protocol import (
    Contribution,
    CountingRun,
    View,
    analyze,
    randomize,
    run_counting,
    sample_estimate,
    shuffle,
    view_of,
)

__version__ = "0.1.0"

__all__ = [
    "AuditInconclusiveError",
    "AuditReport",
    "Contribution",
    "CountingRun",
    "DatasetSummary",
    "DegenerateInputError",
    "HistogramRun",
    "InfeasibleParametersError",
    "ParameterError",
    "ProtocolParams",
    "RandomSource",
    "RealSumRun",
    "TaggedMessage",
    "View",
    "analyze",
    "check_condition",
    "check_geo_ratio",
    "check_poi_ratio",
    "crossvalidate_views",
    "derive_params",
    "divergence_audit",
    "dlap_variance",
    "encode_real",
    "exact_mean_messages",
    "exact_mse",
    "exact_view_logpmf",
    "geo_logpmf",
    "measure_comm",
    "measure_mse",
    "minimal_params",
    "mse_bound",
    "nb_logpmf",
    "poi_logpmf",
    "randomize",
    "run_counting",
    "run_histogram",
    "run_real_sum",
    "sample_dlap",
    "sample_estimate",
    "sample_geo",
    "sample_nb",
    "sample_poi",
    "shuffle",
    "split_budget",
    "view_logpmf_grid",
    "view_of",
]
