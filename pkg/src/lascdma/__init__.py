"""Monte-Carlo simulator and detector library for sparse-spreading
synchronous CDMA with likelihood ascent search (LAS) detection."""

from .channel import ChannelParams, matched_filter, snr_to_sigma, transmit
from .detect import (
    DetectorRun,
    MAX_EXHAUSTIVE_BITS,
    Schedule,
    gml_exhaustive,
    initial_gradient,
    las_run,
    likelihood,
    mf_detect,
    slas_detect,
    write_trace_csv,
    wslas_detect,
)
from .harness import (
    BerEstimate,
    ConfigError,
    ExperimentConfig,
    InfeasibleError,
    SweepResult,
    q_function,
    run_experiment,
    single_user_bound,
    sweep_bk,
    sweep_l,
    sweep_snr,
    wilson_interval,
    write_csv,
)
from .seqgen import (
    CrossCorr,
    SequenceMatrix,
    SparseSequence,
    crosscorrelation,
    dump_matrix,
    gen_sparse_matrix,
    load_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BerEstimate",
    "ChannelParams",
    "ConfigError",
    "CrossCorr",
    "DetectorRun",
    "ExperimentConfig",
    "InfeasibleError",
    "MAX_EXHAUSTIVE_BITS",
    "Schedule",
    "SequenceMatrix",
    "SparseSequence",
    "SweepResult",
    "crosscorrelation",
    "dump_matrix",
    "gen_sparse_matrix",
    "gml_exhaustive",
    "initial_gradient",
    "las_run",
    "likelihood",
    "load_matrix",
    "matched_filter",
    "mf_detect",
    "q_function",
    "run_experiment",
    "single_user_bound",
    "slas_detect",
    "snr_to_sigma",
    "sweep_bk",
    "sweep_l",
    "sweep_snr",
    "transmit",
    "wilson_interval",
    "write_csv",
    "write_trace_csv",
    "wslas_detect",
]
