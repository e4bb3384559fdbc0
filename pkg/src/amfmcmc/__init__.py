"""Adaptive multi-fidelity Gaussian-process MCMC for Bayesian inverse problems.

The package couples a cheap low-fidelity simulator with an expensive
high-fidelity one through an auto-regressive two-fidelity GP, samples the
resulting surrogate posterior with an archive-based differential-evolution
MCMC, and adaptively refines the surrogate with new simulation batches drawn
from the current posterior.
"""

from .errors import (
    AmfError,
    ConfigError,
    EmptySamplesError,
    InsufficientArchiveError,
    InvalidDataError,
    InvalidTargetError,
    NumericalDegeneracyError,
    PersistenceVersionError,
    SimulatorFailureError,
)
from .gp import (
    FidelityDataset,
    FitConfig,
    GPPrediction,
    KernelParams,
    MFHyperparams,
    MultiFidelityGP,
    assemble_joint_covariance,
    fit,
    fit_multioutput,
    kernel_se,
    multilevel_covariance,
    multilevel_nlml,
    multilevel_predict,
    nlml,
    predict,
    predict_batch,
)
from .inference import (
    AMFConfig,
    AMFState,
    CountingSimulator,
    Measurements,
    PrunePolicy,
    agp_run,
    amf_run,
    log_likelihood,
    log_posterior_exact,
    log_posterior_surrogate,
    make_exact_target,
    make_surrogate_target,
    prune_training,
)
from .io import (
    export_posterior_summary,
    load_gp,
    persist_gp,
    read_trace_csv,
    summarize_posterior,
    write_history_csv,
    write_manifest,
    write_rhat_csv,
    write_trace_csv,
)
from .experiments import figure_names, kde_mode_count, reproduce_figure
from .mcmc import RhatReport, RunResult, SamplerConfig, rhat, rhat_series, run
from .models import (
    ForwardModelPair,
    Problem,
    fidelity_r2,
    make_problem,
    problem_names,
)
from .seeding import substream, substream_seed
from .space import ParameterSpace

__version__ = "0.1.0"
