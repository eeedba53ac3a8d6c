"""Exact latent-state inference for hidden continuous-time semi-Markov chains."""
from . import kernels
from .adaptive import AdaptiveConfig, AdaptiveResult, adaptive_forward, update_step
from .errors import (
    InferenceError,
    KernelUnavailableError,
    NumericalInstabilityError,
    ResourceBudgetError,
    StateError,
)
from .experiment import ExperimentConfig, generate_random_model, run_experiment
from .hsmm import DiscretizedHSMM, HSMMResult, hsmm_forward_backward
from .memory import ExponentialSumKernel, InstantaneousKernel, memory_kernel, solve_master_equation
from .model import (
    CTSMCModel,
    EmbeddedChain,
    Trajectory,
    load_model,
    sample_trajectory,
    save_model,
    state_at,
    states_at,
    steady_state_ctmc,
    validate_model,
)
from .observation import (
    EmissionModel,
    ObservationSet,
    ScaledLikelihood,
    read_observations_csv,
    sample_observations,
    upsilon,
    write_observations_csv,
)
from .posterior import (
    ChainLengthPosterior,
    SmoothedResult,
    TruncationError,
    ViterbiResult,
    chain_length_posterior,
    rescore_path,
    smooth,
    viterbi_map,
)
from .volterra import (
    BackwardResult,
    BoundaryCondition,
    ForwardResult,
    GridFunction,
    Initial,
    Terminal,
    backward_pass,
    boundary_inhomogeneity,
    forward_pass,
)
from .waiting import Exponential, Gamma, WaitingTime, Weibull, evaluate, interval_integral, mean_waiting

__version__ = "0.1.0"
