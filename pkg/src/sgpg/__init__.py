"""Tabular stochastic games with random stopping: exact value/gradient
computation, projected and lazy policy-gradient learning, and Nash-policy
classification."""

from .errors import ConfigError, GameValidationError, RuntimeBreach, SgpgError
from .games import (
    GameSpec,
    PolicyProfile,
    builtin_game,
    deterministic_policy,
    load_game,
    load_policy,
    policy_from_flat,
    save_game,
    save_policy,
    uniform_policy,
    validate_game,
    validate_policy,
)
from .exact import (
    GradientBundle,
    MismatchBound,
    ValueReport,
    VisitationReport,
    conversion_expectation,
    gradient_fd,
    jacobian,
    mismatch_coefficient,
    policy_gradient,
    transition_matrix,
    value_report,
    visitation,
)
from .geometry import (
    ProjectionCertificate,
    SosCertificate,
    fos_residual,
    lazy_basin_scores,
    project_policy,
    project_simplex,
    sos_certificate,
    vertex_drift_margin,
)
from .simulate import RngState, Trajectory, mc_functional, sample_batch, sample_episode
from .estimators import (
    GradientSignal,
    NoiseConfig,
    make_signal,
    mix_policy,
    reinforce_estimate,
    reinforce_stats,
)
from .learners import (
    LearnerState,
    RunLog,
    Schedule,
    lpg_step,
    near_init,
    pg_step,
    run_experiment,
    run_many,
    schedule_at,
)
from .analysis import (
    EquilibriumReport,
    RateFit,
    brute_force_deterministic_nash,
    classify_equilibrium,
    detect_finite_convergence,
    fit_rate,
)

__version__ = "0.1.0"
