"""Uncertainty-aware Kalman inference and Thompson-sampling active search.

A simulator for teams of agents locating sparse targets on a grid from
observations corrupted by both detection noise (distance-dependent label
noise) and location noise (radial cell swaps), with a Gaussian posterior
that models both effects in its measurement-noise covariance.
"""

from .baseline_lu import GaussianTrack, LuState, lu_associate, lu_estimate, lu_update_track
from .environment import (
    GroundTruth,
    Measurement,
    NoiseParams,
    apply_location_noise,
    make_ground_truth,
    sample_detection_noise,
    sense,
)
from .errors import ConfigError, NumericalError
from .experiments import ExperimentConfig, RecoveryCurve, emit_csv, run_experiment, run_sweep
from .geometry import (
    CellCoord,
    FieldOfView,
    GridSpec,
    Heading,
    Pose,
    SensingAction,
    compute_fov,
    flatten,
    polar_about_agent,
    projection_distance,
    unflatten,
)
from .inference import (
    Belief,
    MeasurementNoiseCov,
    UncertaintyField,
    build_sigma_z,
    initial_belief,
    kf_update,
    recovered_support,
    threshold_observation,
    uncertainty_field,
    unik_step,
)
from .policy import (
    ActionSpace,
    random_action,
    reward_exact,
    reward_frobenius,
    sample_posterior,
    select_action,
)
from .runtime import (
    AgentState,
    CommModel,
    DurationDist,
    LuFilter,
    TrialTrace,
    UnikFilter,
    recovery_status,
    run_episode,
)

__version__ = "0.1.0"
