"""Adaptive beam and channel tracking for analog-beamformed mmWave links."""

__version__ = "0.1.0"

from .model import (
    ArrayConfig,
    ChannelState,
    DynamicsParams,
    Measurement,
    array_response,
    beamformers,
    channel_matrix,
    evolve,
    g_fn,
    g_fn_derivative,
    measure_clean,
    noise_psd_from_snr,
    observe,
)
from .trackers import (
    BilmsBuffer,
    EkfTracker,
    LmsTracker,
    NumericalFailure,
    StepSizes,
    TrackerDiverged,
    bilms_run,
    ekf_step,
    lms_step,
    measurement_and_jacobian,
)
from .experiments import ExperimentConfig, InitScheme, MseTrace, init_trial, run_experiment, sweep
