"""Flow-velocity metrology for diffusion-advection molecular channels."""

from .channel import (
    ConstantFlow,
    PiecewiseConstantFlow,
    SamplingSchedule,
    SystemParams,
    impulse_response,
    impulse_response_no_flow,
    mean_count,
    mean_count_time_derivative,
    particle_oracle_mean_count,
    sample_observations,
)
from .detector import HypothesisSet

__version__ = "0.1.0"
