"""Hybrid analog/digital ISAC beamforming with low-resolution DACs."""

from .array_model import (Dictionary, PathParameters, SensingScene, SystemConfig, UserChannel,
                          build_dictionary, channel_from_paths, generate_channel,
                          generate_channels, generate_sensing_snapshot, steering_matrix,
                          steering_vector)
from .beamforming import (HybridBeamformer, design, design_analog, design_baseband,
                          effective_channel, unconstrained_combiner, unconstrained_precoder)
from .evaluation import (Beampattern, LinkMetrics, SweepAxis, SweepResult, fd_benchmark,
                         link_metrics, run_sweep, run_trial, siqnr_per_user, sum_rate,
                         transmit_beampattern)
from .exceptions import (DegenerateChannelError, HandballError, InfeasiblePowerError,
                         SingularScalingError)
from .quantization import (QuantizationModel, aqnm_model, bussgang_model, distortion_factor,
                           quantization_model, quantize)

__version__ = "0.1.0"
