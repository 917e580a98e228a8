"""Near-field MIMO radar joint location/velocity estimation toolkit."""

from .geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    PulseConfig,
    TargetState,
    bistatic_delay,
    bistatic_doppler,
    rayleigh_distance,
    subarray_angles,
    subarray_rayleigh,
    unit_vectors,
)
from .circular import VonMisesParam, a_inverse, bessel_ratio, vm_moment, vm_pdf
from .wavefield import (
    ChannelGain,
    NoiseModel,
    SubarraySnapshot,
    doppler_vec,
    set_snr,
    snr_of,
    steering_rx,
    steering_tx,
    synthesize_all,
    synthesize_pair,
)
from .subarray_vbi import CaviOptions, SubarrayPosterior, VbiPriors, run_cavi
from .fusion import (
    AngularMessageSet,
    GaussianEstimate2D,
    PairConfigSet,
    build_messages,
    centralized_location,
    centralized_velocity,
    distributed_location,
    distributed_velocity,
)

__version__ = "0.1.0"
