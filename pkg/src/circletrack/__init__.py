"""Circular speaker tracking and location-aware diarization.

A von Mises Kalman filter over azimuth, EM estimation of its two
concentrations, and agglomerative clustering of speaker segments with
embedding, SSL-divergence and tracking affinities.
"""

from .circular import (
    KAPPA_MAX,
    VonMises,
    bessel_ratio,
    inv_bessel_ratio,
    log_bessel_i0,
    vm_convolve_approx,
    vm_exact_conv_log_density,
    vm_log_pdf,
    vm_multiply,
    vm_sample,
    wrap_angle,
)
from .tracker import KalmanParams, Measurement, sequence_log_likelihood
from .em import EmConfig, fit
from .ahc import AffinityConfig, cluster
from .sim import SimConfig, simulate_meeting
from .evaluate import hungarian_assign, score

__version__ = "0.1.0"

__all__ = [
    "KAPPA_MAX",
    "VonMises",
    "bessel_ratio",
    "inv_bessel_ratio",
    "log_bessel_i0",
    "vm_convolve_approx",
    "vm_exact_conv_log_density",
    "vm_log_pdf",
    "vm_multiply",
    "vm_sample",
    "wrap_angle",
    "KalmanParams",
    "Measurement",
    "sequence_log_likelihood",
    "EmConfig",
    "fit",
    "AffinityConfig",
    "cluster",
    "SimConfig",
    "simulate_meeting",
    "hungarian_assign",
    "score",
]
