from .dft import dft, idft
from .extract import (
    DegradedFeatureError,
    FeatureVector,
    JitterReferenceSet,
    extract,
    impulse_energy,
    jitter_feature,
    mean_rtt_large,
)
from .ks import ks_statistic, ks_two_sample, ks_two_sample_logp

__all__ = [
    "DegradedFeatureError",
    "FeatureVector",
    "JitterReferenceSet",
    "dft",
    "extract",
    "idft",
    "impulse_energy",
    "jitter_feature",
    "ks_statistic",
    "ks_two_sample",
    "ks_two_sample_logp",
    "mean_rtt_large",
]
