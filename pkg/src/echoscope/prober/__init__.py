from .core import (
    DEGRADED_LOSS,
    TIMEOUT_FACTOR,
    CalibrationError,
    MatchTable,
    Transport,
    TransportError,
    apply_timeout,
    calibrate_rate,
    compute_response,
    impute_lost,
    probe,
    rate_from_rtt,
)
from .types import EchoResponse, EmptyResponseError, ProbeError, RawProbe

__all__ = [
    "DEGRADED_LOSS",
    "TIMEOUT_FACTOR",
    "CalibrationError",
    "EchoResponse",
    "EmptyResponseError",
    "MatchTable",
    "ProbeError",
    "RawProbe",
    "Transport",
    "TransportError",
    "apply_timeout",
    "calibrate_rate",
    "compute_response",
    "impute_lost",
    "probe",
    "rate_from_rtt",
]
