"""Photon statistics of single-photon emitters from timestamp streams."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CW,
    Acquisition,
    DetectionChainParams,
    DetectionRecord,
    EmitterRates,
    InsufficientDataError,
    PhotonqError,
    Pulsed,
    merge_channels,
    parse_duration,
    partition_windows,
)
