"""Semi-blind inference of directed graph topologies and graph signals.

Estimators
----------
JISG
    Structural equation model: one topology, independent snapshots.
JISGoT
    First-order structural VAR over a time series.
OnlineJISGoT
    Fixed-lag tracker for slowly varying SVAR topologies.
BandlimitedInterpolator
    Known-graph baseline.
"""

from .evalkit import BandlimitedInterpolator
from .graphmodel import (
    KroneckerSpec,
    NoiseSpec,
    ObservationSet,
    SamplingSchedule,
    SignalMatrix,
    TopologyMatrix,
)
from .online import OnlineJISGoT, TrackerConfig
from .sem import JISG, SemConfig, jisg
from .svarm import JISGoT, SvarmConfig, jisgot

__all__ = [
    "BandlimitedInterpolator",
    "JISG",
    "JISGoT",
    "KroneckerSpec",
    "NoiseSpec",
    "ObservationSet",
    "OnlineJISGoT",
    "SamplingSchedule",
    "SemConfig",
    "SignalMatrix",
    "SvarmConfig",
    "TopologyMatrix",
    "TrackerConfig",
    "jisg",
    "jisgot",
]
