"""TDR simulation: FDTD solver, ray-tracing oracle and capture modelling."""
from .bounce import OracleScopeError, bounce_oracle
from .capture import add_noise, capture_series, noisy_captures, superimpose_can_traffic
from .fdtd import SnappingError, StabilityError, simulate_tdr
from .pulse import PulseSpec, SimConfig
from .waveform import (MeasurementSeries, Waveform, average, read_series_csv,
                       read_waveform_csv, write_series_csv)

__all__ = [
    "MeasurementSeries", "OracleScopeError", "PulseSpec", "SimConfig", "SnappingError",
    "StabilityError", "Waveform", "add_noise", "average", "bounce_oracle", "capture_series",
    "noisy_captures", "read_series_csv", "read_waveform_csv", "simulate_tdr",
    "superimpose_can_traffic", "write_series_csv",
]
