"""Injected TDR pulse and discretisation settings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
GAUSS_HALF_SPAN = 4.0  # gaussian truncated at +-4 sigma around its centre


@dataclass(frozen=True)
class PulseSpec:
    """Pulse generator settings.

    ``width`` is the 50 %-to-50 % duration of a rectangular pulse or the FWHM
    of a gaussian one. Rectangular edges are raised-cosine ramps of
    ``rise_time`` (0 gives an ideal step, which leaves grid dispersion ringing
    behind). The gaussian is truncated to ``[0, 8 sigma]`` after injection so
    the port stays exactly at rest before ``t0``. ``source_impedance=None``
    means "match the line" and is resolved against the topology at
    simulation time.
    """

    amplitude: float = 1.0
    width: float = 3e-9
    shape: str = "rectangular"
    source_impedance: Optional[float] = None
    rise_time: float = 0.5e-9

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("pulse width must be positive")
        if self.amplitude == 0:
            raise ValueError("pulse amplitude must be nonzero")
        if self.shape not in ("rectangular", "gaussian"):
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.source_impedance is not None and self.source_impedance < 0:
            raise ValueError("source impedance must be non-negative")
        if self.rise_time < 0:
            raise ValueError("rise time must be non-negative")

    @property
    def sigma(self) -> float:
        return self.width * _FWHM_TO_SIGMA

    @property
    def support(self) -> float:
        """Time after injection beyond which the pulse is exactly zero."""
        if self.shape == "rectangular":
            return self.width + self.rise_time
        return 2 * GAUSS_HALF_SPAN * self.sigma

    def __call__(self, tau) -> np.ndarray:
        """Source EMF at time ``tau`` after injection (vectorised)."""
        tau = np.asarray(tau, dtype=float)
        if self.shape == "rectangular":
            r = self.rise_time
            if r == 0:
                return np.where((tau >= 0) & (tau < self.width), self.amplitude, 0.0)
            up = np.clip(tau / r, 0.0, 1.0)
            down = np.clip((self.width + r - tau) / r, 0.0, 1.0)
            ramp = np.minimum(up, down)
            return self.amplitude * (0.5 - 0.5 * np.cos(np.pi * ramp))
        centre = GAUSS_HALF_SPAN * self.sigma
        inside = (tau >= 0) & (tau <= 2 * centre)
        return np.where(inside, self.amplitude * np.exp(-0.5 * ((tau - centre) / self.sigma) ** 2), 0.0)


@dataclass(frozen=True)
class SimConfig:
    """FDTD discretisation and capture settings.

    ``time_step`` and ``duration`` default to ``cfl_factor * dz / v`` and to
    ``t0 + 2 * cable_length / v + 5 * pulse support``. ``decimation`` keeps
    every n-th FDTD sample, emulating a slower oscilloscope.
    """

    spatial_step: float = 0.01
    time_step: Optional[float] = None
    duration: Optional[float] = None
    cfl_factor: float = 0.99
    noise_sigma: float = 0.0
    rng_seed: int = 0
    t0: float = 5e-9
    decimation: int = 1

    def __post_init__(self):
        if not self.spatial_step > 0:
            raise ValueError("spatial_step must be positive")
        if not (0 < self.cfl_factor <= 1):
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if self.time_step is not None and not self.time_step > 0:
            raise ValueError("time_step must be positive")
