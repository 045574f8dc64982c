"""Noisy repeated captures and bus-traffic overlays."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..topology import Topology
from .fdtd import simulate_tdr
from .pulse import PulseSpec, SimConfig
from .waveform import MeasurementSeries, Waveform


def capture_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Per-capture seed, independent of how captures are scheduled."""
    return np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def add_noise(w: Waveform, sigma: float, seed) -> Waveform:
    """Add white Gaussian noise of standard deviation ``sigma`` volts."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return w
    rng = np.random.default_rng(seed)
    return w.with_samples(w.samples + rng.normal(0.0, sigma, size=len(w)))


def noisy_captures(clean: Waveform, sigma: float, base_seed: int, n: int,
                   start: int = 0) -> MeasurementSeries:
    """``n`` noisy copies of *clean*, capture ``i`` seeded by (base_seed, start + i)."""
    if n < 1:
        raise ValueError("need at least one capture")
    return MeasurementSeries(tuple(
        add_noise(clean, sigma, capture_seed(base_seed, start + i)) for i in range(n)))


def capture_series(topology: Topology, pulse: PulseSpec, config: SimConfig, n: int,
                   clean: Waveform | None = None) -> MeasurementSeries:
    """Simulate once, then draw ``n`` captures with ``config.noise_sigma`` noise.

    Pass a precomputed noise-free ``clean`` trace to skip the simulation.
    """
    if n < 1:
        raise ValueError("need at least one capture")
    if clean is None:
        clean = simulate_tdr(topology, pulse, config)
    return noisy_captures(clean, config.noise_sigma, config.rng_seed, n)


def superimpose_can_traffic(w: Waveform, bitrate: float, pattern: Sequence[int],
                            dominant_level: float, start: float = 0.0) -> Waveform:
    """Overlay a differential CAN bit stream on a capture.

    Bit ``k`` occupies ``[start + k/bitrate, start + (k+1)/bitrate)`` in capture
    time. CAN logic applies: ``0`` is dominant (bus driven to
    ``dominant_level``), ``1`` is recessive (bus at rest). Outside the pattern
    the bus is recessive.
    """
    if not bitrate > 0:
        raise ValueError("bitrate must be positive")
    bits = np.asarray(pattern, dtype=int)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("pattern must contain only 0 and 1")
    k = np.floor((w.times - start) * bitrate + 1e-9).astype(int)
    inside = (k >= 0) & (k < bits.size)
    dominant = np.zeros(len(w), dtype=bool)
    dominant[inside] = bits[k[inside]] == 0
    return w.with_samples(w.samples + dominant_level * dominant)
