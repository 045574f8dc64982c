"""The powertrain attack scenario: seven ECUs plus an alien device at 9.86 m."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .sim import MeasurementSeries, PulseSpec, SimConfig, Waveform, noisy_captures, simulate_tdr
from .topology import NodeLoad, Topology, attach_device, parse_topology

ECU_DISTANCES = {
    "EKP": 8.31, "Light": 5.95, "SZL_LWS": 7.05, "DSC": 13.5,
    "ARS": 12.79, "Engine": 4.11, "DME": 8.65,
}
ALIEN_POSITION = 9.86
ALIEN_STUB = 0.1
ALIEN_LABEL = "Alien"
CAPTURE_DURATION = 200e-9


def attack_topology() -> Topology:
    """The powertrain bus without the alien device."""
    text = resources.files("cantdr.data").joinpath("attack_scenario.topo").read_text()
    return parse_topology(text)


def compromised_topology(base: Topology | None = None) -> Topology:
    return attach_device(base or attack_topology(), ALIEN_POSITION, ALIEN_STUB,
                         NodeLoad.transceiver(), ALIEN_LABEL)


def scenario_config(noise_sigma: float = 0.0, seed: int = 0) -> SimConfig:
    """Full-rate FDTD sampling with a fixed capture length shared by all variants."""
    return SimConfig(duration=CAPTURE_DURATION, noise_sigma=noise_sigma, rng_seed=seed)


@dataclass(frozen=True, eq=False)
class ScenarioTraces:
    reference: Waveform
    compromised: Waveform


def scenario_traces(pulse: PulseSpec = PulseSpec(), config: SimConfig | None = None) -> ScenarioTraces:
    config = config or scenario_config()
    base = attack_topology()
    return ScenarioTraces(simulate_tdr(base, pulse, config),
                          simulate_tdr(compromised_topology(base), pulse, config))


def attack_stream(traces: ScenarioTraces, sigma: float, seed: int, n_batches: int,
                  batch_size: int, attach_batch: int | None, attach_offset: int | None = None
                  ) -> MeasurementSeries:
    """Consecutive captures with the alien plugged in part-way through.

    The alien appears ``attach_offset`` captures into batch ``attach_batch``
    (1-based; default mid-batch), so that batch straddles the change. With
    ``attach_batch=None`` the bus stays unchanged throughout.
    """
    total = n_batches * batch_size
    if attach_batch is None:
        switch = total
    else:
        if not 1 <= attach_batch <= n_batches:
            raise ValueError("attach_batch outside the stream")
        offset = batch_size // 2 if attach_offset is None else attach_offset
        switch = (attach_batch - 1) * batch_size + offset
    parts = []
    if switch > 0:
        parts.extend(noisy_captures(traces.reference, sigma, seed, switch).captures)
    if switch < total:
        parts.extend(noisy_captures(traces.compromised, sigma, seed, total - switch, start=switch).captures)
    return MeasurementSeries(tuple(parts))
