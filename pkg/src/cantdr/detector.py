"""Reference calibration, alien-device detection, localisation and the method benchmark."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import analysis
from .sim.waveform import MeasurementSeries, Waveform, average
from .topology import DEFAULT_VELOCITY

METHODS = ("mse", "xcorr", "rqcc", "coherence_k")
METHOD_NAMES = {
    "mse": "Mean Square Error",
    "xcorr": "Correlation Analysis",
    "rqcc": "RQCC",
    "coherence_k": "Coherence Analysis",
}


@dataclass(frozen=True)
class ThresholdPolicy:
    """``fixed(value)`` or ``baseline_max_plus(margin)``."""

    kind: str = "baseline_max_plus"
    value: float = 0.01

    def __post_init__(self):
        if self.kind not in ("fixed", "baseline_max_plus"):
            raise ValueError(f"unknown threshold policy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "ThresholdPolicy":
        """Parse ``fixed:0`` or ``baseline_max_plus:0.01``."""
        kind, _, value = text.partition(":")
        return cls(kind.strip(), float(value) if value else (0.0 if kind == "fixed" else 0.01))

    def __str__(self) -> str:
        return f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class CalibrationConfig:
    """Calibration, analysis and localisation settings.

    Window and Welch segment are in samples; the defaults (2048 / 512) span
    roughly 100 ns / 25 ns at the default FDTD step of 49.5 ps. Coherence bins
    whose power does not exceed ``noise_floor_factor`` times the expected
    noise density of an ``n_average`` batch are treated as carrying no
    evidence; set it to 0 to fall back to the purely relative floor.
    Before localisation both traces pass through a moving average spanning
    ``locate_smoothing`` seconds, which lowers the onset gate accordingly.
    """

    n_reference: int = 300
    n_average: int = 30
    window_length: int = 2048
    threshold_policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    segment_len: int = 512
    overlap: float = 0.5
    taper: str = "hann"
    peak_threshold: float = 0.2
    noise_floor_factor: float = 20.0
    rqcc_order: float = 1.0
    velocity: float = DEFAULT_VELOCITY
    k_sigma: float = 5.0
    hold: int = 5
    level_gate_sigma: float = 5.0
    dominant_level: float = 2.0
    bit_time: float = 2e-6
    locate_smoothing: float = 0.5e-9

    def __post_init__(self):
        if not self.n_reference >= self.n_average >= 1:
            raise ValueError("need n_reference >= n_average >= 1")
        if self.window_length < 2 * self.segment_len:
            raise ValueError("window_length must be at least twice the Welch segment length")
        if self.velocity <= 0:
            raise ValueError("velocity must be positive")

    def with_overrides(self, **kw) -> "CalibrationConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    reference_waveform: Waveform
    noise_sigma_estimate: float
    baseline_scores: tuple[float, ...]
    threshold: float
    n_captures: int = 0
    method_thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "baseline_scores", tuple(self.baseline_scores))
        object.__setattr__(self, "method_thresholds", dict(self.method_thresholds))
        if self.noise_sigma_estimate < 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass(frozen=True)
class DetectionReport:
    scores: dict
    alien_present: bool
    estimated_distance: Optional[float]
    window_origin: int
    contaminated: bool
    onset_time: Optional[float] = None

    def to_text(self) -> str:
        dist = "absent" if self.estimated_distance is None else f"{self.estimated_distance:.4f}"
        lines = [f"{m}: {self.scores[m]!r}" for m in METHODS]
        lines += [
            f"alien_present: {str(self.alien_present).lower()}",
            f"estimated_distance_m: {dist}",
            f"window_origin: {self.window_origin}",
            f"contaminated: {str(self.contaminated).lower()}",
        ]
        return "\n".join(lines) + "\n"

    CSV_HEADER = "timestamp,k_score,mse,xcorr,rqcc,alien,distance_m,contaminated"

    def to_csv_row(self, timestamp) -> str:
        dist = "" if self.estimated_distance is None else repr(self.estimated_distance)
        s = self.scores
        return ",".join([
            str(timestamp), repr(s["coherence_k"]), repr(s["mse"]), repr(s["xcorr"]),
            repr(s["rqcc"]), str(int(self.alien_present)), dist, str(int(self.contaminated)),
        ])


# --- scoring -----------------------------------------------------------------

def coherence_floor(noise_sigma: float, dt: float, config: CalibrationConfig) -> Optional[float]:
    """Product floor for Pxx*Pyy derived from the batch noise level, or None."""
    if config.noise_floor_factor <= 0 or noise_sigma <= 0:
        return None
    level = analysis.white_noise_density(noise_sigma / math.sqrt(config.n_average), dt)
    return (config.noise_floor_factor * level) ** 2


def compare(reference: Waveform, actual: Waveform, config: CalibrationConfig,
            noise_sigma: float = 0.0) -> tuple[dict, int, analysis.CoherenceResult]:
    """All four scores on the window around the largest difference."""
    length = min(config.window_length, len(reference))
    ref_w, act_w = analysis.extract_window(reference, actual, length)
    seg = min(config.segment_len, length // 2)
    res = analysis.extended_coherence(
        ref_w, act_w, segment_len=seg, overlap=config.overlap, taper=config.taper,
        peak_threshold=config.peak_threshold,
        floor=coherence_floor(noise_sigma, reference.dt, config))
    try:
        r = analysis.xcorr_score(act_w, ref_w)
    except ValueError:
        r = 1.0 if np.array_equal(act_w.samples, ref_w.samples) else 0.0
    scores = {
        "mse": analysis.mse(act_w, ref_w),
        "xcorr": r,
        "rqcc": analysis.rqcc(act_w, ref_w, config.rqcc_order),
        "coherence_k": res.score_k,
    }
    return scores, ref_w.origin_index, res


def method_verdicts(scores: dict, model: ReferenceModel) -> dict:
    """Per-method change verdicts against the calibrated thresholds."""
    th = model.method_thresholds
    return {
        "mse": scores["mse"] > th.get("mse", 0.0),
        "xcorr": scores["xcorr"] < th.get("xcorr", 1.0),
        "rqcc": scores["rqcc"] > th.get("rqcc", 0.0),
        "coherence_k": scores["coherence_k"] > model.threshold,
    }


# --- calibration and detection ----------------------------------------------

def calibrate(reference_series: MeasurementSeries, config: CalibrationConfig = CalibrationConfig()) -> ReferenceModel:
    """Average the reference captures and derive the K detection threshold.

    Baseline scores compare the full average against every disjoint
    ``n_average`` batch of the same captures.
    """
    n = len(reference_series)
    if n < config.n_reference:
        raise ValueError(f"calibration needs {config.n_reference} captures, got {n}")
    data = reference_series.as_array()
    # deviations from the first capture keep identical captures exact
    dev = data - data[0]
    ref = reference_series.captures[0].with_samples(data[0] + dev.mean(axis=0))
    sigma = float(np.sqrt(np.mean(dev.var(axis=0, ddof=1)))) if n > 1 else 0.0

    baseline = {m: [] for m in METHODS}
    for b in range(n // config.n_average):
        chunk = dev[b * config.n_average:(b + 1) * config.n_average]
        scores, _, _ = compare(ref, ref.with_samples(data[0] + chunk.mean(axis=0)), config, sigma)
        for m in METHODS:
            baseline[m].append(scores[m])

    ks = baseline["coherence_k"]
    policy = config.threshold_policy
    if policy.kind == "fixed":
        threshold = policy.value
    else:
        threshold = max(ks, default=0.0) + policy.value
    method_thresholds = {
        "mse": max(baseline["mse"], default=0.0),
        "rqcc": max(baseline["rqcc"], default=0.0),
        "xcorr": min(baseline["xcorr"], default=1.0),
    }
    return ReferenceModel(ref, sigma, tuple(ks), float(threshold), n, method_thresholds)


def difference_sigma(model: ReferenceModel, config: CalibrationConfig) -> float:
    """Noise std of (batch average - reference average)."""
    n_ref = max(model.n_captures, 1)
    return model.noise_sigma_estimate * math.sqrt(1.0 / config.n_average + 1.0 / n_ref)


def detect(model: ReferenceModel, actual_series: MeasurementSeries,
           config: CalibrationConfig = CalibrationConfig()) -> DetectionReport:
    """Score the latest ``n_average`` captures against the reference model."""
    if len(actual_series) < config.n_average:
        raise ValueError(f"detection needs {config.n_average} captures, got {len(actual_series)}")
    ref = model.reference_waveform
    batch = actual_series[len(actual_series) - config.n_average:]
    if not ref.compatible(batch.captures[0]):
        raise ValueError("actual captures are sampled differently from the reference")

    gate = max(config.level_gate_sigma * model.noise_sigma_estimate,
               1e-3 * float(np.max(np.abs(ref.samples))))
    contaminated = any(
        activity_guard(w, w.t0_index, gate, config.dominant_level, config.bit_time) == "contaminated"
        for w in batch.captures)

    act = average(batch)
    scores, origin, _ = compare(ref, act, config, model.noise_sigma_estimate)
    alien = scores["coherence_k"] > model.threshold and not contaminated
    distance = onset = None
    if alien:
        m = max(1, int(round(config.locate_smoothing / ref.dt)))
        sigma = difference_sigma(model, config) / math.sqrt(m)
        onset = change_onset(smooth(ref, m), smooth(act, m), sigma, config.k_sigma, config.hold)
        if onset is not None:
            distance = config.velocity * (onset - ref.t0) / 2
    return DetectionReport(scores, alien, distance, origin, contaminated, onset)


def detect_stream(model: ReferenceModel, series: MeasurementSeries,
                  config: CalibrationConfig = CalibrationConfig()) -> list[DetectionReport]:
    """Detect on consecutive disjoint ``n_average`` batches; a trailing partial batch is ignored."""
    n = config.n_average
    return [detect(model, series[b * n:(b + 1) * n], config) for b in range(len(series) // n)]


def smooth(w: Waveform, n: int) -> Waveform:
    """Centred moving average over ``n`` samples (zero-padded at the ends)."""
    if n <= 1:
        return w
    return w.with_samples(np.convolve(w.samples, np.ones(n) / n, mode="same"))


def change_onset(reference: Waveform, actual: Waveform, noise_sigma: float,
                 k_sigma: float = 5.0, hold: int = 5) -> Optional[float]:
    """Earliest time at which |actual - reference| stays above the gate for ``hold`` samples.

    Differences before the injection instant are ignored, since no reflection
    can precede the pulse.
    """
    if not reference.compatible(actual):
        raise ValueError("waveforms differ in sampling")
    if hold < 1:
        raise ValueError("hold must be at least one sample")
    diff = np.abs(actual.samples - reference.samples)
    gate = max(k_sigma * noise_sigma, 1e-9 * float(np.max(np.abs(reference.samples))))
    above = diff > gate
    above[:reference.t0_index] = False
    if hold > 1:
        run = np.convolve(above.astype(int), np.ones(hold, dtype=int), mode="valid")
        starts = np.flatnonzero(run == hold)
    else:
        starts = np.flatnonzero(above)
    if starts.size == 0:
        return None
    return float(starts[0] * reference.dt)


def locate_change(reference: Waveform, actual: Waveform, velocity: float, noise_sigma: float,
                  k_sigma: float = 5.0, hold: int = 5) -> Optional[float]:
    """One-way cable distance to the earliest reflection change, or None."""
    if velocity <= 0:
        raise ValueError("velocity must be positive")
    onset = change_onset(reference, actual, noise_sigma, k_sigma, hold)
    if onset is None:
        return None
    return velocity * (onset - reference.t0) / 2


def activity_guard(w: Waveform, quiet_prefix: int, level_gate: float,
                   dominant_level: float = 2.0, bit_time: float = 2e-6,
                   min_plateau: float = 10e-9) -> str:
    """Flag captures overlaid by CAN traffic.

    Contaminated when a pre-pulse sample exceeds ``level_gate``, or when the
    trace sits at or beyond half the dominant level for a whole bit time. A
    plateau cut off by the end of the capture counts once it lasts
    ``min_plateau``, since captures are far shorter than one bit.
    """
    if not 0 <= quiet_prefix < len(w):
        raise ValueError("quiet_prefix must lie inside the capture")
    x = w.samples
    if quiet_prefix and np.max(np.abs(x[:quiet_prefix])) > level_gate:
        return "contaminated"
    high = np.abs(x) >= 0.5 * abs(dominant_level)
    if not high.any():
        return "clean"
    edges = np.diff(np.concatenate(([0], high.astype(int), [0])))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        duration = (b - a) * w.dt
        if duration >= bit_time or (b == len(x) and duration >= min(min_plateau, bit_time)):
            return "contaminated"
    return "clean"


# --- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkTable:
    labels: tuple[str, ...]
    trials: int
    detections: dict  # method -> tuple of counts per label

    def verdict(self, method: str, label: str) -> str:
        count = self.detections[method][self.labels.index(label)]
        if count == self.trials:
            return "✓"
        return "(✓)" if count > 0 else "-"

    def rate(self, method: str, label: str) -> float:
        return self.detections[method][self.labels.index(label)] / self.trials

    def render(self) -> str:
        width = max([len(n) for n in METHOD_NAMES.values()])
        cols = [max(len(lb), 12) for lb in self.labels]
        head = " " * width + "".join(f" | {lb:^{c}}" for lb, c in zip(self.labels, cols))
        lines = [head, "-" * len(head)]
        for m in METHODS:
            cells = "".join(
                f" | {self.verdict(m, lb) + f' {self.rate(m, lb):4.0%}':^{c}}"
                for lb, c in zip(self.labels, cols))
            lines.append(f"{METHOD_NAMES[m]:<{width}}{cells}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["method," + ",".join(f"{lb}_verdict,{lb}_rate" for lb in self.labels)]
        for m in METHODS:
            rows.append(m + "," + ",".join(
                f"{self.verdict(m, lb)},{self.rate(m, lb)!r}" for lb in self.labels))
        return "\n".join(rows) + "\n"


def benchmark_methods(topology, labels: Sequence[str], trials: int, pulse=None, sim_config=None,
                      calibration: CalibrationConfig = CalibrationConfig(),
                      noise_sigma: Optional[float] = None, seed: int = 0) -> BenchmarkTable:
    """Remove each labelled ECU in turn and count per-method detections over ``trials``.

    Every trial draws a fresh reference series, calibrates on it and scores
    one ``n_average`` batch from each reduced topology. Noise-free traces are
    simulated once per topology and reused.
    """
    from .sim import PulseSpec, SimConfig, noisy_captures, simulate_tdr
    from .topology import remove_device

    labels = tuple(labels)
    for lb in labels:
        if lb not in topology.labels:
            raise KeyError(f"unknown ECU label {lb!r}")
    if trials < 1:
        raise ValueError("need at least one trial")
    pulse = pulse or PulseSpec()
    sim_config = sim_config or SimConfig()
    if sim_config.duration is None:
        from .sim.fdtd import default_duration
        sim_config = replace(sim_config, duration=default_duration(topology, pulse, sim_config))
    sigma = sim_config.noise_sigma if noise_sigma is None else noise_sigma
    counts = {m: [0] * len(labels) for m in METHODS}
    if not labels:
        return BenchmarkTable(labels, trials, {m: () for m in METHODS})

    clean_ref = simulate_tdr(topology, pulse, sim_config)
    clean_removed = [simulate_tdr(remove_device(topology, lb), pulse, sim_config) for lb in labels]
    cal = calibration
    for t in range(trials):
        ref_series = noisy_captures(clean_ref, sigma, seed + 7919 * t, cal.n_reference)
        model = calibrate(ref_series, cal)
        for j, clean in enumerate(clean_removed):
            act = noisy_captures(clean, sigma, seed + 7919 * t + 104729 * (j + 1), cal.n_average)
            scores, _, _ = compare(model.reference_waveform, average(act), cal, model.noise_sigma_estimate)
            for m, hit in method_verdicts(scores, model).items():
                counts[m][j] += int(hit)
    return BenchmarkTable(labels, trials, {m: tuple(v) for m, v in counts.items()})
