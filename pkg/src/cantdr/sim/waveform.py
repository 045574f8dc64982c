"""Sampled port voltages and batches of repeated captures, plus their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping

import numpy as np


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Waveform:
    """Voltage trace; sample ``i`` is taken at time ``i * dt``, the pulse at ``t0``."""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    @property
    def t0_index(self) -> int:
        """Number of samples strictly before the injection instant."""
        return int(np.ceil(self.t0 / self.dt - 1e-9))

    def with_samples(self, samples) -> "Waveform":
        return Waveform(self.t0, self.dt, samples)

    def compatible(self, other: "Waveform") -> bool:
        return (len(self) == len(other) and np.isclose(self.dt, other.dt, rtol=1e-9, atol=0)
                and np.isclose(self.t0, other.t0, rtol=0, atol=1e-3 * self.dt))


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    captures: tuple[Waveform, ...]

    def __post_init__(self):
        object.__setattr__(self, "captures", tuple(self.captures))
        if self.captures:
            first = self.captures[0]
            for w in self.captures[1:]:
                if not first.compatible(w):
                    raise ValueError("captures differ in t0, dt or length")

    def __len__(self) -> int:
        return len(self.captures)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return MeasurementSeries(self.captures[item])
        return self.captures[item]

    @classmethod
    def from_array(cls, t0: float, dt: float, data: np.ndarray) -> "MeasurementSeries":
        """Build from an ``(n_captures, n_samples)`` array."""
        return cls(tuple(Waveform(t0, dt, row) for row in np.atleast_2d(data)))

    def as_array(self) -> np.ndarray:
        return np.stack([w.samples for w in self.captures])

    @property
    def t0(self) -> float:
        return self.captures[0].t0

    @property
    def dt(self) -> float:
        return self.captures[0].dt


def average(series: MeasurementSeries) -> Waveform:
    """Pointwise arithmetic mean of all captures."""
    if len(series) == 0:
        raise ValueError("cannot average an empty series")
    first = series.captures[0]
    data = series.as_array()
    # averaging deviations from the first capture keeps identical captures exact
    return first.with_samples(data[0] + (data - data[0]).mean(axis=0))


# --- CSV interchange --------------------------------------------------------

def _header_lines(meta: Mapping[str, object] | None) -> list[str]:
    meta = dict(meta or {})
    return [f"# {k}: {v}" for k, v in meta.items()]


def write_series_csv(path_or_buf, series: MeasurementSeries | Waveform,
                     meta: Mapping[str, object] | None = None) -> None:
    """Write one waveform (``time_s,voltage_v``) or a series (``time_s,capture_i...``).

    ``t0`` is always recorded in the comment header so files round-trip.
    """
    if isinstance(series, Waveform):
        header = ["time_s", "voltage_v"]
        cols = [series.samples]
        ref = series
    else:
        header = ["time_s"] + [f"capture_{i}" for i in range(len(series))]
        cols = [w.samples for w in series.captures]
        ref = series.captures[0]
    meta = {"t0_s": repr(ref.t0), "dt_s": repr(ref.dt), **dict(meta or {})}
    times = ref.times
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        for line in _header_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        data = np.column_stack([times] + cols)
        for row in data:
            writer.writerow([repr(float(x)) for x in row])
    finally:
        if own:
            fh.close()


def read_csv_with_meta(path_or_buf) -> tuple[dict[str, str], list[str], np.ndarray]:
    """Return (comment metadata, column names, data matrix)."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, encoding="utf-8") if own else path_or_buf
    try:
        text = fh.read()
    finally:
        if own:
            fh.close()
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError("CSV has no header row")
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = next(reader)
    rows = [[float(x) for x in row] for row in reader]
    if not rows:
        raise ValueError("CSV has no data rows")
    data = np.array(rows, dtype=float)
    if data.shape[1] != len(header):
        raise ValueError("ragged CSV rows")
    return meta, header, data


def read_series_csv(path_or_buf) -> MeasurementSeries:
    """Read either CSV layout back into a MeasurementSeries."""
    meta, header, data = read_csv_with_meta(path_or_buf)
    if header[0] != "time_s" or len(header) < 2:
        raise ValueError("expected a time_s column followed by voltage columns")
    times = data[:, 0]
    if len(times) > 1:
        dt = float(meta.get("dt_s", times[1] - times[0]))
        steps = np.diff(times)
        if not np.allclose(steps, dt, rtol=1e-6, atol=0):
            raise ValueError("time column is not uniformly sampled")
    elif "dt_s" in meta:
        dt = float(meta["dt_s"])
    else:
        raise ValueError("single-row CSV needs a dt_s header")
    t0 = float(meta.get("t0_s", times[0]))
    return MeasurementSeries.from_array(t0, dt, data[:, 1:].T)


def read_waveform_csv(path_or_buf) -> Waveform:
    series = read_series_csv(path_or_buf)
    if len(series) != 1:
        raise ValueError(f"expected one voltage column, found {len(series)}")
    return series.captures[0]

