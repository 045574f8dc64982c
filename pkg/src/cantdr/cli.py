"""``cantdr`` command line: simulate, calibrate, detect, locate, bench, resistance."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import detector as det
from .sim import (MeasurementSeries, PulseSpec, SimConfig, average, capture_series,
                  read_series_csv, simulate_tdr, write_series_csv)
from .sim.waveform import read_csv_with_meta
from .topology import (NodeLoad, TopologyError, attach_device, load_topology, remove_device,
                       total_bus_resistance)
from .units import parse_si


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit status 2)."""


# --- helpers -----------------------------------------------------------------

def _si(text: str) -> float:
    try:
        return parse_si(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_overrides(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--config expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce(cls, name: str, text: str):
    current = getattr(cls(), name)
    if name == "threshold_policy":
        return det.ThresholdPolicy.parse(text)
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(parse_si(text))
    if isinstance(current, str):
        return text
    if text.lower() == "none":
        return None
    return parse_si(text)


def _apply(obj, overrides: dict[str, str], used: set):
    """Return ``obj`` with every override naming one of its fields applied."""
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in overrides.items():
        if key in names:
            try:
                changes[key] = _coerce(type(obj), key, value)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
            used.add(key)
    return dataclasses.replace(obj, **changes)


def _check_used(overrides: dict[str, str], used: set) -> None:
    unknown = sorted(set(overrides) - used)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")


def _require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _load_topo(path: Optional[str]):
    p = _require_file(path, "topology")
    try:
        return load_topology(p), hashlib.sha256(p.read_bytes()).hexdigest()
    except TopologyError as exc:
        raise UsageError(f"{p}: {exc}") from None


def _read_series(path: Optional[str], what: str = "series") -> MeasurementSeries:
    p = _require_file(path, what)
    try:
        return read_series_csv(p)
    except ValueError as exc:
        raise UsageError(f"{p}: {exc}") from None


def _out_path(path: Optional[str]) -> Path:
    if not path:
        raise UsageError("missing --out")
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _format_config(objs) -> str:
    parts = []
    for obj in objs:
        for f in dataclasses.fields(obj):
            parts.append(f"{f.name}={getattr(obj, f.name)}")
    return " ".join(parts)


def _write_text(path: Path, lines: Sequence[str]) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _header(args, extra: dict | None = None) -> dict:
    meta = {"command": args.command, "seed": args.seed}
    meta.update(extra or {})
    return meta


# --- commands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    topo, digest = _load_topo(args.topology)
    out = _out_path(args.out)
    overrides = _parse_overrides(args.config)
    used: set = set()
    pulse = PulseSpec(amplitude=args.pulse_amplitude, width=args.pulse_width, shape=args.pulse_shape,
                      source_impedance=args.source_impedance)
    pulse = _apply(pulse, overrides, used)
    cfg = SimConfig(noise_sigma=args.noise, rng_seed=args.seed, duration=args.duration)
    cfg = _apply(cfg, overrides, used)
    _check_used(overrides, used)
    try:
        if args.remove:
            topo = remove_device(topo, args.remove)
        if args.attach is not None:
            topo = attach_device(topo, args.attach, args.attach_stub, NodeLoad.transceiver(), "Alien")
    except (KeyError, TopologyError) as exc:
        raise UsageError(str(exc).strip('"')) from None

    clean = simulate_tdr(topo, pulse, cfg)
    series = capture_series(topo, pulse, cfg, args.n, clean=clean)
    config_text = _format_config([pulse, cfg])
    meta = _header(args, {"topology_sha256": digest, "n_captures": args.n, "config": config_text})
    write_series_csv(out, series if args.n > 1 else series.captures[0], meta)
    _write_text(_sidecar(out, ".run.txt"), [
        "command: simulate",
        f"topology_path: {args.topology}",
        f"topology_sha256: {digest}",
        f"seed: {args.seed}",
        f"captures: {args.n}",
        f"samples: {len(clean)}",
        f"config: {config_text}",
        f"output: {out}",
    ])
    print(f"wrote {args.n} capture(s) of {len(clean)} samples to {out}")
    return 0


def _calibration_config(args, overrides: dict[str, str]) -> det.CalibrationConfig:
    used: set = set()
    cfg = det.CalibrationConfig()
    if getattr(args, "threshold", None):
        try:
            cfg = dataclasses.replace(cfg, threshold_policy=det.ThresholdPolicy.parse(args.threshold))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        cfg = _apply(cfg, overrides, used)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _check_used(overrides, used)
    return cfg


def model_meta(model: det.ReferenceModel, cfg: det.CalibrationConfig) -> dict:
    th = model.method_thresholds
    return {
        "threshold": repr(model.threshold),
        "threshold_policy": str(cfg.threshold_policy),
        "noise_sigma": repr(model.noise_sigma_estimate),
        "n_captures": model.n_captures,
        "baseline_batches": len(model.baseline_scores),
        "baseline_scores": " ".join(repr(v) for v in model.baseline_scores),
        "mse_threshold": repr(th.get("mse", 0.0)),
        "xcorr_threshold": repr(th.get("xcorr", 1.0)),
        "rqcc_threshold": repr(th.get("rqcc", 0.0)),
    }


def save_model(path: Path, model: det.ReferenceModel, cfg: det.CalibrationConfig, extra: dict) -> None:
    meta = {**extra, **model_meta(model, cfg)}
    write_series_csv(path, model.reference_waveform, meta)


def load_model(path: Optional[str]) -> det.ReferenceModel:
    p = _require_file(path, "model")
    try:
        meta, _, _ = read_csv_with_meta(p)
        wave = read_series_csv(p).captures[0]
        scores = tuple(float(v) for v in meta.get("baseline_scores", "").split())
        return det.ReferenceModel(
            reference_waveform=wave,
            noise_sigma_estimate=float(meta["noise_sigma"]),
            baseline_scores=scores,
            threshold=float(meta["threshold"]),
            n_captures=int(meta.get("n_captures", 0)),
            method_thresholds={k: float(meta[f"{k}_threshold"]) for k in ("mse", "xcorr", "rqcc")
                               if f"{k}_threshold" in meta},
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{p}: not a reference model ({exc})") from None


def cmd_calibrate(args) -> int:
    series = _read_series(args.series)
    out = _out_path(args.out)
    cfg = _calibration_config(args, _parse_overrides(args.config))
    model = det.calibrate(series, cfg)
    meta = _header(args, {"series": args.series, "config": _format_config([cfg])})
    save_model(out, model, cfg, meta)
    block = [f"{k}: {v}" for k, v in model_meta(model, cfg).items()]
    _write_text(_sidecar(out, ".params.txt"), [f"# seed: {args.seed}"] + block)
    print("\n".join(block))
    return 0


def cmd_detect(args) -> int:
    model = load_model(args.model)
    series = _read_series(args.series)
    out = _out_path(args.out)
    cfg = _calibration_config(args, _parse_overrides(args.config))
    reports = det.detect_stream(model, series, cfg)
    if not reports:
        raise ValueError(f"series holds fewer than {cfg.n_average} captures")
    head = [f"# command: detect", f"# seed: {args.seed}", f"# model: {args.model}",
            f"# series: {args.series}", f"# config: {_format_config([cfg])}"]

    blocks = list(head)
    for i, rep in enumerate(reports, start=1):
        blocks.append(f"[batch {i}]")
        blocks.extend(rep.to_text().splitlines())
    _write_text(out, blocks)
    plot = Path(args.plot) if args.plot else _sidecar(out, ".plot.csv")
    _write_text(plot, head + ["batch_index,k_score,threshold,alien"] + [
        f"{i},{rep.scores['coherence_k']!r},{model.threshold!r},{int(rep.alien_present)}"
        for i, rep in enumerate(reports, start=1)])
    _write_text(_sidecar(out, ".rows.csv"), head + [det.DetectionReport.CSV_HEADER] + [
        rep.to_csv_row(i) for i, rep in enumerate(reports, start=1)])
    alarms = sum(r.alien_present for r in reports)
    dirty = sum(r.contaminated for r in reports)
    print(f"{len(reports)} batches, {alarms} alien alarm(s), {dirty} contaminated; threshold {model.threshold:.6g}")
    return 0


def cmd_locate(args) -> int:
    model = load_model(args.model)
    series = _read_series(args.series)
    cfg = _calibration_config(args, _parse_overrides(args.config))
    if args.velocity is not None:
        cfg = dataclasses.replace(cfg, velocity=args.velocity)
    n = min(len(series), cfg.n_average)
    act = average(series[len(series) - n:])
    ref = model.reference_waveform
    if not ref.compatible(act):
        raise ValueError("series is sampled differently from the reference model")
    m = max(1, int(round(cfg.locate_smoothing / ref.dt)))
    sigma = model.noise_sigma_estimate * math.sqrt(1.0 / n + 1.0 / max(model.n_captures, 1)) / math.sqrt(m)
    onset = det.change_onset(det.smooth(ref, m), det.smooth(act, m), sigma, cfg.k_sigma, cfg.hold)
    lines = [f"# seed: {args.seed}"]
    if onset is None:
        lines.append("status: no change localized")
    else:
        distance = cfg.velocity * (onset - ref.t0) / 2
        lines += ["status: localized", f"distance_m: {distance:.4f}", f"onset_s: {onset!r}"]
    if args.out:
        _write_text(_out_path(args.out), lines)
    print("\n".join(lines[1:]))
    return 0


def cmd_bench(args) -> int:
    topo, digest = _load_topo(args.topology)
    out = _out_path(args.out)
    overrides = _parse_overrides(args.config)
    used: set = set()
    pulse = _apply(PulseSpec(width=args.pulse_width), overrides, used)
    sim = _apply(SimConfig(duration=args.duration), overrides, used)
    cal = _apply(det.CalibrationConfig(), overrides, used)
    _check_used(overrides, used)
    if args.labels is None:
        labels = [s.label for s in topo.stubs]
    else:
        labels = [lb.strip() for lb in args.labels.split(",") if lb.strip()]
    unknown = [lb for lb in labels if lb not in topo.labels]
    if unknown:
        raise UsageError(f"unknown ECU label(s): {', '.join(unknown)}")
    table = det.benchmark_methods(topo, labels, args.trials, pulse, sim, cal, args.noise, args.seed)
    head = [f"# command: bench", f"# seed: {args.seed}", f"# topology_sha256: {digest}",
            f"# trials: {args.trials}", f"# noise_sigma: {args.noise!r}",
            f"# config: {_format_config([pulse, sim, cal])}"]
    text = table.render()
    _write_text(out, head + text.splitlines())
    _write_text(_sidecar(out, ".csv"), head + table.to_csv().splitlines())
    print(text, end="")
    return 0


def cmd_resistance(args) -> int:
    topo, _ = _load_topo(args.topology)
    total = total_bus_resistance(topo)
    added = NodeLoad.transceiver() if args.added_r is None else NodeLoad("custom", args.added_r)
    with_new = total_bus_resistance(list(topo.loads()) + [added])
    lines = [f"total_resistance_ohm: {total:.4f}",
             f"with_added_device_ohm: {with_new:.4f}",
             f"delta_r_ohm: {total - with_new:.4f}"]
    if args.out:
        _write_text(_out_path(args.out), [f"# seed: {args.seed}"] + lines)
    print("\n".join(lines))
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cantdr", description="TDR-based alien device detection on CAN buses")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--topology", help="topology description file")
        p.add_argument("--out", required=out_required, help="output file")
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument("--config", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration field (repeatable)")

    p = sub.add_parser("simulate", help="simulate TDR captures")
    common(p, out_required=True)
    p.add_argument("--n", type=int, default=1, help="number of captures")
    p.add_argument("--noise", type=_si, default=0.0, help="per-capture noise sigma, volt")
    p.add_argument("--pulse-width", type=_si, default=3e-9)
    p.add_argument("--pulse-amplitude", type=_si, default=1.0)
    p.add_argument("--pulse-shape", choices=("rectangular", "gaussian"), default="rectangular")
    p.add_argument("--source-impedance", type=_si, default=None)
    p.add_argument("--duration", type=_si, default=None)
    p.add_argument("--attach", type=_si, default=None, metavar="POS", help="attach a transceiver at POS metres")
    p.add_argument("--attach-stub", type=_si, default=0.1)
    p.add_argument("--remove", default=None, metavar="LABEL", help="remove the ECU with this label")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="build a reference model from a series")
    common(p, out_required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--threshold", help="fixed:VALUE or baseline_max_plus:MARGIN")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="score consecutive batches against a reference model")
    common(p, out_required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--plot", help="plot CSV path (default OUT.plot.csv)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("locate", help="estimate the distance to a reflection change")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--velocity", type=_si, default=None)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("bench", help="compare the four analysis methods on ECU removals")
    common(p, out_required=True)
    p.add_argument("--labels", default=None, help="comma-separated ECU labels (default: all)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--noise", type=_si, default=0.0)
    p.add_argument("--pulse-width", type=_si, default=3e-9)
    p.add_argument("--duration", type=_si, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("resistance", help="total bus resistance and the effect of one more device")
    common(p)
    p.add_argument("--added-r", type=_si, default=None, help="resistance of the added device (default 70k)")
    p.set_defaults(func=cmd_resistance)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cantdr {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cantdr {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"cantdr {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
