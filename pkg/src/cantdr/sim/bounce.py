"""Bounce-diagram oracle: exact ray tracing through ideal-line junctions.

Each ray carries a delay, a scalar gain and a list of first-order factors
``d + c / (s + p)`` picked up at capacitive nodes. For a wave arriving on a
line of admittance ``Y0`` at a node whose other lines and loads present
``Yr(s) = a + sC``:

    reflection    (Y0 - Yr) / (Y0 + Yr)
    transmission  2 Y0 / (Y0 + Yr)        (into every other line)

Port voltage is the launched wave plus the transmitted part of every ray
reaching the port. Nothing here touches the FDTD grid.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from ..topology import Topology
from .fdtd import default_duration, resolve_time_step
from .network import Network, build_network
from .pulse import PulseSpec, SimConfig
from .waveform import Waveform


class OracleScopeError(ValueError):
    pass


# (d, c, p) for d + c / (s + p); p > 0
Factor = tuple[float, float, float]


@dataclass(frozen=True)
class Ray:
    delay: float
    gain: float
    factors: tuple[Factor, ...]
    order: int


def _node_response(y0: float, a: float, cap: float, kind: str):
    """Reflection or transmission as (scalar, factor-or-None)."""
    if cap == 0:
        if kind == "reflect":
            return (y0 - a) / (y0 + a), None
        return 2 * y0 / (y0 + a), None
    p = (y0 + a) / cap
    if kind == "reflect":
        return 1.0, (-1.0, 2 * y0 / cap, p)
    return 1.0, (0.0, 2 * y0 / cap, p)


def junction_reflection(n_lines: int) -> float:
    """Scalar reflection seen on one of ``n_lines`` identical unloaded lines."""
    return (1.0 - (n_lines - 1)) / (1.0 + (n_lines - 1))


def trace_rays(network: Network, source_conductance: float, max_order: int,
               horizon: float) -> tuple[list[Ray], list[Ray]]:
    """Enumerate rays; returns (launch terms, arrivals at the port).

    ``max_order`` bounds the number of reflection events on a ray;
    transmissions through junctions are free. Rays later than ``horizon``
    are dropped.
    """
    y0s = [1.0 / e.params.z0 for e in network.edges]
    port = network.port
    ideal = math.isinf(source_conductance)

    def shunt(node: int) -> tuple[float, float]:
        nd = network.nodes[node]
        g = nd.conductance + (0.0 if (node != port or ideal) else source_conductance)
        return g, nd.capacitance

    launch: list[Ray] = []
    stack: list[tuple[int, int, Ray]] = []  # (edge, destination node, ray)
    inc = network.incident(port)
    if ideal:
        base = Ray(0.0, 1.0, (), 0)
    else:
        g, cap = shunt(port)
        ytot = g + sum(y0s[i] for i in inc)
        base = (Ray(0.0, source_conductance / ytot, (), 0) if cap == 0
                else Ray(0.0, 1.0, ((0.0, source_conductance / cap, ytot / cap),), 0))
    launch.append(base)
    for ei in inc:
        e = network.edges[ei]
        stack.append((ei, e.b if e.a == port else e.a, base))

    arrivals: list[Ray] = []
    while stack:
        ei, node, ray = stack.pop()
        edge = network.edges[ei]
        t = ray.delay + edge.delay
        if t > horizon:
            continue
        y0 = y0s[ei]
        back = edge.a if edge.b == node else edge.b
        others = [i for i in network.incident(node) if i != ei]
        g, cap = shunt(node)
        a = g + sum(y0s[i] for i in others)

        if node == port and ideal:
            # node voltage pinned by the source: full inversion, nothing transmitted
            if ray.order < max_order:
                stack.append((ei, back, _extend(ray, t, -1.0, None, 1)))
            continue

        if node == port:
            scale, fac = _node_response(y0, a, cap, "transmit")
            arrivals.append(_extend(ray, t, scale, fac, 0))

        if ray.order < max_order:
            scale, fac = _node_response(y0, a, cap, "reflect")
            if fac is not None or scale != 0:
                stack.append((ei, back, _extend(ray, t, scale, fac, 1)))

        if others:
            scale, fac = _node_response(y0, a, cap, "transmit")
            for fi in others:
                f = network.edges[fi]
                stack.append((fi, f.b if f.a == node else f.a, _extend(ray, t, scale, fac, 0)))
    return launch, arrivals


def _extend(ray: Ray, t: float, scale: float, fac, dorder: int) -> Ray:
    factors = ray.factors + ((fac,) if fac is not None else ())
    return Ray(t, ray.gain * scale, factors, ray.order + dorder)


def _filter(x: np.ndarray, h: float, fac: Factor) -> np.ndarray:
    """Apply ``d + c/(s+p)`` exactly to a piecewise-linear signal on step ``h``."""
    d, c, p = fac
    ph = p * h
    decay = math.exp(-ph)
    phi1 = -math.expm1(-ph) / p
    phi2 = (1.0 - phi1 / h) / p
    b = [c * phi2, c * (phi1 - phi2)]
    return d * x + lfilter(b, [1.0, -decay], x)


def bounce_oracle(topology: Topology, pulse: PulseSpec, max_order: int,
                  config: SimConfig = SimConfig(), oversample: int = 16) -> Waveform:
    """Superposition of all rays up to ``max_order`` reflections, sampled like simulate_tdr.

    Scope: at most two stubs and purely resistive (or open) bus ends.
    """
    if len(topology.stubs) > 2:
        raise OracleScopeError("oracle handles at most two stubs")
    if any(ld.capacitance != 0 for ld in topology.end_loads):
        raise OracleScopeError("oracle needs resistive bus-end loads")
    if max_order < 0:
        raise ValueError("max_order must be non-negative")

    network = build_network(topology)
    dt, _ = resolve_time_step(network, config)
    dt *= config.decimation
    duration = config.duration or default_duration(topology, pulse, config)
    n = int(np.ceil(duration / dt - 1e-9)) + 1
    rel = np.arange(n) * dt - config.t0  # time since injection at each sample

    zs = topology.line.z0 if pulse.source_impedance is None else pulse.source_impedance
    gs = math.inf if zs == 0 else 1.0 / zs
    launch, arrivals = trace_rays(network, gs, max_order, horizon=duration - config.t0)

    poles = [f[2] for r in launch + arrivals for f in r.factors]
    h = dt / oversample
    if pulse.shape == "rectangular" and pulse.rise_time > 0:
        h = min(h, pulse.rise_time / 32)
    if poles:
        h = min(h, 0.05 / max(poles))
    fine_t = np.arange(int(np.ceil((duration - config.t0) / h)) + 2) * h
    base = pulse(fine_t)

    groups: dict[tuple, list[Ray]] = defaultdict(list)
    for r in launch + arrivals:
        groups[tuple(sorted(r.factors))].append(r)

    out = np.zeros(n)
    for factors, rays in groups.items():
        q = base
        for fac in factors:
            q = _filter(q, h, fac)
        for r in rays:
            tau = rel - r.delay
            mask = tau >= 0
            out[mask] += r.gain * np.interp(tau[mask], fine_t, q)
    return Waveform(t0=config.t0, dt=dt, samples=out)
