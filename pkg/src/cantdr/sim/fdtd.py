"""Leap-frog FDTD solution of the lossless telegrapher's equations on a bus graph.

Voltages live on integer grid points, currents on the half-cells between them.
Graph nodes (bus ends, junctions, stub ends) are ordinary voltage points whose
capacitance is half a cell from every attached line plus any load capacitance,
so junction KCL and parallel RC loads fall out of one update rule:

    C (V' - V) / dt = net line current - G (V' + V) / 2 + source current

which is the trapezoidal rule for the RC part and unconditionally stable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..topology import Topology
from .network import Network, build_network
from .pulse import PulseSpec, SimConfig
from .waveform import Waveform


class StabilityError(ValueError):
    pass


class SnappingError(ValueError):
    pass


@dataclass
class Grid:
    """Discretised network ready for time stepping."""

    dt: float
    dz: float
    cap: np.ndarray  # per voltage point
    cond: np.ndarray  # per voltage point
    ind: np.ndarray  # per current cell, L' dz
    incidence: sp.csr_matrix  # cells x points, +1 at head, -1 at tail
    port: int
    source_conductance: float  # 1/Zs, inf for an ideal source
    cells_per_edge: list[int]

    @property
    def n_points(self) -> int:
        return self.cap.size


def resolve_time_step(network: Network, config: SimConfig) -> tuple[float, float]:
    dz = config.spatial_step
    vmax = max(e.params.velocity for e in network.edges)
    limit = config.cfl_factor * dz / vmax
    dt = limit if config.time_step is None else config.time_step
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"time step {dt:.4g} s exceeds CFL limit {limit:.4g} s")
    return dt, dz


def build_grid(network: Network, config: SimConfig, source_impedance: float) -> Grid:
    dt, dz = resolve_time_step(network, config)
    n_nodes = len(network.nodes)
    cap = [nd.capacitance for nd in network.nodes]
    cond = [nd.conductance for nd in network.nodes]
    ind: list[float] = []
    heads: list[int] = []
    tails: list[int] = []
    cells_per_edge = []
    next_point = n_nodes
    for edge in network.edges:
        n = max(1, int(round(edge.length / dz)))
        if abs(n * dz - edge.length) > 0.01 * edge.length:
            raise SnappingError(
                f"edge of {edge.length:g} m cannot be resolved with dz = {dz:g} m "
                f"({n} cells, {n * dz:g} m)")
        cells_per_edge.append(n)
        lp, cp = edge.params.inductance_per_m * dz, edge.params.capacitance_per_m * dz
        chain = [edge.a] + list(range(next_point, next_point + n - 1)) + [edge.b]
        next_point += n - 1
        cap[edge.a] += 0.5 * cp
        cap[edge.b] += 0.5 * cp
        cap.extend([cp] * (n - 1))
        cond.extend([0.0] * (n - 1))
        for k in range(n):
            tails.append(chain[k])
            heads.append(chain[k + 1])
            ind.append(lp)
    n_cells = len(ind)
    rows = np.repeat(np.arange(n_cells), 2)
    cols = np.column_stack([heads, tails]).ravel()
    vals = np.tile([1.0, -1.0], n_cells)
    incidence = sp.csr_matrix((vals, (rows, cols)), shape=(n_cells, next_point))
    gs = np.inf if source_impedance == 0 else 1.0 / source_impedance
    cond = np.array(cond)
    if np.isfinite(gs):
        cond[network.port] += gs
    return Grid(dt=dt, dz=dz, cap=np.array(cap), cond=cond, ind=np.array(ind),
                incidence=incidence, port=network.port, source_conductance=gs,
                cells_per_edge=cells_per_edge)


class Solver:
    """Time-stepping state; one instance per run."""

    def __init__(self, grid: Grid, emf):
        self.grid = grid
        self.emf = emf  # callable: absolute time -> source EMF
        self.v = np.zeros(grid.n_points)
        self.i = np.zeros(grid.ind.size)  # at t = (n - 1/2) dt
        self.n = 0
        g = grid
        self._i_coef = g.dt / g.ind
        self._den = g.cap / g.dt + 0.5 * g.cond
        self._num = g.cap / g.dt - 0.5 * g.cond
        self._inc_t = g.incidence.T.tocsr()
        self.dissipated = 0.0

    @property
    def time(self) -> float:
        return self.n * self.grid.dt

    def step(self) -> None:
        g = self.grid
        self.i -= self._i_coef * (g.incidence @ self.v)
        rhs = self._num * self.v + self._inc_t @ self.i
        t_now, t_next = self.time, self.time + g.dt
        ideal = not np.isfinite(g.source_conductance)
        if not ideal:
            rhs[g.port] += 0.5 * (self.emf(t_now) + self.emf(t_next)) * g.source_conductance
        v_new = rhs / self._den
        if ideal:
            v_new[g.port] = self.emf(t_next)
        vbar = 0.5 * (v_new + self.v)
        self.dissipated += g.dt * float(np.dot(g.cond, vbar * vbar))
        self.v = v_new
        self.n += 1

    def energy(self, i_prev: np.ndarray) -> float:
        """Discrete stored energy using the leap-frog current product."""
        g = self.grid
        return 0.5 * float(np.dot(g.cap, self.v ** 2)) + 0.5 * float(np.dot(g.ind, i_prev * self.i))


def _source_impedance(topology: Topology, pulse: PulseSpec) -> float:
    return topology.line.z0 if pulse.source_impedance is None else pulse.source_impedance


def default_duration(topology: Topology, pulse: PulseSpec, config: SimConfig) -> float:
    return config.t0 + 2 * topology.cable_length / topology.propagation_velocity + 5 * pulse.support


def simulate_tdr(topology: Topology, pulse: PulseSpec, config: SimConfig = SimConfig()) -> Waveform:
    """Noise-free port voltage over ``[0, duration]``; the pulse starts at ``config.t0``."""
    network = build_network(topology)
    grid = build_grid(network, config, _source_impedance(topology, pulse))
    duration = config.duration or default_duration(topology, pulse, config)
    n_steps = int(np.ceil(duration / grid.dt - 1e-9))
    t0 = config.t0

    def emf(t):
        return float(pulse(t - t0))

    solver = Solver(grid, emf)
    port = np.empty(n_steps + 1)
    port[0] = solver.v[grid.port]
    for k in range(1, n_steps + 1):
        solver.step()
        port[k] = solver.v[grid.port]
    dec = config.decimation
    return Waveform(t0=t0, dt=grid.dt * dec, samples=port[::dec])
