"""CAN bus topology: line parameters, loads, stubs and the topology text format.

A topology is a main bus running from 0 to ``total_length`` with optional
terminations at both ends, ECU stubs branching off at interior positions and
a single measurement port. All values are SI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .units import format_si, parse_si

TRANSCEIVER_R = 70e3
TRANSCEIVER_C = 16e-12
DEFAULT_Z0 = 120.0
DEFAULT_VELOCITY = 2e8


class TopologyError(ValueError):
    """Raised for malformed or inconsistent topology documents.

    ``line`` is the 1-based source line for syntax errors, ``entity`` names the
    offending bus element for semantic errors.
    """

    def __init__(self, message: str, line: Optional[int] = None, entity: Optional[str] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.entity = entity


@dataclass(frozen=True)
class LineParams:
    inductance_per_m: float
    capacitance_per_m: float
    resistance_per_m: float = 0.0
    conductance_per_m: float = 0.0
    lossless: bool = True

    def __post_init__(self):
        if not (self.inductance_per_m > 0 and self.capacitance_per_m > 0):
            raise ValueError("L' and C' must be positive")
        if not (math.isfinite(self.inductance_per_m) and math.isfinite(self.capacitance_per_m)):
            raise ValueError("L' and C' must be finite")
        if self.lossless and (self.resistance_per_m != 0 or self.conductance_per_m != 0):
            raise ValueError("lossless line requires R' = G' = 0")
        if not self.lossless:
            raise ValueError("only lossless lines are supported")

    @classmethod
    def from_z0_velocity(cls, z0: float, velocity: float) -> "LineParams":
        """Invert Z0 = sqrt(L'/C') and v = 1/sqrt(L'C')."""
        if z0 <= 0 or velocity <= 0:
            raise ValueError("z0 and velocity must be positive")
        return cls(inductance_per_m=z0 / velocity, capacitance_per_m=1.0 / (z0 * velocity))

    @property
    def z0(self) -> float:
        return characteristic_impedance(self)

    @property
    def velocity(self) -> float:
        return 1.0 / math.sqrt(self.inductance_per_m * self.capacitance_per_m)


DEFAULT_LINE = LineParams.from_z0_velocity(DEFAULT_Z0, DEFAULT_VELOCITY)


def characteristic_impedance(params: LineParams) -> float:
    """Lossless characteristic impedance sqrt(L'/C') in ohms.

    The general form sqrt((R' + jwL')/(G' + jwC')) collapses to this when
    R' = G' = 0, which LineParams enforces.
    """
    return math.sqrt(params.inductance_per_m / params.capacitance_per_m)


@dataclass(frozen=True)
class NodeLoad:
    """Lumped load at a bus end or stub end, modelled as parallel RC.

    ``resistance = inf`` means no resistive path (open or purely capacitive).
    """

    kind: str
    resistance: float = math.inf
    capacitance: float = 0.0

    KINDS = ("termination_resistor", "transceiver", "open", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")
        if not self.resistance > 0:
            raise ValueError("load resistance must be positive")
        if self.capacitance < 0:
            raise ValueError("load capacitance must be non-negative")
        if self.kind == "termination_resistor" and (self.capacitance != 0 or math.isinf(self.resistance)):
            raise ValueError("termination resistor needs finite R and no capacitance")
        if self.kind == "open" and (self.capacitance != 0 or not math.isinf(self.resistance)):
            raise ValueError("open load has no R or C")

    @classmethod
    def termination(cls, resistance: float = DEFAULT_Z0) -> "NodeLoad":
        return cls("termination_resistor", resistance, 0.0)

    @classmethod
    def transceiver(cls, resistance: float = TRANSCEIVER_R, capacitance: float = TRANSCEIVER_C) -> "NodeLoad":
        return cls("transceiver", resistance, capacitance)

    @classmethod
    def open(cls) -> "NodeLoad":
        return cls("open")

    @property
    def conductance(self) -> float:
        return 0.0 if math.isinf(self.resistance) else 1.0 / self.resistance


@dataclass(frozen=True)
class Stub:
    position: float
    length: float
    params: LineParams
    load: NodeLoad
    label: str


@dataclass(frozen=True)
class Topology:
    main_segments: tuple[tuple[float, LineParams], ...]
    stubs: tuple[Stub, ...] = ()
    end_loads: tuple[NodeLoad, NodeLoad] = field(default=(NodeLoad.open(), NodeLoad.open()))
    measurement_position: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "main_segments", tuple(tuple(s) for s in self.main_segments))
        object.__setattr__(self, "stubs", tuple(self.stubs))
        object.__setattr__(self, "end_loads", tuple(self.end_loads))
        validate(self)

    @property
    def total_length(self) -> float:
        return sum(length for length, _ in self.main_segments)

    @property
    def line(self) -> LineParams:
        return self.main_segments[0][1]

    @property
    def propagation_velocity(self) -> float:
        return self.line.velocity

    @property
    def cable_length(self) -> float:
        """Main bus plus all stub lengths."""
        return self.total_length + sum(s.length for s in self.stubs)

    def stub(self, label: str) -> Stub:
        for s in self.stubs:
            if s.label == label:
                return s
        raise KeyError(label)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.stubs]

    def measurement_stub(self) -> Optional[Stub]:
        """Stub hosting the port, or None when measuring at a bus end."""
        total = self.total_length
        if _close(self.measurement_position, 0.0) or _close(self.measurement_position, total):
            return None
        for s in self.stubs:
            if _close(s.position, self.measurement_position):
                return s
        return None

    def loads(self) -> list[NodeLoad]:
        return list(self.end_loads) + [s.load for s in self.stubs]


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def validate(topo: Topology) -> None:
    if not topo.main_segments:
        raise TopologyError("bus has no segments", entity="bus")
    for i, (length, params) in enumerate(topo.main_segments):
        if not length > 0:
            raise TopologyError(f"segment {i} has nonpositive length {length}", entity=f"segment {i}")
        if not isinstance(params, LineParams):
            raise TopologyError(f"segment {i} has no line parameters", entity=f"segment {i}")
    total = topo.total_length
    if len(topo.end_loads) != 2:
        raise TopologyError("exactly two end loads required", entity="term")
    seen = set()
    for s in topo.stubs:
        name = f"stub {s.label!r}"
        if s.label in seen:
            raise TopologyError(f"duplicate label {s.label!r}", entity=name)
        seen.add(s.label)
        if not (0.0 < s.position < total):
            raise TopologyError(
                f"{name} at {s.position} m lies outside the bus (0, {total}) m", entity=name)
        if not (s.length > 0 and math.isfinite(s.length)):
            raise TopologyError(f"{name} has invalid stub length {s.length}", entity=name)
    mp = topo.measurement_position
    if not (_close(mp, 0.0) or _close(mp, total) or any(_close(s.position, mp) for s in topo.stubs)):
        raise TopologyError(
            f"measurement position {mp} m is neither a bus end nor a stub", entity="meas")
    v0 = topo.line.velocity
    for length, params in topo.main_segments:
        if abs(params.velocity - v0) > 1e-6 * v0:
            raise TopologyError("main segments must share one propagation velocity", entity="bus")


def with_line(total_length: float, params: LineParams = DEFAULT_LINE, **kw) -> Topology:
    """Convenience constructor for a single-segment bus."""
    return Topology(main_segments=((total_length, params),), **kw)


def total_bus_resistance(topology: Topology | Iterable[NodeLoad]) -> float:
    """DC resistance of all loads in parallel, line resistance neglected.

    Open loads and purely capacitive loads contribute nothing.
    """
    loads = topology.loads() if isinstance(topology, Topology) else list(topology)
    g = sum(ld.conductance for ld in loads)
    if g == 0:
        raise ValueError("no finite resistive load on the bus")
    return 1.0 / g


def attach_device(topology: Topology, position: float, stub_length: float,
                  load: NodeLoad, label: str) -> Topology:
    """Return a copy of *topology* with one extra stub; the input is untouched."""
    if label in topology.labels:
        raise TopologyError(f"duplicate label {label!r}", entity=f"stub {label!r}")
    if not (0.0 < position < topology.total_length):
        raise TopologyError(
            f"stub {label!r} at {position} m lies outside the bus", entity=f"stub {label!r}")
    stub = Stub(position=position, length=stub_length, params=topology.line, load=load, label=label)
    return replace(topology, stubs=topology.stubs + (stub,))


def remove_device(topology: Topology, label: str) -> Topology:
    """Return a copy of *topology* without the stub called *label*."""
    if label not in topology.labels:
        raise KeyError(f"unknown ECU label {label!r}")
    port = topology.measurement_stub()
    if port is not None and port.label == label:
        raise TopologyError(f"stub {label!r} hosts the measurement port", entity=f"stub {label!r}")
    return replace(topology, stubs=tuple(s for s in topology.stubs if s.label != label))


# --- text format -----------------------------------------------------------

_KEYS = {
    "line": ({"z0", "v"}, {"z0", "v"}),
    "bus": ({"length"}, {"length"}),
    "term": ({"pos", "r"}, {"pos", "r"}),
    "node": ({"label", "pos", "stub", "r", "c"}, {"label", "pos", "stub"}),
    "meas": ({"pos"}, {"pos"}),
}


def parse_topology(text: str) -> Topology:
    """Parse the line-oriented topology format into a validated Topology."""
    line_decl = bus = meas = None
    terms: dict[str, NodeLoad] = {}
    nodes: list[tuple[int, dict[str, str]]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        keyword, *pairs = content.split()
        if keyword not in _KEYS:
            raise TopologyError(f"unknown keyword {keyword!r}", line=lineno)
        allowed, required = _KEYS[keyword]
        fields: dict[str, str] = {}
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep or not value:
                raise TopologyError(f"expected key=value, got {pair!r}", line=lineno)
            if key not in allowed:
                raise TopologyError(f"unknown field {key!r} for {keyword!r}", line=lineno)
            if key in fields:
                raise TopologyError(f"repeated field {key!r}", line=lineno)
            fields[key] = value
        missing = required - fields.keys()
        if missing:
            raise TopologyError(f"{keyword!r} is missing {', '.join(sorted(missing))}", line=lineno)

        def num(key: str) -> float:
            try:
                return parse_si(fields[key])
            except ValueError:
                raise TopologyError(f"bad number for {key!r}: {fields[key]!r}", line=lineno) from None

        if keyword == "line":
            if line_decl is not None:
                raise TopologyError("duplicate 'line' declaration", line=lineno)
            z0, v = num("z0"), num("v")
            if z0 <= 0 or v <= 0:
                raise TopologyError("z0 and v must be positive", line=lineno, entity="line")
            line_decl = LineParams.from_z0_velocity(z0, v)
        elif keyword == "bus":
            if bus is not None:
                raise TopologyError("duplicate 'bus' declaration", line=lineno)
            bus = num("length")
            if not bus > 0:
                raise TopologyError(f"bus has nonpositive length {bus}", line=lineno, entity="bus")
        elif keyword == "term":
            where = fields["pos"]
            if where not in ("0", "end"):
                raise TopologyError(f"term pos must be 0 or end, got {where!r}", line=lineno)
            if where in terms:
                raise TopologyError(f"duplicate termination at {where}", line=lineno, entity=f"term@{where}")
            r = num("r")
            if not r > 0:
                raise TopologyError("termination resistance must be positive", line=lineno,
                                    entity=f"term@{where}")
            terms[where] = NodeLoad.termination(r)
        elif keyword == "node":
            nodes.append((lineno, fields))
        elif keyword == "meas":
            if meas is not None:
                raise TopologyError("duplicate 'meas' declaration", line=lineno)
            meas = fields["pos"]

    for name, value in (("line", line_decl), ("bus", bus), ("meas", meas)):
        if value is None:
            raise TopologyError(f"missing required {name!r} declaration", entity=name)
    if not terms:
        raise TopologyError("bus has no termination", entity="term")

    stubs = []
    for lineno, f in nodes:
        label = f["label"]
        try:
            pos, length = parse_si(f["pos"]), parse_si(f["stub"])
            r = parse_si(f["r"]) if "r" in f else TRANSCEIVER_R
            c = parse_si(f["c"]) if "c" in f else TRANSCEIVER_C
        except ValueError as exc:
            raise TopologyError(str(exc), line=lineno, entity=f"stub {label!r}") from None
        kind = "transceiver" if (r, c) == (TRANSCEIVER_R, TRANSCEIVER_C) else "custom"
        try:
            load = NodeLoad(kind, r, c)
        except ValueError as exc:
            raise TopologyError(str(exc), line=lineno, entity=f"stub {label!r}") from None
        if not length > 0:
            raise TopologyError(f"stub {label!r} needs a positive length", line=lineno, entity=f"stub {label!r}")
        stubs.append(Stub(pos, length, line_decl, load, label))

    if meas == "end":
        meas_pos = bus
    else:
        try:
            meas_pos = parse_si(meas)
        except ValueError:
            raise TopologyError(f"bad measurement position {meas!r}", entity="meas") from None

    return Topology(
        main_segments=((bus, line_decl),),
        stubs=tuple(stubs),
        end_loads=(terms.get("0", NodeLoad.open()), terms.get("end", NodeLoad.open())),
        measurement_position=meas_pos,
    )


def serialize_topology(topo: Topology) -> str:
    """Inverse of parse_topology for single-line, single-segment topologies."""
    params = topo.line
    if len(topo.main_segments) != 1 or any(s.params != params for s in topo.stubs):
        raise ValueError("text format holds one line type and one bus segment")
    lines = [
        f"line z0={format_si(params.z0)} v={format_si(params.velocity)}",
        f"bus length={format_si(topo.total_length)}",
    ]
    for where, load in zip(("0", "end"), topo.end_loads):
        if load.kind == "open":
            continue
        if load.kind != "termination_resistor":
            raise ValueError("bus ends only carry termination resistors in the text format")
        lines.append(f"term pos={where} r={format_si(load.resistance)}")
    for s in topo.stubs:
        if math.isinf(s.load.resistance):
            raise ValueError("text format needs a finite stub resistance")
        lines.append(
            f"node label={s.label} pos={format_si(s.position)} stub={format_si(s.length)} "
            f"r={format_si(s.load.resistance)} c={format_si(s.load.capacitance)}")
    lines.append(f"meas pos={format_si(topo.measurement_position)}")
    return "\n".join(lines) + "\n"


def load_topology(path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())
