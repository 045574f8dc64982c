"""Graph view of a Topology: lumped nodes joined by uniform line edges."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..topology import LineParams, Topology, _close


@dataclass
class Node:
    name: str
    conductance: float = 0.0  # siemens to ground, loads only
    capacitance: float = 0.0  # farad to ground, loads only
    labels: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    length: float
    params: LineParams

    @property
    def delay(self) -> float:
        return self.length / self.params.velocity


@dataclass
class Network:
    nodes: list[Node]
    edges: list[Edge]
    port: int

    def incident(self, node: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if node in (e.a, e.b)]


def build_network(topo: Topology) -> Network:
    """Split the bus at every stub junction; coincident stubs share one node."""
    total = topo.total_length
    positions = [0.0, total]
    for s in topo.stubs:
        if not any(_close(s.position, p) for p in positions):
            positions.append(s.position)
    positions.sort()

    nodes = [Node(name=f"bus@{p:g}") for p in positions]

    def bus_node(pos: float) -> int:
        for i, p in enumerate(positions):
            if _close(p, pos):
                return i
        raise KeyError(pos)

    edges: list[Edge] = []
    # main segments may differ in params; walk them alongside junction positions
    seg_bounds = []
    x = 0.0
    for length, params in topo.main_segments:
        seg_bounds.append((x, x + length, params))
        x += length
    for i in range(len(positions) - 1):
        lo, hi = positions[i], positions[i + 1]
        mid = 0.5 * (lo + hi)
        params = next(p for a, b, p in seg_bounds if a <= mid <= b)
        edges.append(Edge(i, i + 1, hi - lo, params))

    for end, load in zip((0, len(positions) - 1), topo.end_loads):
        _add_load(nodes[end], load, f"end@{positions[end]:g}")

    port_stub = topo.measurement_stub()
    port = bus_node(topo.measurement_position) if port_stub is None else None
    for s in topo.stubs:
        j = bus_node(s.position)
        nodes.append(Node(name=f"stub:{s.label}"))
        target = len(nodes) - 1
        edges.append(Edge(j, target, s.length, s.params))
        _add_load(nodes[target], s.load, s.label)
        if port_stub is not None and s is port_stub:
            port = target
    return Network(nodes=nodes, edges=edges, port=port)


def _add_load(node: Node, load, label: str) -> None:
    node.conductance += load.conductance
    node.capacitance += load.capacitance
    node.labels.append(label)
