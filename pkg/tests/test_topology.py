import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from cantdr.scenario import ALIEN_POSITION, ECU_DISTANCES, attack_topology, compromised_topology
from cantdr.sim.network import build_network
from cantdr.topology import (DEFAULT_LINE, LineParams, NodeLoad, Topology, TopologyError,
                             attach_device, characteristic_impedance, parse_topology,
                             remove_device, serialize_topology, total_bus_resistance, with_line)
from cantdr.units import parse_si

MINIMAL = """\
line z0=120 v=2e8
bus length=10
term pos=0 r=120
term pos=end r=120
meas pos=0
"""


class TestUnits:
    @pytest.mark.parametrize("text,value", [
        ("3ns", 3e-9), ("70k", 70e3), ("16p", 16e-12), ("2e8", 2e8), ("1mV", 1e-3),
        ("10m", 0.01), ("120ohm", 120.0), ("500kbps", 5e5), ("-2.5u", -2.5e-6), (".5", 0.5),
    ])
    def test_parse(self, text, value):
        assert parse_si(text) == pytest.approx(value, rel=1e-15)

    @pytest.mark.parametrize("text", ["", "abc", "3 ns", "1x", "1kk"])
    def test_reject(self, text):
        with pytest.raises(ValueError):
            parse_si(text)


class TestParse:
    def test_minimal_document(self):
        topo = parse_topology(MINIMAL)
        assert topo.propagation_velocity == pytest.approx(2e8, rel=1e-12)
        assert topo.line.inductance_per_m == pytest.approx(600e-9, rel=1e-12)
        assert topo.line.capacitance_per_m == pytest.approx(41.6667e-12, rel=1e-5)
        assert topo.total_length == 10
        assert [ld.resistance for ld in topo.end_loads] == [120, 120]
        assert topo.measurement_position == 0

    def test_stub_beyond_bus_names_stub(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL + "node label=Far pos=15 stub=0.1\n")
        assert "Far" in info.value.entity
        assert "Far" in str(info.value)

    def test_zero_stub_length_names_stub(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL + "node label=Flat pos=5 stub=0\n")
        assert "Flat" in info.value.entity and info.value.line == 6

    def test_syntax_error_reports_line(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL.replace("bus length=10", "bus length"))
        assert info.value.line == 2

    def test_unknown_keyword(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL + "wire x=1\n")
        assert info.value.line == 6

    def test_unknown_field(self):
        with pytest.raises(TopologyError):
            parse_topology(MINIMAL.replace("r=120\nterm", "r=120 q=1\nterm"))

    def test_missing_termination(self):
        text = "\n".join(l for l in MINIMAL.splitlines() if not l.startswith("term"))
        with pytest.raises(TopologyError) as info:
            parse_topology(text)
        assert info.value.entity == "term"

    def test_nonpositive_length(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL.replace("length=10", "length=0"))
        assert info.value.entity == "bus"

    def test_comments_and_si(self):
        topo = parse_topology("# header\n" + MINIMAL + "node label=A pos=5 stub=10m r=70k c=16p  # ecu\n")
        (stub,) = topo.stubs
        assert stub.length == pytest.approx(0.01)
        assert stub.load.kind == "transceiver"

    def test_node_defaults_to_transceiver(self):
        topo = parse_topology(MINIMAL + "node label=A pos=5 stub=0.1\n")
        assert topo.stubs[0].load == NodeLoad.transceiver()

    def test_measurement_at_stub_and_end(self):
        topo = parse_topology(MINIMAL.replace("meas pos=0", "meas pos=5") + "node label=A pos=5 stub=0.2\n")
        assert topo.measurement_stub().label == "A"
        assert parse_topology(MINIMAL.replace("meas pos=0", "meas pos=end")).measurement_position == 10

    def test_measurement_elsewhere_rejected(self):
        with pytest.raises(TopologyError) as info:
            parse_topology(MINIMAL.replace("meas pos=0", "meas pos=3"))
        assert info.value.entity == "meas"

    def test_attack_document(self):
        topo = attack_topology()
        assert len(topo.stubs) == 7
        assert {s.label: s.position for s in topo.stubs} == ECU_DISTANCES
        assert all(s.load.kind == "transceiver" for s in topo.stubs)
        with_alien = compromised_topology(topo)
        assert len(with_alien.stubs) == 8
        assert with_alien.stub("Alien").position == ALIEN_POSITION


class TestImpedance:
    def test_default_line(self):
        params = LineParams(600e-9, 1 / (120 * 2e8))
        assert characteristic_impedance(params) == pytest.approx(120, rel=1e-12)

    def test_rounded_capacitance(self):
        assert characteristic_impedance(LineParams(600e-9, 41.67e-12)) == pytest.approx(120, rel=1e-3)

    def test_equal_values(self):
        assert characteristic_impedance(LineParams(3.7, 3.7)) == 1.0

    def test_cable_117(self):
        params = LineParams.from_z0_velocity(117, 2e8)
        assert characteristic_impedance(params) == pytest.approx(117, rel=1e-12)
        assert params.velocity == pytest.approx(2e8, rel=1e-12)

    def test_lossy_rejected(self):
        with pytest.raises(ValueError):
            LineParams(1e-6, 1e-12, resistance_per_m=0.1)
        with pytest.raises(ValueError):
            LineParams(1e-6, 1e-12, lossless=False)

    @given(st.floats(1e-9, 1e-3), st.floats(1e-13, 1e-9), st.floats(1e-3, 1e3))
    def test_ratio_invariance(self, lp, cp, k):
        a = characteristic_impedance(LineParams(lp, cp))
        b = characteristic_impedance(LineParams(lp * k, cp * k))
        assert b == pytest.approx(a, rel=1e-12)


class TestResistance:
    def two_node_bus(self, n_transceivers: int = 2):
        topo = with_line(10.0, end_loads=(NodeLoad.termination(), NodeLoad.termination()))
        for i in range(n_transceivers):
            topo = attach_device(topo, 1.0 + 0.5 * i, 0.1, NodeLoad.transceiver(), f"T{i}")
        return topo

    def test_two_participants(self):
        assert total_bus_resistance(self.two_node_bus()) == pytest.approx(59.8973, abs=5e-4)

    def test_added_transceiver_delta(self):
        base = total_bus_resistance(self.two_node_bus(2))
        more = total_bus_resistance(self.two_node_bus(3))
        assert base - more == pytest.approx(0.0512, abs=5e-4)

    def test_single_termination(self):
        assert total_bus_resistance([NodeLoad.termination(120), NodeLoad.open()]) == pytest.approx(120)

    def test_ten_transceivers_hand_check(self):
        # 120 || 120 = 60; 70k / 10 = 7k; 60 || 7000 = 60 * 7000 / 7060
        expected = 60 * 7000 / 7060
        assert total_bus_resistance(self.two_node_bus(10)) == pytest.approx(expected, rel=1e-12)

    def test_all_open(self):
        with pytest.raises(ValueError):
            total_bus_resistance([NodeLoad.open(), NodeLoad.open()])

    @given(st.lists(st.floats(1.0, 1e6), min_size=1, max_size=12), st.randoms(use_true_random=False))
    def test_permutation_and_monotone(self, rs, rnd):
        loads = [NodeLoad("custom", r) for r in rs]
        shuffled = loads[:]
        rnd.shuffle(shuffled)
        total = total_bus_resistance(loads)
        assert total_bus_resistance(shuffled) == pytest.approx(total, rel=1e-12)
        assert total_bus_resistance(loads + [NodeLoad("custom", 1e3)]) <= total
        assert total_bus_resistance(loads + [NodeLoad.open()]) == pytest.approx(total, rel=1e-12)


class TestAttachRemove:
    def test_attach_does_not_mutate(self):
        base = attack_topology()
        before = serialize_topology(base)
        out = compromised_topology(base)
        assert serialize_topology(base) == before
        assert len(out.stubs) == len(base.stubs) + 1

    def test_duplicate_label(self):
        with pytest.raises(TopologyError):
            attach_device(attack_topology(), 3.0, 0.1, NodeLoad.transceiver(), "DME")

    @pytest.mark.parametrize("pos", [0.0, 14.0, -1.0, 20.0])
    def test_out_of_range(self, pos):
        with pytest.raises(TopologyError):
            attach_device(attack_topology(), pos, 0.1, NodeLoad.transceiver(), "X")

    def test_coincident_stub_merges(self):
        topo = attach_device(attack_topology(), ECU_DISTANCES["DME"], 0.1, NodeLoad.transceiver(), "X")
        net = build_network(topo)
        junctions = [nd for nd in net.nodes if nd.name == f"bus@{ECU_DISTANCES['DME']:g}"]
        assert len(junctions) == 1
        assert len(net.incident(net.nodes.index(junctions[0]))) == 4

    @pytest.mark.parametrize("length", [0.0, -0.1])
    def test_nonpositive_stub_rejected(self, length):
        with pytest.raises(TopologyError, match="X"):
            attach_device(with_line(10.0, end_loads=(NodeLoad.termination(), NodeLoad.termination())),
                          4.0, length, NodeLoad.transceiver(), "X")

    def test_remove(self):
        topo = remove_device(attack_topology(), "DSC")
        assert "DSC" not in topo.labels and len(topo.stubs) == 6

    def test_remove_unknown(self):
        with pytest.raises(KeyError):
            remove_device(attack_topology(), "Nope")


labels = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ_", min_size=1, max_size=6)


@st.composite
def topologies(draw):
    length = draw(st.floats(1.0, 50.0))
    z0 = draw(st.floats(50.0, 200.0))
    v = draw(st.floats(1e8, 3e8))
    params = LineParams.from_z0_velocity(z0, v)
    names = draw(st.lists(labels, unique=True, max_size=5))
    topo = Topology(main_segments=((length, params),),
                    end_loads=(NodeLoad.termination(draw(st.floats(10, 1e3))),
                               draw(st.sampled_from([NodeLoad.open(), NodeLoad.termination(120.0)]))))
    for name in names:
        pos = draw(st.floats(0.01 * length, 0.99 * length))
        load = NodeLoad("custom", draw(st.floats(1.0, 1e6)), draw(st.floats(0, 1e-10)))
        topo = attach_device(topo, pos, draw(st.floats(0.01, 2.0)), load, name)
    return topo


@settings(max_examples=60)
@given(topologies())
def test_serialize_round_trip(topo):
    back = parse_topology(serialize_topology(topo))
    assert back.total_length == topo.total_length
    assert back.line.z0 == pytest.approx(topo.line.z0, rel=1e-12)
    assert back.propagation_velocity == pytest.approx(topo.propagation_velocity, rel=1e-12)
    assert back.end_loads == topo.end_loads
    assert [(s.label, s.position, s.length, s.load.resistance, s.load.capacitance) for s in back.stubs] == \
        [(s.label, s.position, s.length, s.load.resistance, s.load.capacitance) for s in topo.stubs]
    assert back.measurement_position == topo.measurement_position


@given(topologies(), st.floats(0.02, 0.98), st.floats(0.01, 1.0))
def test_attach_never_mutates(topo, frac, stub):
    before = serialize_topology(topo)
    pos = frac * topo.total_length
    out = attach_device(topo, pos, stub, NodeLoad.transceiver(), "ZZZZZZZ")
    assert serialize_topology(topo) == before
    assert out.stub("ZZZZZZZ").position == pos
    assert math.isclose(out.total_length, topo.total_length)


def test_default_line_velocity():
    assert DEFAULT_LINE.velocity == pytest.approx(2e8, rel=1e-12)
    assert DEFAULT_LINE.z0 == pytest.approx(120, rel=1e-12)
