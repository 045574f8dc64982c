import pytest

from cantdr import scenario
from cantdr.topology import NodeLoad, attach_device, with_line


def matched_bus(length: float = 10.0):
    return with_line(length, end_loads=(NodeLoad.termination(), NodeLoad.termination()))


def stub_bus(position: float = 4.0, stub_length: float = 0.1, load: NodeLoad | None = None):
    return attach_device(matched_bus(), position, stub_length, load or NodeLoad.transceiver(), "ECU")


@pytest.fixture(scope="session")
def attack_traces():
    return scenario.scenario_traces()
