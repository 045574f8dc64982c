"""SI-suffixed number parsing shared by topology files and CLI flags."""
from __future__ import annotations

import re
from decimal import Decimal

_EXPONENTS = {"": 0, "k": 3, "M": 6, "m": -3, "u": -6, "n": -9, "p": -12}

# 'm' is a prefix, never a unit, so "10m" is 0.01 and lengths are written bare.
_UNITS = ("Hz", "ohm", "Ohm", "bps", "s", "V", "F", "H", "S", "A", "Ω")

_NUMBER_RE = re.compile(
    r"^(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"(?P<prefix>[kMmunp]?)"
    r"(?P<unit>" + "|".join(_UNITS) + r")?$"
)


def parse_si(text: str) -> float:
    """Parse ``"3ns"``, ``"70k"``, ``"16p"``, ``"2e8"`` or ``"1mV"`` into a float."""
    s = text.strip()
    m = _NUMBER_RE.match(s)
    if m is None:
        raise ValueError(f"not a number: {text!r}")
    # decimal scaling keeps "3ns" equal to the literal 3e-9
    return float(Decimal(m.group("num")).scaleb(_EXPONENTS[m.group("prefix")]))


def format_si(value: float) -> str:
    """Lossless textual form of *value* (``repr`` round-trips exactly)."""
    return repr(float(value))
