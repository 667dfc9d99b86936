"""Rate units.

Every formula in this package is evaluated in nats; bits are the default
display unit. Conversion is a multiplication by ``ln 2``.
"""

import enum
import math

import numpy as np

LN2 = math.log(2.0)


class RateUnit(str, enum.Enum):
    BITS = "bits"
    NATS = "nats"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown rate unit {value!r}; expected 'bits' or 'nats'") from None


def to_nats(rate, unit=RateUnit.BITS):
    """Convert ``rate`` (scalar or array) expressed in ``unit`` to nats."""
    unit = RateUnit.parse(unit)
    if unit is RateUnit.NATS:
        return rate
    return np.multiply(rate, LN2) if isinstance(rate, np.ndarray) else rate * LN2


def from_nats(rate, unit=RateUnit.BITS):
    """Convert a rate in nats to ``unit``."""
    unit = RateUnit.parse(unit)
    if unit is RateUnit.NATS:
        return rate
    return np.divide(rate, LN2) if isinstance(rate, np.ndarray) else rate / LN2


def convert(rate, src, dst):
    return from_nats(to_nats(rate, src), dst)
