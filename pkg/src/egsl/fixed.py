"""Fixed-point quantities with four fractional digits.

Consensus-relevant state never holds binary floats: kWh, currency and
temperatures are stored as integers counting 1/10000 units.
"""

from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from fractions import Fraction

from .errors import ValidationError

SCALE = 10_000
QUANTUM = Decimal("0.0001")


def to_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise ValidationError("boolean is not a quantity")
    if isinstance(value, Fraction):
        return Decimal(value.numerator) / Decimal(value.denominator)
    if isinstance(value, float):
        return Decimal(repr(value))
    try:
        return Decimal(value)
    except (InvalidOperation, TypeError):
        raise ValidationError(f"not a decimal quantity: {value!r}") from None


def quantize(value) -> Decimal:
    """Round half-even to four decimal places."""
    if isinstance(value, Fraction):
        return from_fixed(round(value * SCALE))
    return to_decimal(value).quantize(QUANTUM, rounding=ROUND_HALF_EVEN)


def to_fixed(value) -> int:
    if isinstance(value, Fraction):
        return round(value * SCALE)  # Fraction.__round__ is half-even
    return int(quantize(value).scaleb(4))


def from_fixed(units: int) -> Decimal:
    return (Decimal(units) / SCALE).quantize(QUANTUM)


def fmt(units: int) -> str:
    return str(from_fixed(units))


def mul_fixed(a: int, b: int) -> int:
    """Product of two fixed-point values, rounded half-even back to four places."""
    return round(Fraction(a * b, SCALE))
