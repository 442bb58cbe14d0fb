import math
from fractions import Fraction


def ceil_fraction(fraction: float, total: int) -> int:
    """ceil(fraction * total) with fraction read as the nearest short decimal.

    0.07 * 100 is 7.000000000000001 in floats; here it is exactly 7.
    """
    return math.ceil(Fraction(fraction).limit_denominator(10**6) * total)
