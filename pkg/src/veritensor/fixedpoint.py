"""Fixed-point numeric foundation.

Real values are carried as integers scaled by 2^q.  The exp2 fractional
lookup tables turn exponentiation into a table read plus a shift; they
come in two directions, NEG (entries 2^(-i/2^l) * 2^q, used by softmax)
and POS (entries 2^(+i/2^l) * 2^q, used by sigmoid and SiLU).

Table construction rounds half-away-from-zero on values computed with
120-bit intermediates, so tables are bit-identical everywhere.
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field as dc_field

from mpmath import mp, mpf

from .errors import BadConfigError, NegativeDividendError, NegativeInputError

mp.prec = 120

MAX_SCALE_BITS = 24


class Direction(enum.Enum):
    NEG = "neg"
    POS = "pos"


@dataclass(frozen=True)
class QuantConfig:
    """Scale and table parameters for the quantized kernels.

    q: scale bits (values are reals times 2^q)
    l: table index bits (table length 2^l)
    neg_inf_q: padding constant for unused softmax lanes; large enough in
        magnitude that padded lanes shift down to weight exactly 0.
    """

    q: int = 16
    l: int = 8
    neg_inf_q: int = -(1 << 40)

    def __post_init__(self):
        if not (1 <= self.l <= self.q <= MAX_SCALE_BITS):
            raise BadConfigError(f"need 1 <= l <= q <= {MAX_SCALE_BITS}")
        if self.neg_inf_q >= 0 or -self.neg_inf_q < (1 << (self.q + 8)):
            raise BadConfigError("neg_inf_q must be negative with |v| >= 2^(q+8)")

    @property
    def one(self) -> int:
        return 1 << self.q

    @property
    def frac_mask(self) -> int:
        return (1 << self.q) - 1


@dataclass(frozen=True)
class Exp2Table:
    direction: Direction
    q: int
    l: int
    entries: tuple = dc_field(repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> int:
        return self.entries[i]


def _round_half_away(v) -> int:
    if v >= 0:
        return int(mp.floor(v + mpf(1) / 2))
    return -int(mp.floor(-v + mpf(1) / 2))


def round_scaled(value, scale_bits: int) -> int:
    """round(value * 2^scale_bits), half away from zero, exact inputs."""
    return _round_half_away(mpf(value) * (1 << scale_bits))


def log2e_q(q: int) -> int:
    """The constant round(log2(e) * 2^q).

    q = 0 is allowed for the degenerate round(log2 e) = 1 case even
    though the kernels themselves require q >= 1.
    """
    if not 0 <= q <= MAX_SCALE_BITS:
        raise BadConfigError(f"scale bits must be in [0, {MAX_SCALE_BITS}]")
    return _round_half_away((1 / mp.log(2)) * (1 << q))


@functools.lru_cache(maxsize=None)
def _table(q: int, l: int, direction: Direction) -> Exp2Table:
    sign = -1 if direction is Direction.NEG else 1
    n = 1 << l
    entries = tuple(
        _round_half_away(mp.power(2, mpf(sign * i) / n) * (1 << q)) for i in range(n)
    )
    return Exp2Table(direction=direction, q=q, l=l, entries=entries)


def build_exp2_frac_table(cfg: QuantConfig, direction: Direction) -> Exp2Table:
    """Build (or fetch the cached) exp2 fractional table for cfg."""
    return _table(cfg.q, cfg.l, direction)


def isqrt(n: int) -> int:
    """floor(sqrt(n)) for n >= 0; the result r satisfies r^2 <= n < (r+1)^2."""
    if n < 0:
        raise NegativeInputError("isqrt of negative value")
    return math.isqrt(n)


def div_rem(a: int, b: int) -> tuple:
    """Floor division with remainder, a = q*b + r and 0 <= r < b.

    Restricted to non-negative dividends: every verifiable division in
    the protocol is arranged so the dividend is non-negative, keeping the
    remainder constraint one-sided.
    """
    if b <= 0:
        raise ZeroDivisionError("divisor must be positive")
    if a < 0:
        raise NegativeDividendError("dividend must be non-negative")
    return divmod(a, b)


def table_to_json(table: Exp2Table) -> str:
    """Export a table as JSON for cross-implementation golden tests."""
    return json.dumps(
        {
            "direction": table.direction.value,
            "q": table.q,
            "l": table.l,
            "entries": list(table.entries),
        }
    )
