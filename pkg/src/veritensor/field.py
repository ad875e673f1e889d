"""Prime field arithmetic and the signed-integer embedding.

All protocol algebra happens in F_p for a fixed prime p (default
2^64 - 2^32 + 1, the Goldilocks prime).  Witness values are signed
integers inside the window [-2^62, 2^62]; the embedding v -> v mod p is
injective there because 2 * 2^62 < p.  Elements are kept in canonical
reduced form [0, p) at all times and encode as 8 bytes little-endian.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadConfigError, OutOfRangeError

GOLDILOCKS_P = (1 << 64) - (1 << 32) + 1

#: Injectivity window for signed witness values.
SIGNED_WINDOW = 1 << 62

# Deterministic Miller-Rabin bases, valid for all n < 3.3 * 10^24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


class Field:
    """A prime field with canonical-form element arithmetic.

    Elements are plain ints in [0, modulus).  Only moduli between 61 and
    64 bits are accepted so that the fixed 8-byte little-endian encoding
    stays canonical and the 2^62 signed window embeds injectively.
    """

    __slots__ = ("modulus", "bits")

    def __init__(self, modulus: int = GOLDILOCKS_P):
        if not is_prime(modulus):
            raise BadConfigError(f"modulus {modulus} is not prime")
        bits = modulus.bit_length()
        if not 61 <= bits <= 64:
            raise BadConfigError(f"modulus must be 61..64 bits, got {bits}")
        self.modulus = modulus
        self.bits = bits

    def __repr__(self) -> str:
        return f"Field(0x{self.modulus:x})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Field) and other.modulus == self.modulus

    def __hash__(self) -> int:
        return hash(("Field", self.modulus))

    # -- arithmetic ----------------------------------------------------

    def add(self, a: int, b: int) -> int:
        c = a + b
        return c - self.modulus if c >= self.modulus else c

    def sub(self, a: int, b: int) -> int:
        c = a - b
        return c + self.modulus if c < 0 else c

    def mul(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def neg(self, a: int) -> int:
        return self.modulus - a if a else 0

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("field inverse of zero")
        return pow(a, self.modulus - 2, self.modulus)

    def pow(self, a: int, e: int) -> int:
        return pow(a, e, self.modulus)

    # -- embedding and encoding ----------------------------------------

    def embed_signed(self, v: int) -> int:
        """Map a signed witness integer into the field, injectively.

        Negative v maps to p - |v|.  Values outside the 2^62 window are a
        hard error rather than being widened or wrapped.
        """
        if v > SIGNED_WINDOW or v < -SIGNED_WINDOW:
            raise OutOfRangeError(f"|{v}| exceeds 2^62 embedding window")
        return v % self.modulus

    def encode(self, a: int) -> bytes:
        """Canonical 8-byte little-endian encoding of a reduced element."""
        return a.to_bytes(8, "little")

    def decode(self, raw: bytes) -> int:
        if len(raw) != 8:
            raise ValueError("field element encoding must be 8 bytes")
        a = int.from_bytes(raw, "little")
        if a >= self.modulus:
            raise ValueError("non-canonical field element encoding")
        return a

    def charpoly_eval(self, values, t: int) -> int:
        """Evaluate prod_i (t - v_i) at the point t.

        The values are signed witness integers; each factor embeds them
        on the fly.  The empty product is 1.  Equal multisets give equal
        evaluations at every t, which is the basis of the permutation
        and top-k arguments.
        """
        p = self.modulus
        acc = 1
        for v in values:
            acc = acc * ((t - v) % p) % p
        return acc


@dataclass(frozen=True)
class Challenge:
    """The per-session challenge pair.

    ``z`` is the matrix-encoding point, ``t`` the permutation-check
    point.  Both are nonzero by construction (derivation re-draws on a
    zero, see transcript.challenge_field).
    """

    z: int
    t: int

    def __post_init__(self):
        if self.z == 0 or self.t == 0:
            raise BadConfigError("challenge points must be nonzero")


DEFAULT_FIELD = Field()
