"""Matrix-to-field encodings and canonical segment hashing.

A matrix M of shape a x b maps to the single field value

    mat_eval(M, z) = sum_{i,j} z^(i*b + j) * M[i,j]

for a challenge point z.  Column and row variants decompose a product
X (a x n) * W (n x b) so that

    sum_k col_evals(X, z, b)[k] * row_evals(W, z)[k] == mat_eval(Y, z)

holds exactly when Y = X * W; at a random z a false Y survives with
probability at most (a*b + n) / p.  Segments contribute additively via
an exponent offset, so partial proofs sum to the whole-matrix value.
"""

from __future__ import annotations

import hashlib

from .errors import ShapeMismatchError
from .field import DEFAULT_FIELD, Field
from .tensor import QTensor

_SEG_PREFIX = b"VT1\x00seg\x00"


def horner_eval(values, z: int, field: Field = DEFAULT_FIELD) -> int:
    """sum_j z^j * values[j] over the field, values given as signed ints."""
    p = field.modulus
    acc = 0
    for v in reversed(values):
        acc = (acc * z + v) % p
    return acc


def seg_eval(values, z: int, exp_offset: int, field: Field = DEFAULT_FIELD) -> int:
    """Contribution of a row segment whose first element sits at global
    exponent exp_offset: z^offset * sum_j z^j * values[j]."""
    return field.mul(field.pow(z, exp_offset), horner_eval(values, z, field))


def mat_eval(m: QTensor, z: int, field: Field = DEFAULT_FIELD) -> int:
    p = field.modulus
    zb = pow(z, m.cols, p) if m.cols else 1
    acc = 0
    for i in range(m.rows - 1, -1, -1):
        acc = (acc * zb + horner_eval(m.row(i), z, field)) % p
    return acc


def col_evals(x: QTensor, z: int, b_out: int, field: Field = DEFAULT_FIELD) -> list:
    """Per-column sums sum_i z^(i*b_out) * X[i,k].

    The exponent step uses the width of the product output, not of X,
    which is what makes the product identity close.
    """
    if b_out < 1:
        raise ShapeMismatchError("output width must be >= 1")
    p = field.modulus
    step = pow(z, b_out, p)
    out = [0] * x.cols
    coef = 1
    for i in range(x.rows):
        base = i * x.cols
        for k in range(x.cols):
            v = x.data[base + k]
            if v:
                out[k] = (out[k] + coef * v) % p
        coef = coef * step % p
    return out


def row_evals(w: QTensor, z: int, field: Field = DEFAULT_FIELD) -> list:
    """Per-row Horner evaluations sum_j z^j * W[k,j]."""
    return [horner_eval(w.row(k), z, field) for k in range(w.rows)]


def matmul_check(
    x: QTensor, w: QTensor, y: QTensor, z: int, field: Field = DEFAULT_FIELD
) -> bool:
    """The product identity at point z: <col_evals, row_evals> == mat_eval(Y)."""
    if x.cols != w.rows or y.rows != x.rows or y.cols != w.cols:
        raise ShapeMismatchError("matmul_check shape mismatch")
    p = field.modulus
    cols = col_evals(x, z, w.cols, field)
    rows = row_evals(w, z, field)
    acc = 0
    for c, r in zip(cols, rows):
        acc = (acc + c * r) % p
    return acc == mat_eval(y, z, field) % p


def hash_segment(tag: str, values, field: Field = DEFAULT_FIELD) -> bytes:
    """Canonical digest of a value sequence under an ASCII domain tag.

    Layout: prefix || tag || 0x00 || count_LE8 || each value embedded and
    encoded as 8 bytes little-endian.  Bit-exact across platforms.
    """
    h = hashlib.sha256()
    h.update(_SEG_PREFIX)
    h.update(tag.encode("ascii"))
    h.update(b"\x00")
    values = list(values)
    h.update(len(values).to_bytes(8, "little"))
    for v in values:
        h.update(field.encode(field.embed_signed(v)))
    return h.digest()


def hash_digests(tag: str, digests) -> bytes:
    """Digest of a digest sequence (row digests, wrap bindings)."""
    h = hashlib.sha256()
    h.update(_SEG_PREFIX)
    h.update(tag.encode("ascii"))
    h.update(b"\x01")
    digests = list(digests)
    h.update(len(digests).to_bytes(8, "little"))
    for d in digests:
        h.update(d)
    return h.digest()
