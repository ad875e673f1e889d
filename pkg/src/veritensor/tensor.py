"""Row-major integer matrices used as the witness domain.

Entries are signed fixed-point integers (value * 2^q unless a kernel
states otherwise).  Every entry must stay inside the 2^62 embedding
window; constructors enforce it so later field embeddings cannot fail.
"""

from __future__ import annotations

from .errors import ShapeMismatchError, WindowOverflowError
from .field import SIGNED_WINDOW


def check_window(v: int) -> int:
    if v > SIGNED_WINDOW or v < -SIGNED_WINDOW:
        raise WindowOverflowError(f"value {v} outside the 2^62 window")
    return v


class QTensor:
    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data, validate: bool = True):
        data = list(data)
        if rows < 0 or cols < 0 or len(data) != rows * cols:
            raise ShapeMismatchError(
                f"data length {len(data)} != {rows}x{cols}"
            )
        if validate:
            for v in data:
                check_window(v)
        self.rows = rows
        self.cols = cols
        self.data = data

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "QTensor":
        return cls(rows, cols, [0] * (rows * cols), validate=False)

    @classmethod
    def from_rows(cls, rows_list) -> "QTensor":
        rows_list = [list(r) for r in rows_list]
        if not rows_list:
            raise ShapeMismatchError("need at least one row")
        cols = len(rows_list[0])
        if any(len(r) != cols for r in rows_list):
            raise ShapeMismatchError("ragged rows")
        flat = [v for r in rows_list for v in r]
        return cls(len(rows_list), cols, flat)

    def at(self, i: int, j: int) -> int:
        return self.data[i * self.cols + j]

    def row(self, i: int) -> list:
        return self.data[i * self.cols : (i + 1) * self.cols]

    def row_slice(self, i: int, lo: int, hi: int) -> list:
        """Columns [lo, hi) of row i, zero-padded past the edge."""
        base = i * self.cols
        stop = min(hi, self.cols)
        out = self.data[base + lo : base + stop]
        if hi > self.cols:
            out = out + [0] * (hi - self.cols)
        return out

    def col(self, j: int) -> list:
        return self.data[j :: self.cols] if self.cols else []

    def transpose(self) -> "QTensor":
        out = [0] * (self.rows * self.cols)
        for i in range(self.rows):
            base = i * self.cols
            for j in range(self.cols):
                out[j * self.rows + i] = self.data[base + j]
        return QTensor(self.cols, self.rows, out, validate=False)

    def hslice(self, lo: int, hi: int) -> "QTensor":
        """Column range [lo, hi) as a new tensor."""
        if not 0 <= lo <= hi <= self.cols:
            raise ShapeMismatchError("bad column range")
        out = []
        for i in range(self.rows):
            base = i * self.cols
            out.extend(self.data[base + lo : base + hi])
        return QTensor(self.rows, hi - lo, out, validate=False)

    def shape(self) -> tuple:
        return (self.rows, self.cols)

    def tolist(self) -> list:
        return [self.row(i) for i in range(self.rows)]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, QTensor)
            and other.rows == self.rows
            and other.cols == self.cols
            and other.data == self.data
        )

    def __repr__(self) -> str:
        return f"QTensor({self.rows}x{self.cols})"
