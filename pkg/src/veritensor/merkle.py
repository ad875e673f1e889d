"""Binary Merkle tree over 32-byte digests.

Odd level-ends are promoted by hashing with an all-zero sentinel digest
instead of duplicating the last node, which removes the classic
second-preimage-by-duplication ambiguity.  A single-leaf tree still
performs one combining round: root = H(leaf || sentinel).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ShapeMismatchError

_NODE_TAG = b"VT1\x00merkle-node"
SENTINEL = b"\x00" * 32


def _combine(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(_NODE_TAG + left + right).digest()


@dataclass(frozen=True)
class AuthPath:
    leaf_index: int
    siblings: tuple  # bottom-up, one digest per level


class MerkleTree:
    __slots__ = ("leaf_count", "levels", "root")

    def __init__(self, leaves):
        leaves = list(leaves)
        if not leaves:
            raise ShapeMismatchError("merkle tree needs at least one leaf")
        levels = [leaves]
        while len(levels[-1]) > 1 or len(levels) == 1:
            cur = levels[-1]
            nxt = []
            for i in range(0, len(cur), 2):
                left = cur[i]
                right = cur[i + 1] if i + 1 < len(cur) else SENTINEL
                nxt.append(_combine(left, right))
            levels.append(nxt)
        self.leaf_count = len(leaves)
        self.levels = levels
        self.root = levels[-1][0]

    def open(self, index: int) -> AuthPath:
        if not 0 <= index < self.leaf_count:
            raise IndexError(f"leaf index {index} out of range")
        sibs = []
        i = index
        for level in self.levels[:-1]:
            sib = i ^ 1
            sibs.append(level[sib] if sib < len(level) else SENTINEL)
            i >>= 1
        return AuthPath(leaf_index=index, siblings=tuple(sibs))


def merkle_verify(root: bytes, index: int, leaf: bytes, path: AuthPath) -> bool:
    if index != path.leaf_index or index < 0:
        return False
    acc = leaf
    i = index
    for sib in path.siblings:
        acc = _combine(acc, sib) if i % 2 == 0 else _combine(sib, acc)
        i >>= 1
    return i == 0 and acc == root
