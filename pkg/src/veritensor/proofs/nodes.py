"""Proof DAG nodes, claims, canonical encoding and the merge algebra.

A claim is the public assertion bundle one node exposes: field-valued
input/output encodings, an optional weight digest, auxiliary sums and
(for leaves) the opened witness values.  Nodes bind their whole subtree
through a digest over (level, claim bytes, child digests), so any
mutation below a node changes its digest.

Merging is deterministic and binary; lists of nodes always combine as
the left-leaning fold merge(merge(a, b), c)...  Aux keys participate in
merging by prefix convention:

    f_...  field elements, added in the field
    i_...  plain integers, added exactly
    v_...  field vectors, added elementwise (lengths must agree)

all other aux keys are leaf- or wrap-local and are dropped by merges.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field

from ..errors import IncompatibleNodesError, ProofFormatError
from ..field import Field


class Level:
    SEGMENT = "segment"
    MERGE = "merge"
    HEAD = "head"
    ROW = "row"
    COMPONENT = "component"
    LAYER = "layer"
    MODEL = "model"
    INPUT_BLOCK = "input_block"
    WEIGHT_BLOCK = "weight_block"
    BLOCK_PAIR = "block_pair"
    GROUP = "group"
    GROUP_ROW = "group_row"
    SORTED_GROUP = "sorted_group"
    SORTED_GROUP_ROW = "sorted_group_row"

    ALL = (
        SEGMENT, MERGE, HEAD, ROW, COMPONENT, LAYER, MODEL,
        INPUT_BLOCK, WEIGHT_BLOCK, BLOCK_PAIR,
        GROUP, GROUP_ROW, SORTED_GROUP, SORTED_GROUP_ROW,
    )


@dataclass
class Claim:
    kind: str
    name: str = ""
    input_evals: dict = dc_field(default_factory=dict)   # key -> field element
    output_eval: int | None = None
    weight_digest: bytes | None = None
    aux: dict = dc_field(default_factory=dict)
    openings: dict | None = None


@dataclass
class Verdict:
    accepted: bool
    failure: tuple | None = None  # (node path, constraint name)

    def __bool__(self) -> bool:
        return self.accepted


# ---------------------------------------------------------------------------
# canonical encoding


# length prefixes precomputed for the hot small-value paths
_U32_CACHE = tuple(i.to_bytes(4, "little") for i in range(4096))
_INT_PREFIX = (
    tuple(b"\x00" + _U32_CACHE[n] for n in range(64)),
    tuple(b"\x01" + _U32_CACHE[n] for n in range(64)),
)
_INT_ZERO = b"\x00\x00\x00\x00\x00"


def _enc_u32(n: int) -> bytes:
    return _U32_CACHE[n] if n < 4096 else n.to_bytes(4, "little")


def _enc_int(v: int) -> bytes:
    if v == 0:
        return _INT_ZERO
    neg = 0
    if v < 0:
        neg = 1
        v = -v
    nbytes = (v.bit_length() + 7) >> 3
    prefix = _INT_PREFIX[neg][nbytes] if nbytes < 64 else (
        (b"\x01" if neg else b"\x00") + _enc_u32(nbytes))
    return prefix + v.to_bytes(nbytes, "big")


def _enc_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _enc_u32(len(raw)) + raw


def _enc_value(v) -> bytes:
    tv = type(v)
    if tv is int:
        return b"\x00" + _enc_int(v)
    if tv is bool:
        return b"\x05" + (b"\x01" if v else b"\x00")
    if tv is bytes:
        return b"\x01" + _enc_u32(len(v)) + v
    if tv is str:
        return b"\x02" + _enc_str(v)
    if tv is list or tv is tuple:
        if not v:
            return b"\x03" + _U32_CACHE[0]
        parts = []
        if type(v[0]) is int:
            enc = _enc_int
            for x in v:
                if type(x) is not int:
                    raise ProofFormatError("mixed-type list in claim")
                parts.append(enc(x))
            return b"\x03" + _enc_u32(len(v)) + b"".join(parts)
        if type(v[0]) is bytes:
            for x in v:
                if type(x) is not bytes:
                    raise ProofFormatError("mixed-type list in claim")
                parts.append(_enc_u32(len(x)) + x)
            return b"\x04" + _enc_u32(len(v)) + b"".join(parts)
        raise ProofFormatError(f"unencodable list in claim: {v[:3]!r}")
    raise ProofFormatError(f"unencodable claim value type {tv!r}")


def _enc_dict(d: dict) -> bytes:
    parts = [_enc_u32(len(d))]
    for k in sorted(d):
        parts.append(_enc_str(k))
        parts.append(_enc_value(d[k]))
    return b"".join(parts)


def encode_claim(c: Claim) -> bytes:
    parts = [b"VTCLM1", _enc_str(c.kind), _enc_str(c.name)]
    parts.append(_enc_dict(c.input_evals))
    if c.output_eval is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _enc_int(c.output_eval))
    if c.weight_digest is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + c.weight_digest)
    parts.append(_enc_dict(c.aux))
    if c.openings is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _enc_dict(c.openings))
    return b"".join(parts)


def _node_digest(level: str, claim_bytes: bytes, child_digests) -> bytes:
    h = hashlib.sha256()
    h.update(b"VT1\x00node")
    h.update(_enc_str(level))
    h.update(_enc_u32(len(claim_bytes)))
    h.update(claim_bytes)
    h.update(_enc_u32(len(child_digests)))
    for d in child_digests:
        h.update(d)
    return h.digest()


@dataclass
class ProofNode:
    level: str
    claim: Claim
    children: tuple = ()
    digest: bytes = b""

    def __post_init__(self):
        if not self.digest:
            self.digest = _node_digest(
                self.level, encode_claim(self.claim), [c.digest for c in self.children]
            )

    def walk(self, path=""):
        """Depth-first (node, path) pairs; path segments are child indexes
        annotated with level and claim name for readable failure reports.
        Iterative: fold chains make the tree deep."""
        stack = [(self, path)]
        while stack:
            node, prefix = stack.pop()
            label = f"{node.level}:{node.claim.kind}"
            if node.claim.name:
                label += f":{node.claim.name}"
            here = f"{prefix}/{label}" if prefix else label
            yield node, here
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((node.children[i], f"{here}[{i}]"))


def make_node(level: str, claim: Claim, children=(), claim_bytes=None) -> ProofNode:
    """claim_bytes, when given, must be the canonical encoding of claim; the
    digest pass re-encodes and rejects any disagreement."""
    children = tuple(children)
    if claim_bytes is None:
        return ProofNode(level=level, claim=claim, children=children)
    digest = _node_digest(level, claim_bytes, [c.digest for c in children])
    return ProofNode(level=level, claim=claim, children=children, digest=digest)


# ---------------------------------------------------------------------------
# merging


def combine_claims(claims, field: Field) -> Claim:
    """Deterministic additive combination used by every merge node."""
    out = Claim(kind="merge")
    for c in claims:
        for k, v in c.input_evals.items():
            out.input_evals[k] = field.add(out.input_evals.get(k, 0), v)
        if c.output_eval is not None:
            out.output_eval = field.add(
                0 if out.output_eval is None else out.output_eval, c.output_eval
            )
        for k, v in c.aux.items():
            if k.startswith("f_"):
                out.aux[k] = field.add(out.aux.get(k, 0), v)
            elif k.startswith("i_"):
                out.aux[k] = out.aux.get(k, 0) + v
            elif k.startswith("v_"):
                prev = out.aux.get(k)
                if prev is None:
                    out.aux[k] = list(v)
                else:
                    if len(prev) != len(v):
                        raise IncompatibleNodesError(
                            f"vector aux {k} length mismatch {len(prev)} != {len(v)}"
                        )
                    out.aux[k] = [field.add(a, b) for a, b in zip(prev, v)]
    return out


def merge(left: ProofNode, right: ProofNode, field: Field) -> ProofNode:
    """Binary merge; the parent claim is the additive combination."""
    claim = combine_claims([left.claim, right.claim], field)
    return make_node(Level.MERGE, claim, [left, right])


def canonical_merge(nodes, field: Field) -> ProofNode:
    """Left-leaning fold over the node list; the canonical tree shape."""
    nodes = list(nodes)
    if not nodes:
        raise IncompatibleNodesError("cannot merge an empty node list")
    acc = nodes[0]
    for n in nodes[1:]:
        acc = merge(acc, n, field)
    return acc


def wrap(level: str, claim: Claim, inner: ProofNode) -> ProofNode:
    return make_node(level, claim, [inner])


def iter_level(node: ProofNode, level: str):
    """All nodes of one level below (and including) node, in DAG order."""
    for n, _ in node.walk():
        if n.level == level:
            yield n


def count_levels(node: ProofNode) -> dict:
    counts: dict = {}
    for n, _ in node.walk():
        counts[n.level] = counts.get(n.level, 0) + 1
    return counts
