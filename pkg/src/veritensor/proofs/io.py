"""Versioned binary proof container and a JSON debug dump.

Layout: magic "VTPF", version u16, field modulus (length-prefixed LE),
q u8, l u8, then the node tree depth-first: level u8, kind u8, claim
bytes (u32 length prefix, canonical claim encoding), child count u32.
Round-trips are bit-exact because the claim encoding is canonical
(sorted keys, fixed integer layout).
"""

from __future__ import annotations

import json

from ..errors import ProofFormatError
from .nodes import Claim, Level, ProofNode, encode_claim, make_node

MAGIC = b"VTPF"
VERSION = 1

KINDS = (
    "merge", "gemm", "gemm_x", "gemm_w", "gemm_x_block", "gemm_w_block",
    "gemm_pair", "gemm_head", "gemm_rescale",
    "rmsnorm", "rms_seg", "rms_row",
    "embedding", "embed_seg", "embed_row",
    "rope", "rope_head", "rope_row",
    "softmax", "sm_seg", "sm_head", "sm_row",
    "sigmoid", "silu", "act_seg", "act_row",
    "ew_add", "ew_mul", "ew_seg", "ew_row",
    "weighted_sum", "wsum_seg", "wsum_row",
    "topk", "sel_group", "sel_group_row", "sel_sorted_group",
    "sel_sorted_group_row", "expert_selector",
    "layer", "model",
)
_KIND_ID = {k: i for i, k in enumerate(KINDS)}
_LEVEL_ID = {lv: i for i, lv in enumerate(Level.ALL)}


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ProofFormatError(f"truncated proof at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "little")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "little")

    def done(self) -> bool:
        return self.pos == len(self.raw)


def _read_int(r: _Reader) -> int:
    sign = r.u8()
    if sign not in (0, 1):
        raise ProofFormatError("bad integer sign byte")
    mag = int.from_bytes(r.take(r.u32()), "big")
    return -mag if sign else mag


def _read_str(r: _Reader) -> str:
    return r.take(r.u32()).decode("utf-8")


def _read_value(r: _Reader):
    tag = r.u8()
    if tag == 0:
        return _read_int(r)
    if tag == 1:
        return r.take(r.u32())
    if tag == 2:
        return _read_str(r)
    if tag == 3:
        return [_read_int(r) for _ in range(r.u32())]
    if tag == 4:
        return [r.take(r.u32()) for _ in range(r.u32())]
    if tag == 5:
        return r.u8() == 1
    raise ProofFormatError(f"bad value tag {tag}")


def _read_dict(r: _Reader) -> dict:
    return {_read_str(r): _read_value(r) for _ in range(r.u32())}


def decode_claim(raw: bytes) -> Claim:
    r = _Reader(raw)
    if r.take(6) != b"VTCLM1":
        raise ProofFormatError("bad claim magic")
    kind = _read_str(r)
    name = _read_str(r)
    input_evals = _read_dict(r)
    output_eval = _read_int(r) if r.u8() else None
    weight_digest = r.take(32) if r.u8() else None
    aux = _read_dict(r)
    openings = _read_dict(r) if r.u8() else None
    claim = Claim(kind=kind, name=name, input_evals=input_evals,
                  output_eval=output_eval, weight_digest=weight_digest,
                  aux=aux, openings=openings)
    if not r.done():
        raise ProofFormatError("trailing bytes in claim")
    return claim


def _write_node(root: ProofNode, out: list) -> None:
    stack = [root]
    while stack:
        node = stack.pop()
        try:
            out.append(bytes([_LEVEL_ID[node.level], _KIND_ID[node.claim.kind]]))
        except KeyError as e:
            raise ProofFormatError(f"unregistered level or kind: {e}") from None
        cb = encode_claim(node.claim)
        out.append(len(cb).to_bytes(4, "little"))
        out.append(cb)
        out.append(len(node.children).to_bytes(4, "little"))
        stack.extend(reversed(node.children))


def serialize_proof(root: ProofNode, modulus: int, q: int, l: int) -> bytes:
    mod_raw = modulus.to_bytes((modulus.bit_length() + 7) // 8, "little")
    out = [MAGIC, VERSION.to_bytes(2, "little"),
           bytes([len(mod_raw)]), mod_raw, bytes([q, l])]
    _write_node(root, out)
    return b"".join(out)


def _read_node(r: _Reader) -> ProofNode:
    # iterative build: frames of (level, claim, wanted, children)
    def read_header():
        lv_id, kd_id = r.u8(), r.u8()
        if lv_id >= len(Level.ALL) or kd_id >= len(KINDS):
            raise ProofFormatError(f"bad level/kind ids at byte {r.pos}")
        raw = r.take(r.u32())
        claim = decode_claim(raw)
        if claim.kind != KINDS[kd_id]:
            raise ProofFormatError("kind id disagrees with claim")
        n_children = r.u32()
        if n_children > 1_000_000:
            raise ProofFormatError("implausible child count")
        return Level.ALL[lv_id], claim, raw, n_children

    level, claim, raw, wanted = read_header()
    stack = [[level, claim, raw, wanted, []]]
    while True:
        frame = stack[-1]
        if len(frame[4]) == frame[3]:
            node = make_node(frame[0], frame[1], frame[4], claim_bytes=frame[2])
            stack.pop()
            if not stack:
                return node
            stack[-1][4].append(node)
        else:
            level, claim, raw, wanted = read_header()
            stack.append([level, claim, raw, wanted, []])


def deserialize_proof(raw: bytes) -> tuple:
    """Returns (root node, modulus, q, l)."""
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise ProofFormatError("bad proof magic")
    if r.u16() != VERSION:
        raise ProofFormatError("unsupported proof version")
    modulus = int.from_bytes(r.take(r.u8()), "little")
    q, l = r.u8(), r.u8()
    root = _read_node(r)
    if not r.done():
        raise ProofFormatError("trailing bytes after proof tree")
    return root, modulus, q, l


# ---------------------------------------------------------------------------
# JSON debug dump


def _jsonable(v):
    if isinstance(v, bytes):
        return {"hex": v.hex()}
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def node_to_json(node: ProofNode, include_openings: bool = False) -> dict:
    c = node.claim
    out = {
        "level": node.level,
        "kind": c.kind,
        "digest": node.digest.hex(),
    }
    if c.name:
        out["name"] = c.name
    if c.input_evals:
        out["input_evals"] = dict(c.input_evals)
    if c.output_eval is not None:
        out["output_eval"] = c.output_eval
    if c.weight_digest is not None:
        out["weight_digest"] = c.weight_digest.hex()
    if c.aux:
        out["aux"] = {k: _jsonable(v) for k, v in c.aux.items()}
    if include_openings and c.openings:
        out["openings"] = {k: _jsonable(v) for k, v in c.openings.items()}
    if node.children:
        out["children"] = [node_to_json(ch, include_openings) for ch in node.children]
    return out


def dump_json(root: ProofNode, include_openings: bool = False) -> str:
    return json.dumps(node_to_json(root, include_openings), indent=1)
