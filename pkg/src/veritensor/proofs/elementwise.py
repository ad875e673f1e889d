"""Elementwise add/mul proofs and the gated expert-sum proof.

Additions are exact; multiplications divide the double-scale product by
2^q with a recorded remainder.  The second operand is either a committed
parameter (per-segment digest plus Merkle path; a 1 x n parameter row
broadcasts to every input row, sharing leaves across rows) or the output
of an earlier component (linked by its grid evaluation).

The gated expert sum combines the activated experts' outputs with their
per-row gate values: out[r][j] * 2^q + rem == sum_e gate[r][e] * y_e[r][j].
Gate rows are opened at the row level and checked against the gating
activations during the session link pass.
"""

from __future__ import annotations

from ..encoding import hash_segment, seg_eval
from ..merkle import AuthPath, merkle_verify
from ..tensor import check_window
from .context import CheckFailure, Ctx, checker, need
from .gemm import _blocks, _expect_merge_leaves, _promote, need_promoted
from .nodes import Claim, Level, canonical_merge, encode_claim, make_node
from .normact import VSEG_TAG


def ew_segment_claim(op, row, blk, plan, ctx: Ctx, path=None) -> Claim:
    n, seg = plan["n"], plan["seg"]
    real = min(seg, n - blk * seg)
    off = row * plan["x_cols"] + blk * seg
    f = ctx.field
    claim = Claim(
        kind="ew_seg",
        input_evals={"x": seg_eval(op["x"][:real], ctx.z, off, f)},
        output_eval=seg_eval(op["y"][:real], ctx.z, off, f),
        aux={"row": row, "blk": blk},
        openings={k: list(v) for k, v in op.items()},
    )
    if plan["b_mode"] == "commit":
        claim.weight_digest = hash_segment(VSEG_TAG, op["b"], f)
        claim.aux["leaf"] = plan["_leaf_base"] + blk
        claim.openings["path"] = list(path or [])
    else:
        b_off = off if not plan.get("b_broadcast") else blk * seg
        claim.input_evals["b"] = seg_eval(op["b"][:real], ctx.z, b_off, f)
    return claim


def build_elementwise(name, plan, x, b, y, rems, ctx: Ctx, commit_tree=None):
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    mul_mode = plan["op"] == "mul"
    rows = []
    for i in range(a):
        segs = []
        for blk in range(nblocks):
            lo = blk * seg
            real = min(seg, n - lo)
            pad = seg - real
            b_row = 0 if plan.get("b_broadcast") else i
            op = {
                "x": x.row_slice(i, lo, lo + real) + [0] * pad,
                "b": b.row_slice(b_row, lo, lo + real) + [0] * pad,
                "y": y.row_slice(i, lo, lo + real) + [0] * pad,
            }
            if mul_mode:
                op["rem"] = [rems[i * n + j] for j in range(lo, lo + real)] + [0] * pad
            path = None
            if plan["b_mode"] == "commit" and commit_tree is not None:
                path = list(commit_tree.open(plan["_leaf_base"] + blk).siblings)
            segs.append(make_node(Level.SEGMENT,
                                  ew_segment_claim(op, i, blk, plan, ctx, path)))
        rows.append(_promote(Level.ROW, "ew_row", "",
                             canonical_merge(segs, f), {"row": i}))
    kind = "ew_mul" if mul_mode else "ew_add"
    return _promote(Level.COMPONENT, kind, name, canonical_merge(rows, f))


@checker("ew_add")
@checker("ew_mul")
def verify_elementwise(node, plan, ctx: Ctx):
    a, n, seg, q = plan["a"], plan["n"], plan["seg"], ctx.qcfg.q
    nblocks = _blocks(n, seg)
    mul_mode = plan["op"] == "mul"
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = []
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "ew_row" and rn.claim.aux.get("row") == i, "ew:row-kind")
        segs = _expect_merge_leaves(rn.children[0], nblocks)
        for blk, sn in enumerate(segs):
            need(sn.claim.kind == "ew_seg", "ew:seg-kind")
            op = sn.claim.openings or {}
            keys = ("x", "b", "y") + (("rem",) if mul_mode else ())
            arrays = {k: op.get(k) for k in keys}
            need(all(isinstance(v, list) and len(v) == seg for v in arrays.values()),
                 "ew:seg-opening")
            real = min(seg, n - blk * seg)
            need(all(v == 0 for k in keys for v in arrays[k][real:]), "ew:seg-padding")
            if ctx.sample is None or ctx.sample(sn.digest):
                expect = ew_segment_claim(
                    {k: arrays[k] for k in keys}, i, blk, plan, ctx, op.get("path", []))
                need(encode_claim(expect) == encode_claim(sn.claim), "ew:seg-claim")
                for j in range(real):
                    xv, bv, yv = arrays["x"][j], arrays["b"][j], arrays["y"][j]
                    if mul_mode:
                        r = arrays["rem"][j]
                        need(0 <= r < (1 << q), "ew:rem-range")
                        need(yv * (1 << q) + r == xv * bv, "ew:mul-reconstruction")
                    else:
                        need(yv == xv + bv, "ew:additivity")
                    try:
                        check_window(yv)
                    except Exception:
                        raise CheckFailure("ew:window") from None
            if plan["b_mode"] == "commit":
                leaf = plan["_leaf_base"] + blk
                need(sn.claim.aux.get("leaf") == leaf, "ew:leaf-index")
                need(
                    merkle_verify(ctx.model_root, leaf, sn.claim.weight_digest,
                                  AuthPath(leaf, tuple(op.get("path", [])))),
                    "ew:weight-merkle",
                )
            out.extend(arrays["y"][:real])
        need_promoted(rn, rn.children[0], extra_aux={"row": i},
                      tag="ew:row-claim")
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="ew:component-claim")
    ctx.witnesses[plan["out"]] = out


# ---------------------------------------------------------------------------
# gated expert sum


def wsum_segment_claim(op, row, blk, plan, ctx: Ctx) -> Claim:
    n, seg = plan["n"], plan["seg"]
    real = min(seg, n - blk * seg)
    off = row * n + blk * seg
    f = ctx.field
    claim = Claim(
        kind="wsum_seg",
        output_eval=seg_eval(op["out"][:real], ctx.z, off, f),
        aux={"row": row, "blk": blk},
        openings={k: list(v) for k, v in op.items()},
    )
    for e in plan["experts"]:
        claim.input_evals[f"expert:{e}"] = seg_eval(op[f"y:{e}"][:real], ctx.z, off, f)
    return claim


def build_weighted_sum(name, plan, expert_outs, gates, out, rems, ctx: Ctx):
    """gates: QTensor (a x n_experts); expert_outs: expert id -> QTensor."""
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    rows = []
    for i in range(a):
        segs = []
        for blk in range(nblocks):
            lo = blk * seg
            real = min(seg, n - lo)
            pad = seg - real
            op = {
                "out": out.row_slice(i, lo, lo + real) + [0] * pad,
                "rem": [rems[i * n + j] for j in range(lo, lo + real)] + [0] * pad,
            }
            for e in plan["experts"]:
                op[f"y:{e}"] = expert_outs[e].row_slice(i, lo, lo + real) + [0] * pad
            segs.append(make_node(Level.SEGMENT,
                                  wsum_segment_claim(op, i, blk, plan, ctx)))
        row_claim_inner = canonical_merge(segs, f)
        row = _promote(Level.ROW, "wsum_row", "", row_claim_inner, {"row": i})
        row.claim.openings = {"gates": gates.row(i)}
        # openings were added after construction; rebuild the node digest
        rows.append(make_node(Level.ROW, row.claim, row.children))
    return _promote(Level.COMPONENT, "weighted_sum", name, canonical_merge(rows, f),
                    {"experts": list(plan["experts"])})


@checker("weighted_sum")
def verify_weighted_sum(node, plan, ctx: Ctx):
    a, n, seg, q = plan["a"], plan["n"], plan["seg"], ctx.qcfg.q
    nblocks = _blocks(n, seg)
    experts = plan["experts"]
    need(node.claim.aux.get("experts") == list(experts), "wsum:experts")
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = []
    gates_flat = []
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "wsum_row" and rn.claim.aux.get("row") == i,
             "wsum:row-kind")
        gates = (rn.claim.openings or {}).get("gates")
        need(isinstance(gates, list) and len(gates) == plan["n_experts"],
             "wsum:gates-opening")
        gates_flat.extend(gates)
        segs = _expect_merge_leaves(rn.children[0], nblocks)
        for blk, sn in enumerate(segs):
            need(sn.claim.kind == "wsum_seg", "wsum:seg-kind")
            op = sn.claim.openings or {}
            keys = ["out", "rem"] + [f"y:{e}" for e in experts]
            arrays = {k: op.get(k) for k in keys}
            need(all(isinstance(v, list) and len(v) == seg for v in arrays.values()),
                 "wsum:seg-opening")
            real = min(seg, n - blk * seg)
            if ctx.sample is None or ctx.sample(sn.digest):
                expect = wsum_segment_claim(arrays, i, blk, plan, ctx)
                need(encode_claim(expect) == encode_claim(sn.claim), "wsum:seg-claim")
                for j in range(real):
                    acc = 0
                    for e in experts:
                        acc += gates[e] * arrays[f"y:{e}"][j]
                    r = arrays["rem"][j]
                    need(0 <= r < (1 << q), "wsum:rem-range")
                    need(arrays["out"][j] * (1 << q) + r == acc, "wsum:reconstruction")
                    try:
                        check_window(arrays["out"][j])
                    except Exception:
                        raise CheckFailure("wsum:window") from None
            out.extend(arrays["out"][:real])
        need_promoted(rn, rn.children[0], extra_aux={"row": i},
                      openings={"gates": gates}, tag="wsum:row-claim")
    need_promoted(node, node.children[0],
                  extra_aux={"experts": list(experts)},
                  name=node.claim.name, tag="wsum:component-claim")
    ctx.witnesses[plan["out"]] = out
    ctx.witnesses[plan["gates_out"]] = gates_flat
