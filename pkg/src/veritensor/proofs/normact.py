"""Row-structured component proofs: RMS normalization, token embedding,
rotary position encoding, softmax and the sigmoid/SiLU activations.

All five share the segment -> row -> component composition; rows fold
their segments (or heads) with the canonical merge and a wrap node adds
the row-level obligations: the integer RMS chain, the vocabulary row
digest, the rotation table digest, the aggregated softmax weight sum.
Claim fields of every leaf are a pure function of its openings, so the
checkers rebuild each claim from the opened values and compare
encodings, then assert the arithmetic identities the openings must
satisfy.
"""

from __future__ import annotations

from ..encoding import hash_digests, hash_segment, seg_eval
from ..merkle import AuthPath, merkle_verify
from ..tensor import check_window
from .context import CheckFailure, Ctx, checker, need
from .gemm import (
    _blocks,
    _expect_merge_leaves,
    _promote,
    need_exact_claim,
    need_promoted,
)
from .nodes import Claim, Level, canonical_merge, encode_claim, make_node, wrap

VSEG_TAG = "vseg"
VROW_TAG = "vrow"
ROPE_ROW_TAG = "rope-row"


def _ceil_div(a: int, b: int) -> int:
    return (a + b - 1) // b


# ---------------------------------------------------------------------------
# RMS normalization


def rms_segment_claim(xs, ws, ys, rems, row, blk, plan, ctx: Ctx, path=None) -> Claim:
    n, seg = plan["n"], plan["seg"]
    real = min(seg, n - blk * seg)
    off = row * plan["x_cols"] + blk * seg
    claim = Claim(
        kind="rms_seg",
        input_evals={"x": seg_eval(xs[:real], ctx.z, off, ctx.field)},
        output_eval=seg_eval(ys[:real], ctx.z, off, ctx.field),
        weight_digest=hash_segment(VSEG_TAG, ws, ctx.field),
        aux={
            "row": row,
            "blk": blk,
            "leaf": plan["_leaf_base"] + blk,
            "i_ssq": sum(v * v for v in xs),
        },
        openings={
            "x": list(xs), "w": list(ws), "y": list(ys), "rem": list(rems),
            "path": list(path or []),
        },
    )
    return claim


def build_rmsnorm(name, plan, x, w_vec, y, row_auxes, ctx: Ctx, commit_tree=None):
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    rows = []
    for i in range(a):
        aux = row_auxes[i]
        segs = []
        for blk in range(nblocks):
            lo, hi = blk * seg, blk * seg + seg
            real = min(seg, n - lo)
            pad = seg - real
            xs = x.row_slice(i, lo, lo + real) + [0] * pad
            ws = list(w_vec[lo : lo + real]) + [0] * pad
            ys = y.row_slice(i, lo, lo + real) + [0] * pad
            rems = list(aux.rems[lo : lo + real]) + [0] * pad
            path = None
            if commit_tree is not None:
                path = list(commit_tree.open(plan["_leaf_base"] + blk).siblings)
            segs.append(
                make_node(Level.SEGMENT,
                          rms_segment_claim(xs, ws, ys, rems, i, blk, plan, ctx, path))
            )
        row_node = _promote(
            Level.ROW, "rms_row", "", canonical_merge(segs, f),
            {"row": i, "sum_sq": aux.sum_sq, "q_div": aux.q_div,
             "r_mod": aux.r_mod, "rms": aux.rms},
            drop={"i_ssq"},
        )
        rows.append(row_node)
    return _promote(Level.COMPONENT, "rmsnorm", name, canonical_merge(rows, f))


@checker("rmsnorm")
def verify_rmsnorm(node, plan, ctx: Ctx):
    a, n, seg, q = plan["a"], plan["n"], plan["seg"], ctx.qcfg.q
    nblocks = _blocks(n, seg)
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = []
    for i, rn in enumerate(row_nodes):
        need(rn.level == Level.ROW and rn.claim.kind == "rms_row", "rms:row-kind")
        need(rn.claim.aux.get("row") == i, "rms:row-index")
        segs = _expect_merge_leaves(rn.children[0], nblocks)
        ssq, q_div, r_mod, rms = (rn.claim.aux.get(k) for k in
                                  ("sum_sq", "q_div", "r_mod", "rms"))
        need(all(isinstance(v, int) for v in (ssq, q_div, r_mod, rms)), "rms:row-aux")
        need(rn.children[0].claim.aux.get("i_ssq") == ssq, "rms:sum-sq-link")
        need(q_div * n + r_mod == ssq and 0 <= r_mod < n, "rms:divmod")
        need(rms >= 1 and rms * rms <= q_div + 1 < (rms + 1) * (rms + 1), "rms:root")
        need_promoted(rn, rn.children[0],
                      extra_aux={"row": i, "sum_sq": ssq, "q_div": q_div,
                                 "r_mod": r_mod, "rms": rms},
                      drop={"i_ssq"}, tag="rms:row-claim")
        den = rms << q
        for blk, sn in enumerate(segs):
            need(sn.claim.kind == "rms_seg", "rms:seg-kind")
            op = sn.claim.openings or {}
            xs, ws, ys, rems = (op.get(k) for k in ("x", "w", "y", "rem"))
            need(all(isinstance(v, list) and len(v) == seg for v in (xs, ws, ys, rems)),
                 "rms:seg-opening")
            real = min(seg, n - blk * seg)
            need(all(v == 0 for arr in (xs, ws, ys, rems) for v in arr[real:]),
                 "rms:seg-padding")
            if ctx.sample is None or ctx.sample(sn.digest):
                expect = rms_segment_claim(xs, ws, ys, rems, i, blk, plan, ctx,
                                           op.get("path", []))
                need(encode_claim(expect) == encode_claim(sn.claim), "rms:seg-claim")
                for xv, wv, yv, r in zip(xs, ws, ys, rems):
                    need(0 <= r < den, "rms:rem-range")
                    need(yv * den + r == (xv * wv) << q, "rms:reconstruction")
            leaf = plan["_leaf_base"] + blk
            need(sn.claim.aux.get("leaf") == leaf, "rms:leaf-index")
            need(
                merkle_verify(ctx.model_root, leaf, sn.claim.weight_digest,
                              AuthPath(leaf, tuple(op.get("path", [])))),
                "rms:weight-merkle",
            )
            out.extend(ys[:real])
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="rms:component-claim")
    ctx.witnesses[plan["out"]] = out


# ---------------------------------------------------------------------------
# embedding


def embed_segment_claim(vals, row, blk, plan, ctx: Ctx) -> Claim:
    n, seg = plan["n"], plan["seg"]
    real = min(seg, n - blk * seg)
    return Claim(
        kind="embed_seg",
        output_eval=seg_eval(vals[:real], ctx.z, row * n + blk * seg, ctx.field),
        weight_digest=hash_segment(VSEG_TAG, vals, ctx.field),
        aux={"row": row, "blk": blk},
        openings={"x": list(vals)},
    )


def embed_row_claim(fold, row, token, leaf, path) -> Claim:
    return Claim(
        kind="embed_row",
        output_eval=fold.claim.output_eval,
        aux={"row": row, "token": token, "leaf": leaf},
        openings={"path": list(path)},
    )


def build_embedding(name, plan, x, ctx: Ctx, commit_tree=None):
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    rows = []
    for i in range(a):
        segs = []
        for blk in range(nblocks):
            real = min(seg, n - blk * seg)
            vals = x.row_slice(i, blk * seg, blk * seg + real) + [0] * (seg - real)
            segs.append(make_node(Level.SEGMENT,
                                  embed_segment_claim(vals, i, blk, plan, ctx)))
        token = plan["tokens"][i]
        leaf = plan["_leaf_base"] + token
        path = list(commit_tree.open(leaf).siblings) if commit_tree is not None else []
        fold = canonical_merge(segs, f)
        rows.append(wrap(Level.ROW, embed_row_claim(fold, i, token, leaf, path),
                         fold))
    return _promote(Level.COMPONENT, "embedding", name, canonical_merge(rows, f))


@checker("embedding")
def verify_embedding(node, plan, ctx: Ctx):
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = []
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "embed_row" and rn.level == Level.ROW, "embed:row-kind")
        token = plan["tokens"][i]
        leaf = plan["_leaf_base"] + token
        segs = _expect_merge_leaves(rn.children[0], nblocks)
        seg_digests = []
        for blk, sn in enumerate(segs):
            need(sn.claim.kind == "embed_seg", "embed:seg-kind")
            op = sn.claim.openings or {}
            vals = op.get("x")
            need(isinstance(vals, list) and len(vals) == seg, "embed:seg-opening")
            real = min(seg, n - blk * seg)
            need(all(v == 0 for v in vals[real:]), "embed:seg-padding")
            if ctx.sample is None or ctx.sample(sn.digest):
                expect = embed_segment_claim(vals, i, blk, plan, ctx)
                need(encode_claim(expect) == encode_claim(sn.claim), "embed:seg-claim")
            seg_digests.append(sn.claim.weight_digest)
            out.extend(vals[:real])
        path = (rn.claim.openings or {}).get("path", [])
        need_exact_claim(rn, embed_row_claim(rn.children[0], i, token, leaf, path),
                         "embed:row-claim")
        row_digest = hash_digests(VROW_TAG, seg_digests)
        need(
            merkle_verify(ctx.model_root, leaf, row_digest, AuthPath(leaf, tuple(path))),
            "embed:vocab-merkle",
        )
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="embed:component-claim")
    ctx.witnesses[plan["out"]] = out


# ---------------------------------------------------------------------------
# rotary position encoding


def rope_head_claim(xs, ys, rems, row, head, plan, ctx: Ctx) -> Claim:
    d = plan["head_dim"]
    off = row * plan["x_cols"] + head * d
    return Claim(
        kind="rope_head",
        input_evals={"x": seg_eval(xs, ctx.z, off, ctx.field)},
        output_eval=seg_eval(ys, ctx.z, off, ctx.field),
        aux={"row": row, "head": head},
        openings={"x": list(xs), "y": list(ys), "rem": list(rems)},
    )


def rope_row_claim(fold, row, pos, leaf, trow, path, f) -> Claim:
    return Claim(
        kind="rope_row",
        input_evals=dict(fold.claim.input_evals),
        output_eval=fold.claim.output_eval,
        weight_digest=hash_segment(ROPE_ROW_TAG, trow, f),
        aux={"row": row, "pos": pos, "leaf": leaf},
        openings={"trow": list(trow), "path": list(path)},
    )


def build_rope(name, plan, x, y, rems_rows, ctx: Ctx, table_rows, commit_tree=None):
    a, heads, d = plan["a"], plan["heads"], plan["head_dim"]
    f = ctx.field
    rows = []
    for i in range(a):
        head_nodes = []
        for h in range(heads):
            xs = x.row_slice(i, h * d, (h + 1) * d)
            ys = y.row_slice(i, h * d, (h + 1) * d)
            rems = rems_rows[i][h * d : (h + 1) * d]
            head_nodes.append(make_node(
                Level.HEAD, rope_head_claim(xs, ys, rems, i, h, plan, ctx)))
        pos = plan["positions"][i]
        leaf = plan["_leaf_base"] + pos
        trow = list(table_rows[pos])
        path = list(commit_tree.open(leaf).siblings) if commit_tree is not None else []
        fold = canonical_merge(head_nodes, f)
        rows.append(wrap(Level.ROW,
                         rope_row_claim(fold, i, pos, leaf, trow, path, f), fold))
    return _promote(Level.COMPONENT, "rope", name, canonical_merge(rows, f))


@checker("rope")
def verify_rope(node, plan, ctx: Ctx):
    a, heads, d, q = plan["a"], plan["heads"], plan["head_dim"], ctx.qcfg.q
    mask = (1 << q) - 1
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = [0] * (a * plan["x_cols"])
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "rope_row" and rn.level == Level.ROW, "rope:row-kind")
        pos = plan["positions"][i]
        op = rn.claim.openings or {}
        trow = op.get("trow")
        need(isinstance(trow, list) and len(trow) == d, "rope:table-row")
        leaf = plan["_leaf_base"] + pos
        need_exact_claim(
            rn, rope_row_claim(rn.children[0], i, pos, leaf, trow,
                               op.get("path", []), ctx.field),
            "rope:row-claim")
        need(
            merkle_verify(ctx.model_root, leaf, rn.claim.weight_digest,
                          AuthPath(leaf, tuple(op.get("path", [])))),
            "rope:table-merkle",
        )
        head_nodes = _expect_merge_leaves(rn.children[0], heads)
        for h, hn in enumerate(head_nodes):
            need(hn.claim.kind == "rope_head" and hn.level == Level.HEAD,
                 "rope:head-kind")
            hop = hn.claim.openings or {}
            xs, ys, rems = hop.get("x"), hop.get("y"), hop.get("rem")
            need(all(isinstance(v, list) and len(v) == d for v in (xs, ys, rems)),
                 "rope:head-opening")
            if ctx.sample is not None and not ctx.sample(hn.digest):
                pass
            else:
                expect = rope_head_claim(xs, ys, rems, i, h, plan, ctx)
                need(encode_claim(expect) == encode_claim(hn.claim), "rope:head-claim")
                for k in range(0, d, 2):
                    c, s = trow[k], trow[k + 1]
                    raw0 = xs[k] * c - xs[k + 1] * s
                    raw1 = xs[k + 1] * c + xs[k] * s
                    need(0 <= rems[k] <= mask and 0 <= rems[k + 1] <= mask,
                         "rope:rem-range")
                    need(ys[k] * (1 << q) + rems[k] == raw0, "rope:rotation-even")
                    need(ys[k + 1] * (1 << q) + rems[k + 1] == raw1, "rope:rotation-odd")
            for k, v in enumerate(ys):
                out[i * plan["x_cols"] + h * d + k] = v
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="rope:component-claim")
    ctx.witnesses[plan["out"]] = out


# ---------------------------------------------------------------------------
# softmax


def softmax_segment_claim(op, row, head, blk, x_max, plan, ctx: Ctx) -> Claim:
    m, seg = plan["m"], plan["seg"]
    lo = blk * seg
    grid = min(max(m - lo, 0), seg)  # in-grid lanes of this segment
    f = ctx.field
    off = row * plan["x_cols"] + head * m + lo
    claim = Claim(
        kind="sm_seg",
        input_evals={"x": seg_eval(op["x_raw"][:grid], ctx.z, off, f)},
        output_eval=seg_eval(op["p"][:grid], ctx.z, off, f),
        aux={"row": row, "head": head, "blk": blk, "x_max": x_max,
             "i_sumw": sum(op["w"])},
        openings={k: list(op[k]) for k in
                  ("x_raw", "p", "mneg", "kk", "f", "idx", "t", "w",
                   "rem3", "rem4", "rem5", "rem_div")},
    )
    return claim


def build_softmax(name, plan, x, head_auxes, ctx: Ctx):
    """head_auxes[(row, head)] = (padded_x, padded_p, SoftmaxAux)."""
    a, heads, m, seg = plan["a"], plan["heads"], plan["m"], plan["seg"]
    pw = _ceil_div(m, seg) * seg
    f = ctx.field
    rows = []
    for i in range(a):
        head_nodes = []
        for h in range(heads):
            _, ps, aux = head_auxes[(i, h)]
            segs = []
            for blk in range(pw // seg):
                lo = blk * seg
                grid = min(max(m - lo, 0), seg)
                op = {
                    "x_raw": x.row_slice(i, h * m + lo, h * m + lo + grid),
                    "p": ps[lo : lo + seg],
                    "mneg": aux.mneg[lo : lo + seg],
                    "kk": aux.k[lo : lo + seg],
                    "f": aux.f[lo : lo + seg],
                    "idx": aux.idx[lo : lo + seg],
                    "t": aux.t[lo : lo + seg],
                    "w": aux.w[lo : lo + seg],
                    "rem3": aux.rem3[lo : lo + seg],
                    "rem4": aux.rem4[lo : lo + seg],
                    "rem5": aux.rem5[lo : lo + seg],
                    "rem_div": aux.rem_div[lo : lo + seg],
                }
                segs.append(make_node(
                    Level.SEGMENT,
                    softmax_segment_claim(op, i, h, blk, aux.x_max, plan, ctx)))
            head_nodes.append(_promote(
                Level.HEAD, "sm_head", "", canonical_merge(segs, f),
                {"row": i, "head": h, "x_max": aux.x_max, "S": aux.sum_w},
                drop={"i_sumw"},
            ))
        rows.append(_promote(Level.ROW, "sm_row", "",
                             canonical_merge(head_nodes, f), {"row": i}))
    return _promote(Level.COMPONENT, "softmax", name, canonical_merge(rows, f))


def _check_softmax_lane(eff, mneg, kk, fv, idx, t, w, rem3, rem4, rem5,
                        x_max, ctx: Ctx):
    q, l = ctx.qcfg.q, ctx.qcfg.l
    delta = eff - x_max
    need(delta <= 0, "softmax:delta-positive")
    need(0 <= rem3 < (1 << q), "softmax:rem3-range")
    need(mneg * (1 << q) + rem3 == (-delta) * ctx.log2e, "softmax:step3")
    need(0 <= fv < (1 << q), "softmax:frac-range")
    need(kk * (1 << q) + fv == mneg and kk >= 0, "softmax:split")
    need(0 <= rem4 < (1 << (q - l)), "softmax:rem4-range")
    need(idx * (1 << (q - l)) + rem4 == fv, "softmax:index")
    need(0 <= idx < (1 << l) and t == ctx.neg_table[idx], "softmax:table")
    need(w >= 0 and rem5 >= 0, "softmax:w-sign")
    if w == 0:
        need(rem5 == t and (rem5 == 0 or rem5.bit_length() <= kk), "softmax:shift")
    else:
        need(kk <= 64 and w * (1 << kk) + rem5 == t and rem5 < (1 << kk),
             "softmax:shift")


@checker("softmax")
def verify_softmax(node, plan, ctx: Ctx):
    a, heads, m, seg = plan["a"], plan["heads"], plan["m"], plan["seg"]
    pw = _ceil_div(m, seg) * seg
    neg_inf = ctx.qcfg.neg_inf_q
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = [0] * (a * plan["x_cols"])
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "sm_row" and rn.claim.aux.get("row") == i,
             "softmax:row-kind")
        used = plan["used"][i]
        head_nodes = _expect_merge_leaves(rn.children[0], heads)
        for h, hn in enumerate(head_nodes):
            need(hn.claim.kind == "sm_head" and hn.level == Level.HEAD,
                 "softmax:head-kind")
            need(hn.claim.aux.get("row") == i and hn.claim.aux.get("head") == h,
                 "softmax:head-index")
            x_max, s_total = hn.claim.aux.get("x_max"), hn.claim.aux.get("S")
            need(isinstance(x_max, int) and isinstance(s_total, int) and s_total > 0,
                 "softmax:head-aux")
            need(hn.children[0].claim.aux.get("i_sumw") == s_total, "softmax:sum-w")
            need_promoted(hn, hn.children[0],
                          extra_aux={"row": i, "head": h, "x_max": x_max,
                                     "S": s_total},
                          drop={"i_sumw"}, tag="softmax:head-claim")
            segs = _expect_merge_leaves(hn.children[0], pw // seg)
            eff_max = None
            sampled = ctx.sample is None or ctx.sample(hn.digest)
            for blk, sn in enumerate(segs):
                need(sn.claim.kind == "sm_seg", "softmax:seg-kind")
                need(sn.claim.aux.get("x_max") == x_max, "softmax:seg-max-mismatch")
                op = sn.claim.openings or {}
                lo = blk * seg
                grid = min(max(m - lo, 0), seg)
                arrays = {k: op.get(k) for k in
                          ("x_raw", "p", "mneg", "kk", "f", "idx", "t", "w",
                           "rem3", "rem4", "rem5", "rem_div")}
                need(all(isinstance(v, list) for v in arrays.values()),
                     "softmax:seg-opening")
                need(len(arrays["x_raw"]) == grid, "softmax:seg-raw-len")
                need(all(len(v) == seg for k, v in arrays.items() if k != "x_raw"),
                     "softmax:seg-len")
                if sampled:
                    expect = softmax_segment_claim(arrays, i, h, blk, x_max, plan, ctx)
                    need(encode_claim(expect) == encode_claim(sn.claim),
                         "softmax:seg-claim")
                for j in range(seg):
                    jg = lo + j
                    eff = arrays["x_raw"][j] if jg < used else neg_inf
                    if eff_max is None or eff > eff_max:
                        eff_max = eff
                    if sampled:
                        _check_softmax_lane(
                            eff, arrays["mneg"][j], arrays["kk"][j], arrays["f"][j],
                            arrays["idx"][j], arrays["t"][j], arrays["w"][j],
                            arrays["rem3"][j], arrays["rem4"][j], arrays["rem5"][j],
                            x_max, ctx)
                        need(0 <= arrays["rem_div"][j] < s_total,
                             "softmax:step5-rem")
                        need(arrays["p"][j] * s_total + arrays["rem_div"][j]
                             == arrays["w"][j] << ctx.qcfg.q, "softmax:step5")
                    if jg < m:
                        out[i * plan["x_cols"] + h * m + jg] = arrays["p"][j]
            need(eff_max == x_max, "softmax:max-witness")
        need_promoted(rn, rn.children[0], extra_aux={"row": i},
                      tag="softmax:row-claim")
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="softmax:component-claim")
    ctx.witnesses[plan["out"]] = out


# ---------------------------------------------------------------------------
# sigmoid / SiLU


_ACT_KEYS = ("x", "out", "yq", "rem2", "kk", "f", "idx", "rem4", "t", "u",
             "rem5", "sval", "rem6")


def act_segment_claim(op, row, blk, plan, ctx: Ctx) -> Claim:
    n, seg = plan["n"], plan["seg"]
    real = min(seg, n - blk * seg)
    off = row * plan["x_cols"] + blk * seg
    keys = _ACT_KEYS + (("rem7",) if plan["kind"] == "silu" else ())
    return Claim(
        kind="act_seg",
        input_evals={"x": seg_eval(op["x"][:real], ctx.z, off, ctx.field)},
        output_eval=seg_eval(op["out"][:real], ctx.z, off, ctx.field),
        aux={"row": row, "blk": blk},
        openings={k: list(op[k]) for k in keys},
    )


def build_activation(name, plan, x, y, lane_auxes, ctx: Ctx):
    """lane_auxes[row] = list of SigmoidAux per lane (truncated rows)."""
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    silu_mode = plan["kind"] == "silu"
    rows = []
    for i in range(a):
        segs = []
        for blk in range(nblocks):
            lo = blk * seg
            real = min(seg, n - lo)
            auxes = lane_auxes[i][lo : lo + real]
            op = {
                "x": x.row_slice(i, lo, lo + real),
                "out": y.row_slice(i, lo, lo + real),
                "yq": [v.y for v in auxes],
                "rem2": [v.rem2 for v in auxes],
                "kk": [v.k for v in auxes],
                "f": [v.f for v in auxes],
                "idx": [v.idx for v in auxes],
                "rem4": [v.rem4 for v in auxes],
                "t": [v.t for v in auxes],
                "u": [v.u for v in auxes],
                "rem5": [v.rem5 for v in auxes],
                "sval": [v.s for v in auxes],
                "rem6": [v.rem6 for v in auxes],
            }
            if silu_mode:
                op["rem7"] = [v.rem7 for v in auxes]
            segs.append(make_node(Level.SEGMENT,
                                  act_segment_claim(op, i, blk, plan, ctx)))
        rows.append(_promote(Level.ROW, "act_row", "",
                             canonical_merge(segs, f), {"row": i}))
    return _promote(Level.COMPONENT, plan["kind"], name, canonical_merge(rows, f))


def _check_act_lane(xv, out, yq, rem2, kk, fv, idx, t, u, rem5, sval, rem6,
                    rem7, silu_mode, ctx: Ctx):
    q, l = ctx.qcfg.q, ctx.qcfg.l
    need(0 <= rem2 < (1 << q), "act:rem2-range")
    need(yq * (1 << q) + rem2 == -xv * ctx.log2e, "act:step2")
    need(0 <= fv < (1 << q) and kk * (1 << q) + fv == yq, "act:split")
    rem4 = fv - (idx << (q - l))
    need(0 <= idx < (1 << l) and 0 <= rem4 < (1 << (q - l)), "act:index")
    need(t == ctx.pos_table[idx], "act:table")
    if kk < 0:
        need(u >= 0 and rem5 >= 0, "act:u-sign")
        if u == 0:
            need(rem5 == t and (t == 0 or t.bit_length() <= -kk), "act:shift-down")
        else:
            need(-kk <= 64 and u * (1 << -kk) + rem5 == t and rem5 < (1 << -kk),
                 "act:shift-down")
    else:
        need(kk <= 1 << 20, "act:shift-cap")
        need(rem5 == 0 and u == t << kk, "act:shift-up")
    denom = (1 << q) + u
    need(0 <= rem6 < denom, "act:rem6-range")
    need(sval * denom + rem6 == 1 << (2 * q), "act:sigmoid-div")
    if silu_mode:
        need(0 <= rem7 < (1 << q), "act:rem7-range")
        need(out * (1 << q) + rem7 == xv * sval, "act:silu-mul")
    else:
        need(out == sval, "act:sigmoid-out")


@checker("sigmoid")
@checker("silu")
def verify_activation(node, plan, ctx: Ctx):
    a, n, seg = plan["a"], plan["n"], plan["seg"]
    nblocks = _blocks(n, seg)
    silu_mode = plan["kind"] == "silu"
    row_nodes = _expect_merge_leaves(node.children[0], a)
    out = []
    for i, rn in enumerate(row_nodes):
        need(rn.claim.kind == "act_row" and rn.claim.aux.get("row") == i,
             "act:row-kind")
        segs = _expect_merge_leaves(rn.children[0], nblocks)
        for blk, sn in enumerate(segs):
            need(sn.claim.kind == "act_seg", "act:seg-kind")
            op = sn.claim.openings or {}
            real = min(seg, n - blk * seg)
            keys = _ACT_KEYS + (("rem7",) if silu_mode else ())
            arrays = {k: op.get(k) for k in keys}
            need(all(isinstance(v, list) and len(v) == real for v in arrays.values()),
                 "act:seg-opening")
            if ctx.sample is None or ctx.sample(sn.digest):
                expect = act_segment_claim(arrays, i, blk, plan, ctx)
                need(encode_claim(expect) == encode_claim(sn.claim), "act:seg-claim")
                for j in range(real):
                    _check_act_lane(
                        arrays["x"][j], arrays["out"][j], arrays["yq"][j],
                        arrays["rem2"][j], arrays["kk"][j], arrays["f"][j],
                        arrays["idx"][j], arrays["t"][j], arrays["u"][j],
                        arrays["rem5"][j], arrays["sval"][j], arrays["rem6"][j],
                        arrays["rem7"][j] if silu_mode else None, silu_mode, ctx)
                    try:
                        check_window(arrays["out"][j])
                    except Exception:
                        raise CheckFailure("act:window") from None
            out.extend(arrays["out"])
        need_promoted(rn, rn.children[0], extra_aux={"row": i},
                      tag="act:row-claim")
    need_promoted(node, node.children[0], name=node.claim.name,
                  tag="act:component-claim")
    ctx.witnesses[plan["out"]] = out
