"""Matrix-product proofs.

The input matrix splits into 1 x s row segments, merged column-block by
column-block into input-block proofs; the weight matrix (stored
transposed, one output column per stored row) splits into s x 1 column
segments merged the same way into weight-block proofs.  Pairing block k
of both sides yields a block-pair claim carrying the partial inner
product sum_{k in block} col_eval_k * row_eval_k; block pairs fold into
the component whose root claim asserts that the total equals the
evaluation of the raw product, which is the product identity at z.

A rescale leaf opens the raw product, the rescaled output and the
per-entry remainders, binding the algebraic output evaluation to actual
opened values so the next component can link against them.

Multi-head products (attention scores and context gathers) build one
such subtree per head under a shared component; the weight side of every
head is the same activation tensor and each head claim must expose the
identical producer-grid link value.
"""

from __future__ import annotations

from ..encoding import hash_segment, mat_eval, seg_eval
from ..merkle import AuthPath, merkle_verify
from ..tensor import QTensor, check_window
from .context import CheckFailure, Ctx, checker, need
from .nodes import (
    Claim,
    Level,
    canonical_merge,
    encode_claim,
    make_node,
    wrap,
)

WSEG_TAG = "wseg"


def _blocks(n: int, seg: int) -> int:
    return (n + seg - 1) // seg


def promoted_claim(kind: str, name: str, child, extra_aux=None, drop=(),
                   openings=None, weight_digest=None) -> Claim:
    """The deterministic claim a wrap node carries: the child's claim with
    leaf-local keys dropped and wrap-specific fields added.  Builders and
    checkers construct it with this one function, so a checker can demand
    bit equality of the encodings."""
    c = child.claim
    claim = Claim(
        kind=kind,
        name=name,
        input_evals=dict(c.input_evals),
        output_eval=c.output_eval,
        weight_digest=weight_digest,
        aux={k: v for k, v in c.aux.items() if k not in drop},
    )
    if extra_aux:
        claim.aux.update(extra_aux)
    claim.openings = openings
    return claim


def _promote(level: str, kind: str, name: str, inner, extra_aux=None, drop=()):
    return wrap(level, promoted_claim(kind, name, inner, extra_aux, drop), inner)


def need_exact_claim(node, expected: Claim, tag: str) -> None:
    need(encode_claim(expected) == encode_claim(node.claim), tag)


def need_promoted(node, child, extra_aux=None, drop=(), openings=None,
                  weight_digest=None, name: str = "", tag: str = "promotion"):
    """The wrap claim must equal the exact promotion of its child; any
    extra or missing field, of any kind, is a failure.  Inner wraps are
    unnamed; component wraps pass their (layout-verified) name."""
    expected = promoted_claim(node.claim.kind, name, child,
                              extra_aux, drop, openings, weight_digest)
    need_exact_claim(node, expected, tag)


# ---------------------------------------------------------------------------
# leaf claims (shared by builder and checker)


def x_segment_claim(vals, row, blk, head, plan, ctx: Ctx) -> Claim:
    n, b, seg = plan["n"], plan["b"], plan["seg"]
    x_cols = plan["x_cols"]
    real_w = min(seg, n - blk * seg)
    f = ctx.field
    contrib = seg_eval(vals[:real_w], ctx.z, row * x_cols + plan.get("x_col0", 0)
                       + head * n + blk * seg, f)
    coef = f.pow(ctx.z, row * b)
    v_col = [f.mul(coef, f.embed_signed(v)) for v in vals]
    return Claim(
        kind="gemm_x",
        input_evals={"x": contrib},
        aux={"row": row, "blk": blk, "head": head, "v_col": v_col},
        openings={"x": list(vals)},
    )


def w_segment_claim(vals, col_j, blk, plan, ctx: Ctx, path=None) -> Claim:
    n, b, seg = plan["n"], plan["b"], plan["seg"]
    f = ctx.field
    zj = f.pow(ctx.z, col_j)
    v_row = [f.mul(zj, f.embed_signed(v)) for v in vals]
    real_k = min(seg, n - blk * seg)
    claim = Claim(
        kind="gemm_w",
        aux={"col": col_j, "blk": blk, "v_row": v_row},
        openings={"w": list(vals)},
    )
    if plan["w_mode"] == "commit":
        claim.weight_digest = hash_segment(WSEG_TAG, vals, f)
        claim.aux["leaf"] = plan["_leaf_base"] + col_j * _blocks(n, seg) + blk
        claim.openings["path"] = list(path or [])
    else:
        prows, pcols = plan["w_prows"], plan["w_pcols"]
        acc = 0
        for k_off in range(real_k):
            kg = blk * seg + k_off
            r, c = (col_j, kg) if plan["w_transposed"] else (kg, col_j)
            if not (0 <= r < prows and 0 <= c < pcols):
                raise CheckFailure("gemm:w-producer-grid")
            acc = f.add(acc, f.mul(f.pow(ctx.z, r * pcols + c),
                                   f.embed_signed(vals[k_off])))
        claim.aux["f_wlink"] = acc
    return claim


def rescale_claim(y_raw, y, rem, head, plan, ctx: Ctx) -> Claim:
    a, b = plan["a"], plan["b"]
    y_cols, shift = plan["y_cols"], plan["shift"]
    col0 = plan.get("y_col0", 0) + head * b
    f = ctx.field
    raw_standalone = mat_eval(QTensor(a, b, list(y_raw), validate=False), ctx.z, f)
    out = 0
    for i in range(a):
        out = f.add(out, seg_eval(y[i * b : (i + 1) * b], ctx.z, i * y_cols + col0, f))
    return Claim(
        kind="gemm_rescale",
        output_eval=out,
        aux={"head": head, "shift": shift, "f_raw_standalone": raw_standalone},
        openings={"y_raw": list(y_raw), "y": list(y), "rem": list(rem)},
    )


# ---------------------------------------------------------------------------
# builder


def build_gemm(name, plan, x: QTensor, w_used: QTensor, y_raw: QTensor,
               rems, y_final: QTensor, ctx: Ctx, commit_tree=None):
    """Build the component node for one (possibly multi-head) product.

    y_raw / y_final / rems cover the full output grid (heads side by
    side); the weight side w_used is the per-head operand, identical for
    every head in activation mode.
    """
    a, n, b = plan["a"], plan["n"], plan["b"]
    heads, seg = plan["heads"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    head_nodes = []
    for h in range(heads):
        xh_base = plan.get("x_col0", 0) + h * n
        pair_nodes = []
        for blk in range(nblocks):
            xsegs = []
            real = min(seg, n - blk * seg)
            for i in range(a):
                lo = xh_base + blk * seg
                # never read past the head boundary; zero-pad to seg
                vals = x.row_slice(i, lo, lo + real) + [0] * (seg - real)
                xsegs.append(make_node(Level.SEGMENT,
                                       x_segment_claim(vals, i, blk, h, plan, ctx)))
            xb = _promote(Level.INPUT_BLOCK, "gemm_x_block", "",
                          canonical_merge(xsegs, f), {"blk": blk, "head": h})
            wsegs = []
            for j in range(b):
                vals = [w_used.at(k, j) if k < n else 0
                        for k in range(blk * seg, blk * seg + seg)]
                path = None
                if plan["w_mode"] == "commit" and commit_tree is not None:
                    leaf = plan["_leaf_base"] + j * nblocks + blk
                    path = list(commit_tree.open(leaf).siblings)
                wsegs.append(make_node(Level.SEGMENT,
                                       w_segment_claim(vals, j, blk, plan, ctx, path)))
            wb = _promote(Level.WEIGHT_BLOCK, "gemm_w_block", "",
                          canonical_merge(wsegs, f), {"blk": blk, "head": h})
            ip = 0
            for cv, rv in zip(xb.claim.aux["v_col"], wb.claim.aux["v_row"]):
                ip = f.add(ip, f.mul(cv, rv))
            pair_claim = _pair_claim(xb.claim, wb.claim, ip, blk, f)
            pair_nodes.append(make_node(Level.BLOCK_PAIR, pair_claim, [xb, wb]))
        pairs_root = canonical_merge(pair_nodes, f)
        hb = h * b
        y_raw_h = [y_raw.at(i, hb + j) for i in range(a) for j in range(b)]
        y_h = [y_final.at(i, hb + j) for i in range(a) for j in range(b)]
        rem_h = [rems[i * y_raw.cols + hb + j] for i in range(a) for j in range(b)]
        rnode = make_node(Level.SEGMENT, rescale_claim(y_raw_h, y_h, rem_h, h, plan, ctx))
        head_nodes.append(_head_node(name, h, pairs_root, rnode, plan, f))
    comp_inner = canonical_merge(head_nodes, f)
    return _component_node(name, comp_inner, head_nodes, plan, f)


def _pair_claim(xc: Claim, wc: Claim, ip, blk, f) -> Claim:
    claim = Claim(kind="gemm_pair")
    claim.input_evals = dict(xc.input_evals)
    for k, v in wc.input_evals.items():
        claim.input_evals[k] = f.add(claim.input_evals.get(k, 0), v)
    claim.aux["f_ip"] = ip
    if "f_wlink" in wc.aux:
        claim.aux["f_wlink"] = wc.aux["f_wlink"]
    claim.aux["blk"] = blk
    return claim


def head_claim(h, pairs_root, rnode) -> Claim:
    pc = pairs_root.claim
    claim = Claim(kind="gemm_head", aux={"head": h})
    claim.input_evals = dict(pc.input_evals)
    claim.output_eval = rnode.claim.output_eval
    claim.aux["f_ip"] = pc.aux["f_ip"]
    if "f_wlink" in pc.aux:
        claim.aux["w_link"] = pc.aux["f_wlink"]
    return claim


def _head_node(name, h, pairs_root, rnode, plan, f):
    return make_node(Level.HEAD, head_claim(h, pairs_root, rnode),
                     [pairs_root, rnode])


def gemm_component_claim(name, inner, head_nodes, plan) -> Claim:
    claim = Claim(kind="gemm", name=name)
    claim.input_evals = {"x": inner.claim.input_evals.get("x", 0)}
    claim.output_eval = inner.claim.output_eval
    if plan["w_mode"] == "activation":
        claim.input_evals["w"] = head_nodes[0].claim.aux["w_link"]
    return claim


def _component_node(name, inner, head_nodes, plan, f):
    return wrap(Level.COMPONENT, gemm_component_claim(name, inner, head_nodes,
                                                      plan), inner)


# ---------------------------------------------------------------------------
# verifier


def _expect_merge_leaves(node, count):
    """Collect the leaves of a canonical left-leaning fold in order.

    Iterative: the fold nests one level per merged node."""
    out = []
    stack = [node]
    while stack:
        n = stack.pop()
        if n.level == Level.MERGE:
            need(len(n.children) == 2, "merge:arity")
            stack.append(n.children[1])
            stack.append(n.children[0])
        else:
            out.append(n)
    need(len(out) == count, "structure:leaf-count")
    return out


@checker("gemm")
def verify_gemm(node, plan, ctx: Ctx):
    a, n, b = plan["a"], plan["n"], plan["b"]
    heads, seg = plan["heads"], plan["seg"]
    nblocks = _blocks(n, seg)
    f = ctx.field
    need(node.level == Level.COMPONENT and len(node.children) == 1, "gemm:shape")
    head_nodes = _expect_merge_leaves(node.children[0], heads)
    w_links = []
    y_out = [0] * (a * plan["y_cols"])
    for h, hn in enumerate(head_nodes):
        need(hn.level == Level.HEAD and hn.claim.kind == "gemm_head", "gemm:head-level")
        need(len(hn.children) == 2, "gemm:head-arity")
        pairs_root, rnode = hn.children
        pair_nodes = _expect_merge_leaves(pairs_root, nblocks)
        for blk, pn in enumerate(pair_nodes):
            _verify_pair(pn, blk, h, a, b, plan, ctx)
        # rescale leaf
        need(rnode.claim.kind == "gemm_rescale", "gemm:rescale-kind")
        if ctx.sample is None or ctx.sample(rnode.digest):
            _verify_rescale(rnode, h, plan, ctx, y_out)
        else:
            _collect_rescale(rnode, h, plan, y_out)
        # the head claim is the exact function of its two children
        need_exact_claim(hn, head_claim(h, pairs_root, rnode), "gemm:head-claim")
        # product identity against the opened raw values
        need(hn.claim.aux["f_ip"] == rnode.claim.aux["f_raw_standalone"],
             "gemm:product-identity")
        if plan["w_mode"] == "activation":
            need("w_link" in hn.claim.aux, "gemm:head-wlink")
            w_links.append(hn.claim.aux["w_link"])
    if plan["w_mode"] == "activation":
        need(len(set(w_links)) == 1, "gemm:w-links-differ")
    else:
        need(not w_links, "gemm:unexpected-wlink")
    need_exact_claim(
        node,
        gemm_component_claim(node.claim.name, node.children[0], head_nodes, plan),
        "gemm:component-claim",
    )
    ctx.witnesses[plan["out"]] = y_out


def _verify_pair(pn, blk, h, a, b, plan, ctx: Ctx):
    f = ctx.field
    need(pn.level == Level.BLOCK_PAIR and len(pn.children) == 2, "gemm:pair-shape")
    xb, wb = pn.children
    need(xb.level == Level.INPUT_BLOCK and wb.level == Level.WEIGHT_BLOCK,
         "gemm:pair-children")
    need(xb.claim.kind == "gemm_x_block" and wb.claim.kind == "gemm_w_block",
         "gemm:block-kinds")
    xsegs = _expect_merge_leaves(xb.children[0], a)
    for i, sn in enumerate(xsegs):
        _verify_x_segment(sn, i, blk, h, plan, ctx)
    need_promoted(xb, xb.children[0], extra_aux={"blk": blk, "head": h})
    wsegs = _expect_merge_leaves(wb.children[0], b)
    for j, sn in enumerate(wsegs):
        _verify_w_segment(sn, j, blk, plan, ctx)
    need_promoted(wb, wb.children[0], extra_aux={"blk": blk, "head": h})
    ip = 0
    for cv, rv in zip(xb.claim.aux["v_col"], wb.claim.aux["v_row"]):
        ip = f.add(ip, f.mul(cv, rv))
    expect = _pair_claim(xb.claim, wb.claim, ip, blk, f)
    need(encode_claim(expect) == encode_claim(pn.claim), "gemm:pair-claim")


def _verify_x_segment(sn, row, blk, head, plan, ctx: Ctx):
    need(sn.level == Level.SEGMENT and sn.claim.kind == "gemm_x", "gemm:xseg-kind")
    op = sn.claim.openings or {}
    vals = op.get("x")
    need(isinstance(vals, list) and len(vals) == plan["seg"], "gemm:xseg-opening")
    real = min(plan["seg"], plan["n"] - blk * plan["seg"])
    need(all(v == 0 for v in vals[real:]), "gemm:xseg-padding")
    if ctx.sample is not None and not ctx.sample(sn.digest):
        return
    expect = x_segment_claim(vals, row, blk, head, plan, ctx)
    need(encode_claim(expect) == encode_claim(sn.claim), "gemm:xseg-claim")


def _verify_w_segment(sn, col_j, blk, plan, ctx: Ctx):
    need(sn.level == Level.SEGMENT and sn.claim.kind == "gemm_w", "gemm:wseg-kind")
    op = sn.claim.openings or {}
    vals = op.get("w")
    need(isinstance(vals, list) and len(vals) == plan["seg"], "gemm:wseg-opening")
    real = min(plan["seg"], plan["n"] - blk * plan["seg"])
    need(all(v == 0 for v in vals[real:]), "gemm:wseg-padding")
    sampled = ctx.sample is None or ctx.sample(sn.digest)
    if sampled:
        path = op.get("path", [])
        expect = w_segment_claim(vals, col_j, blk, plan, ctx, path)
        need(encode_claim(expect) == encode_claim(sn.claim), "gemm:wseg-claim")
    if plan["w_mode"] == "commit":
        leaf_idx = plan["_leaf_base"] + col_j * _blocks(plan["n"], plan["seg"]) + blk
        need(sn.claim.aux.get("leaf") == leaf_idx, "gemm:wseg-leaf-index")
        ok = merkle_verify(
            ctx.model_root,
            leaf_idx,
            sn.claim.weight_digest,
            AuthPath(leaf_idx, tuple(op.get("path", []))),
        )
        need(ok, "gemm:weight-merkle")


def _collect_rescale(rnode, h, plan, y_out):
    a, b, y_cols = plan["a"], plan["b"], plan["y_cols"]
    col0 = plan.get("y_col0", 0) + h * b
    y = (rnode.claim.openings or {}).get("y") or []
    need(len(y) == a * b, "gemm:rescale-opening")
    for i in range(a):
        for j in range(b):
            y_out[i * y_cols + col0 + j] = y[i * b + j]


def _verify_rescale(rnode, h, plan, ctx: Ctx, y_out):
    op = rnode.claim.openings or {}
    y_raw, y, rem = op.get("y_raw"), op.get("y"), op.get("rem")
    a, b, shift = plan["a"], plan["b"], plan["shift"]
    need(all(isinstance(v, list) and len(v) == a * b for v in (y_raw, y, rem)),
         "gemm:rescale-opening")
    lim = 1 << shift
    for vr, vy, r in zip(y_raw, y, rem):
        need(0 <= r < lim, "gemm:rescale-rem-range")
        need(vy * lim + r == vr, "gemm:rescale-reconstruction")
        try:
            check_window(vy)
        except Exception:
            raise CheckFailure("gemm:rescale-window") from None
    expect = rescale_claim(y_raw, y, rem, h, plan, ctx)
    need(encode_claim(expect) == encode_claim(rnode.claim), "gemm:rescale-claim")
    _collect_rescale(rnode, h, plan, y_out)
