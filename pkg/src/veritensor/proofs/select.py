"""Permutation-argument proofs: sorting, top-k and grouped expert routing.

A sort witness is accepted when the characteristic polynomials of the
input and output lists agree at the permutation challenge point t, the
output is monotone in the requested order, and the permutation indices
reproduce the output from the input with stable (index-increasing) tie
order.  Top-k is the first k entries of such a witness.

The grouped selector runs the argument twice per row: once inside every
group (group nodes, scored by the sum of the top per-group values, with
the group ranking verified in the group-row wrap) and once for the final
experts (sorted-group nodes exposing each group's chosen prefix, with
the cross-group boundary condition verified in the sorted-group-row
wrap).
"""

from __future__ import annotations

from ..encoding import seg_eval
from .context import Ctx, checker, need
from .gemm import _expect_merge_leaves, _promote, need_exact_claim, need_promoted
from .nodes import Claim, Level, canonical_merge, make_node, merge, wrap


def _charpoly(values, t, field):
    return field.charpoly_eval(values, t)


def check_sort_witness(values, sorted_vals, perm, order_desc, char_in, char_sorted,
                       ctx: Ctx, tag: str):
    """The permutation argument plus determinism constraints."""
    f = ctx.field
    need(_charpoly(values, ctx.t, f) == char_in, f"{tag}:char-input")
    need(_charpoly(sorted_vals, ctx.t, f) == char_sorted, f"{tag}:char-sorted")
    need(char_in == char_sorted, f"{tag}:permutation")
    n = len(values)
    need(len(sorted_vals) == n and len(perm) == n, f"{tag}:witness-shape")
    need(sorted(perm) == list(range(n)), f"{tag}:perm-bijection")
    for j, pi in enumerate(perm):
        need(sorted_vals[j] == values[pi], f"{tag}:perm-values")
    for jprev in range(n - 1):
        a, b = sorted_vals[jprev], sorted_vals[jprev + 1]
        need(a >= b if order_desc else a <= b, f"{tag}:order")
        if a == b:
            need(perm[jprev] < perm[jprev + 1], f"{tag}:stability")


# ---------------------------------------------------------------------------
# standalone top-k (argmax over logits)


def topk_claim(op, plan, ctx: Ctx) -> Claim:
    f = ctx.field
    k = plan["k"]
    src_row, src_cols = plan["src_row"], plan["src_cols"]
    return Claim(
        kind="topk",
        name=plan.get("name", ""),
        input_evals={"x": seg_eval(op["input"], ctx.z, src_row * src_cols, f)},
        aux={
            "k": k,
            "order": plan["order"],
            "f_char_in": _charpoly(op["input"], ctx.t, f),
            "f_char_sorted": _charpoly(op["sorted"], ctx.t, f),
            "topk_values": list(op["sorted"][:k]),
            "topk_indices": list(op["perm"][:k]),
        },
        openings={k2: list(v) for k2, v in op.items()},
    )


def build_topk(name, plan, values, sorted_vals, perm, ctx: Ctx):
    plan = dict(plan, name=name)
    op = {"input": list(values), "sorted": list(sorted_vals), "perm": list(perm)}
    return make_node(Level.COMPONENT, topk_claim(op, plan, ctx))


@checker("topk")
def verify_topk(node, plan, ctx: Ctx):
    from .nodes import encode_claim

    op = node.claim.openings or {}
    need(all(isinstance(op.get(k), list) for k in ("input", "sorted", "perm")),
         "topk:opening")
    need(len(op["input"]) == plan["n"], "topk:input-len")
    expect = topk_claim(op, dict(plan, name=node.claim.name), ctx)
    need(encode_claim(expect) == encode_claim(node.claim), "topk:claim")
    check_sort_witness(
        op["input"], op["sorted"], op["perm"], plan["order"] == "desc",
        node.claim.aux["f_char_in"], node.claim.aux["f_char_sorted"], ctx, "topk")


# ---------------------------------------------------------------------------
# grouped expert selector


def group_claim(op, row, g, plan, ctx: Ctx) -> Claim:
    f = ctx.field
    gs = plan["n_experts"] // plan["grouping"][0]
    top = plan["grouping"][1]
    off = row * plan["x_cols"] + g * gs
    return Claim(
        kind="sel_group",
        input_evals={"x": seg_eval(op["scores"], ctx.z, off, f)},
        aux={
            "row": row,
            "group": g,
            "char_in": _charpoly(op["scores"], ctx.t, f),
            "char_sorted": _charpoly(op["sorted"], ctx.t, f),
            "group_score": sum(op["sorted"][:top]),
        },
        openings={k: list(v) for k, v in op.items()},
    )


def sorted_group_claim(op, row, g, chosen, plan, ctx: Ctx) -> Claim:
    f = ctx.field
    gs = plan["n_experts"] // plan["grouping"][0]
    c = len(chosen)
    aux = {
        "row": row,
        "group": g,
        "char_in": _charpoly(op["scores"], ctx.t, f),
        "char_sorted": _charpoly(op["sorted"], ctx.t, f),
        "chosen": list(chosen),
        "c": c,
    }
    if c:
        aux["worst_v"], aux["worst_i"] = op["sorted"][c - 1], chosen[-1]
    if c < gs:
        aux["best_un_v"] = op["sorted"][c]
        aux["best_un_i"] = g * gs + op["perm"][c]
    return Claim(kind="sel_sorted_group", aux=aux,
                 openings={k: list(v) for k, v in op.items()})


def group_row_claim(gfold, row, selected, gscores, gsorted, gperm, ctx: Ctx) -> Claim:
    f = ctx.field
    return Claim(
        kind="sel_group_row",
        input_evals=dict(gfold.claim.input_evals),
        aux={
            "row": row,
            "selected_groups": list(selected),
            "g_char_in": _charpoly(gscores, ctx.t, f),
            "g_char_sorted": _charpoly(gsorted, ctx.t, f),
        },
        openings={"gscores": list(gscores), "gsorted": list(gsorted),
                  "gperm": list(gperm)},
    )


def sorted_group_row_claim(row, selected, experts) -> Claim:
    return Claim(
        kind="sel_sorted_group_row",
        aux={"row": row, "selected_groups": list(selected),
             "experts": list(experts)},
    )


def build_expert_selector(name, plan, scores, selections, ctx: Ctx):
    """selections[row] is the ExpertSelection witness for that row."""
    a = plan["a"]
    ng, top, gsel, esel = plan["grouping"]
    gs = plan["n_experts"] // ng
    f = ctx.field
    row_pairs = []
    sel_flat, grp_flat = [], []
    for i in range(a):
        sel = selections[i]
        row_scores = scores.row(i)
        gnodes = []
        for g in range(ng):
            sv, perm = sel.group_sorts[g]
            op = {"scores": row_scores[g * gs : (g + 1) * gs],
                  "sorted": sv, "perm": perm}
            gnodes.append(make_node(Level.GROUP, group_claim(op, i, g, plan, ctx)))
        gfold = canonical_merge(gnodes, f)
        gsv, gperm = sel.group_score_sort
        group_row = wrap(
            Level.GROUP_ROW,
            group_row_claim(gfold, i, sel.group_indices, sel.group_scores,
                            gsv, gperm, ctx),
            gfold)

        sgnodes = []
        for g in range(ng):
            sv, perm = sel.group_sorts[g]
            chosen = sel.chosen_per_group.get(g, [])
            op = {"scores": row_scores[g * gs : (g + 1) * gs],
                  "sorted": sv, "perm": perm}
            sgnodes.append(make_node(
                Level.SORTED_GROUP, sorted_group_claim(op, i, g, chosen, plan, ctx)))
        sgfold = canonical_merge(sgnodes, f)
        sorted_group_row = wrap(
            Level.SORTED_GROUP_ROW,
            sorted_group_row_claim(i, sel.group_indices, sel.expert_indices),
            sgfold)
        row_pairs.append(merge(group_row, sorted_group_row, f))
        sel_flat.extend(sel.expert_indices)
        grp_flat.extend(sel.group_indices)
    comp = _promote(Level.COMPONENT, "expert_selector", name,
                    canonical_merge(row_pairs, f),
                    {"selected": sel_flat, "sel_groups": grp_flat})
    return comp


@checker("expert_selector")
def verify_expert_selector(node, plan, ctx: Ctx):
    a = plan["a"]
    ng, top, gsel, esel = plan["grouping"]
    gs = plan["n_experts"] // ng
    leaves = _expect_merge_leaves(node.children[0], 2 * a)
    need(node.claim.aux.get("selected") is not None, "selector:selected-missing")
    sel_flat = node.claim.aux["selected"]
    grp_flat = node.claim.aux.get("sel_groups")
    need(len(sel_flat) == a * esel and len(grp_flat) == a * gsel, "selector:flat-len")
    for i in range(a):
        gr = leaves[2 * i]
        sgr = leaves[2 * i + 1]
        need(gr.level == Level.GROUP_ROW and gr.claim.kind == "sel_group_row",
             "selector:group-row-kind")
        need(sgr.level == Level.SORTED_GROUP_ROW
             and sgr.claim.kind == "sel_sorted_group_row", "selector:sorted-row-kind")
        need(gr.claim.aux.get("row") == i and sgr.claim.aux.get("row") == i,
             "selector:row-index")
        gnodes = _expect_merge_leaves(gr.children[0], ng)
        sgnodes = _expect_merge_leaves(sgr.children[0], ng)
        selected = gr.claim.aux.get("selected_groups")
        need(isinstance(selected, list) and sorted(selected) == selected
             and len(selected) == gsel, "selector:selected-groups")
        need(sgr.claim.aux.get("selected_groups") == selected,
             "selector:selected-groups-mismatch")
        sampled = ctx.sample is None or ctx.sample(gr.digest)
        gscore_claims = []
        for g, gn in enumerate(gnodes):
            need(gn.claim.kind == "sel_group" and gn.claim.aux.get("group") == g
                 and gn.claim.aux.get("row") == i, "selector:group-kind")
            op = gn.claim.openings or {}
            need(all(isinstance(op.get(k), list) for k in ("scores", "sorted", "perm")),
                 "selector:group-opening")
            need(len(op["scores"]) == gs, "selector:group-size")
            gscore_claims.append(gn.claim.aux.get("group_score"))
            if sampled:
                from .nodes import encode_claim

                expect = group_claim(op, i, g, plan, ctx)
                need(encode_claim(expect) == encode_claim(gn.claim),
                     "selector:group-claim")
                check_sort_witness(op["scores"], op["sorted"], op["perm"], True,
                                   gn.claim.aux["char_in"],
                                   gn.claim.aux["char_sorted"], ctx, "selector:g")
        # round one: group ranking
        grop = gr.claim.openings or {}
        need(grop.get("gscores") == gscore_claims, "selector:group-scores")
        need(all(isinstance(grop.get(k), list) for k in
                 ("gsorted", "gperm")), "selector:group-row-openings")
        need_exact_claim(
            gr, group_row_claim(gr.children[0], i, selected, grop["gscores"],
                                grop["gsorted"], grop["gperm"], ctx),
            "selector:group-row-claim")
        check_sort_witness(grop["gscores"], grop["gsorted"], grop["gperm"], True,
                           gr.claim.aux["g_char_in"],
                           gr.claim.aux["g_char_sorted"], ctx, "selector:gr")
        need(sorted(grop["gperm"][:gsel]) == selected, "selector:group-topk")
        # round two: per-group chosen prefixes and the global boundary
        total_c = 0
        worst = None
        best_un = None
        chosen_all = []
        for g, sn in enumerate(sgnodes):
            need(sn.claim.kind == "sel_sorted_group"
                 and sn.claim.aux.get("group") == g
                 and sn.claim.aux.get("row") == i, "selector:sorted-kind")
            need(sn.claim.aux.get("char_in") == gnodes[g].claim.aux.get("char_in"),
                 "selector:round-link")
            op = sn.claim.openings or {}
            chosen = sn.claim.aux.get("chosen")
            c = sn.claim.aux.get("c")
            need(isinstance(chosen, list) and c == len(chosen) <= gs,
                 "selector:chosen-shape")
            if g not in selected:
                need(c == 0, "selector:unselected-group-chose")
            if sampled:
                from .nodes import encode_claim

                expect = sorted_group_claim(op, i, g, chosen, plan, ctx)
                need(encode_claim(expect) == encode_claim(sn.claim),
                     "selector:sorted-claim")
                check_sort_witness(op["scores"], op["sorted"], op["perm"], True,
                                   sn.claim.aux["char_in"],
                                   sn.claim.aux["char_sorted"], ctx, "selector:sg")
            for j in range(c):
                need(chosen[j] == g * gs + op["perm"][j], "selector:chosen-prefix")
                chosen_all.append((op["sorted"][j], chosen[j]))
            total_c += c
            if c and (worst is None or (op["sorted"][c - 1], -chosen[c - 1])
                      < (worst[0], -worst[1])):
                worst = (op["sorted"][c - 1], chosen[c - 1])
            if g in selected and c < gs:
                cand = (op["sorted"][c], g * gs + op["perm"][c])
                if best_un is None or (cand[0], -cand[1]) > (best_un[0], -best_un[1]):
                    best_un = cand
        need(total_c == esel, "selector:chosen-count")
        if best_un is not None:
            need(worst is not None, "selector:boundary-missing")
            need((worst[0], -worst[1]) > (best_un[0], -best_un[1]),
                 "selector:boundary")
        experts = sgr.claim.aux.get("experts")
        order = sorted(chosen_all, key=lambda p: (-p[0], p[1]))
        need(experts == [e for _, e in order], "selector:final-order")
        need_exact_claim(sgr, sorted_group_row_claim(i, selected, experts),
                         "selector:sorted-row-claim")
        need(sel_flat[i * esel:(i + 1) * esel] == experts, "selector:flat-mismatch")
        need(grp_flat[i * gsel:(i + 1) * gsel] == selected, "selector:flat-groups")
    need_promoted(node, node.children[0],
                  extra_aux={"selected": list(sel_flat),
                             "sel_groups": list(grp_flat)},
                  name=node.claim.name, tag="selector:component-claim")
