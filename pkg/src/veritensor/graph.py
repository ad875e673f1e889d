"""Component wiring of the attention and expert blocks, structural DAG
shape arithmetic, and the per-session component plans.

The abstract graphs (build_mla_graph / build_moe_graph) describe how
components feed each other inside one layer: every edge carries exactly
one value-linking obligation and every parameter tensor exactly one
digest obligation, which the audit asserts.  Session plans instantiate
those graphs for a concrete token count and routing outcome, naming
every component instance, its proof parameters and its link targets;
prover and verifier derive plans from the same public inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .errors import BadConfigError
from .model import ModelConfig


@dataclass(frozen=True)
class GraphNode:
    name: str
    kind: str
    inputs: tuple = ()   # (edge_key, source node or "@input") pairs
    weights: tuple = ()  # parameter tensor labels consumed


@dataclass
class ComponentGraph:
    nodes: list
    output: str

    def node(self, name: str) -> GraphNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def kinds(self) -> dict:
        out: dict = {}
        for n in self.nodes:
            out.setdefault(n.kind, set()).add(n.name)
        return out

    def audit(self) -> dict:
        """Acyclicity, single output, one link per edge, one digest per
        parameter tensor."""
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise BadConfigError("duplicate node names")
        seen: set = set()
        edge_count = 0
        weight_refs: dict = {}
        for n in self.nodes:
            for key, src in n.inputs:
                edge_count += 1
                if not src.startswith("@") and src not in seen:
                    raise BadConfigError(f"edge {n.name}.{key} from {src} breaks order")
            for w in n.weights:
                weight_refs[w] = weight_refs.get(w, 0) + 1
            seen.add(n.name)
        consumed = {src for n in self.nodes for _, src in n.inputs}
        sinks = [n for n in names if n not in consumed]
        if sinks != [self.output]:
            raise BadConfigError(f"expected single output {self.output}, got {sinks}")
        dup = [w for w, c in weight_refs.items() if c != 1]
        if dup:
            raise BadConfigError(f"weight tensors with multiple obligations: {dup}")
        return {"nodes": len(self.nodes), "edges": edge_count,
                "weights": len(weight_refs)}


def build_mla_graph(cfg: ModelConfig) -> ComponentGraph:
    n = [
        GraphNode("attn_norm", "RMSNorm", (("x", "@input"),), ("attn_norm_w",)),
        GraphNode("wq_a", "GeMM", (("x", "attn_norm"),), ("wq_a",)),
        GraphNode("q_norm", "RMSNorm", (("x", "wq_a"),), ("q_norm_w",)),
        GraphNode("wq_b1", "GeMM", (("x", "q_norm"),), ("wq_b1",)),
        GraphNode("wq_b2", "GeMM", (("x", "q_norm"),), ("wq_b2",)),
        GraphNode("RoPE1", "RoPE", (("x", "wq_b2"),), ("rope_table:q",)),
        GraphNode("wkv_a1", "GeMM", (("x", "attn_norm"),), ("wkv_a1",)),
        GraphNode("wkv_a2", "GeMM", (("x", "attn_norm"),), ("wkv_a2",)),
        GraphNode("RoPE2", "RoPE", (("x", "wkv_a2"),), ("rope_table:k",)),
        GraphNode("kv_norm", "RMSNorm", (("x", "wkv_a1"),), ("kv_norm_w",)),
        GraphNode("wkv_b1", "GeMM", (("x", "wq_b1"),), ("wkv_b1",)),
        GraphNode("mul1", "GeMM", (("x", "wkv_b1"), ("w", "kv_norm"))),
        GraphNode("mul2", "GeMM", (("x", "RoPE1"), ("w", "RoPE2"))),
        GraphNode("add", "Element-wise Addition",
                  (("x", "mul1"), ("b", "mul2"))),
        GraphNode("softmax", "Softmax", (("x", "add"),)),
        GraphNode("mul3", "GeMM", (("x", "softmax"), ("w", "kv_norm"))),
        GraphNode("wkv_b2", "GeMM", (("x", "mul3"),), ("wkv_b2",)),
        GraphNode("wo", "GeMM", (("x", "wkv_b2"),), ("wo",)),
    ]
    return ComponentGraph(nodes=n, output="wo")


def build_moe_graph(cfg: ModelConfig) -> ComponentGraph:
    nodes = [
        GraphNode("weight", "GeMM", (("x", "@input"),), ("gate_weight",)),
        GraphNode("sigmoid", "Sigmoid", (("x", "weight"),)),
        GraphNode("bias", "Element-wise Addition", (("x", "sigmoid"),),
                  ("gate_bias",)),
        GraphNode("top-k1", "Top-k", (("x", "bias"),)),
        GraphNode("top-k2", "Top-k", (("x", "top-k1"),)),
        GraphNode("w1", "GeMM", (("x", "@input"),), ("expert.w1",)),
        GraphNode("w3", "GeMM", (("x", "@input"),), ("expert.w3",)),
        GraphNode("silu", "Silu", (("x", "w1"),)),
        GraphNode("mul2", "Element-wise Multiplication",
                  (("x", "silu"), ("b", "w3"))),
        GraphNode("w2", "GeMM", (("x", "mul2"),), ("expert.w2",)),
        GraphNode("sh_w1", "GeMM", (("x", "@input"),), ("shared.w1",)),
        GraphNode("sh_w3", "GeMM", (("x", "@input"),), ("shared.w3",)),
        GraphNode("sh_silu", "Silu", (("x", "sh_w1"),)),
        GraphNode("sh_mul2", "Element-wise Multiplication",
                  (("x", "sh_silu"), ("b", "sh_w3"))),
        GraphNode("sh_w2", "GeMM", (("x", "sh_mul2"),), ("shared.w2",)),
        GraphNode("mul1", "Element-wise Multiplication",
                  (("x", "w2"), ("gates", "top-k2"))),
        GraphNode("add", "Element-wise Addition",
                  (("x", "mul1"), ("b", "sh_w2"))),
    ]
    return ComponentGraph(nodes=nodes, output="add")


# ---------------------------------------------------------------------------
# structural shape arithmetic (pure, no proving)


def _ceil(a: int, b: int) -> int:
    if b < 1:
        raise BadConfigError("segment must be >= 1")
    return (a + b - 1) // b


def dag_shape(kind: str, **cfg) -> list:
    """Node counts per level for one component configuration."""
    if kind in ("embedding", "rmsnorm", "sigmoid"):
        r, n, s = cfg["rows"], cfg["dim"], cfg["segment"]
        if min(r, n) < 1:
            raise BadConfigError("rows and dim must be >= 1")
        return [("segment", r * _ceil(n, s)), ("row", r), ("component", 1)]
    if kind in ("rope", "softmax"):
        r, hc = cfg["rows"], cfg["head_count"]
        if min(r, hc) < 1:
            raise BadConfigError("rows and head_count must be >= 1")
        return [("head", r * hc), ("row", r), ("component", 1)]
    if kind == "expert_selector":
        r, gc = cfg["rows"], cfg["group_count"]
        if min(r, gc) < 1:
            raise BadConfigError("rows and group_count must be >= 1")
        return [("group", r * gc), ("group_row", r),
                ("sorted_group", r * gc), ("sorted_group_row", r),
                ("component", 1)]
    if kind == "gemm":
        n, s = cfg["n"], cfg["segment"]
        blocks = _ceil(n, s)
        return [("input_block", blocks), ("weight_block", blocks),
                ("component", 1)]
    raise BadConfigError(f"unknown component kind {kind!r}")


# ---------------------------------------------------------------------------
# session plans


@dataclass
class Plan:
    name: str
    kind: str
    params: dict
    links: tuple = ()  # (input key, producer name, mode)
    out: str = ""


def _gemm_plan(name, a, n, b, seg, q, x_in, *, heads=1, x_cols=None, y_cols=None,
               w_tensor=None, w_link=None, w_grid=None, lb=None, out=None):
    params = {
        "a": a, "n": n, "b": b, "heads": heads, "seg": seg, "shift": q,
        "x_cols": x_cols if x_cols is not None else heads * n,
        "y_cols": y_cols if y_cols is not None else heads * b,
        "out": out or name,
    }
    links = [("x", x_in, "eval")]
    if w_tensor is not None:
        params["w_mode"] = "commit"
        params["w_tensor"] = w_tensor
        params["_leaf_base"] = lb[w_tensor]
    else:
        params["w_mode"] = "activation"
        params["w_prows"], params["w_pcols"], params["w_transposed"] = w_grid
        links.append(("w", w_link, "eval"))
    return Plan(name=name, kind="gemm", params=params, links=tuple(links),
                out=params["out"])


def _norm_plan(name, a, n, seg, w_tensor, x_in, lb):
    return Plan(
        name=name, kind="rmsnorm",
        params={"a": a, "n": n, "seg": seg, "x_cols": n,
                "w_tensor": w_tensor, "_leaf_base": lb[w_tensor], "out": name},
        links=(("x", x_in, "eval"),),
        out=name,
    )


def _ew_plan(name, kind_op, a, n, seg, x_in, b_in, *, b_mode="activation",
             b_tensor=None, lb=None, broadcast=False):
    params = {"a": a, "n": n, "seg": seg, "op": kind_op, "b_mode": b_mode,
              "x_cols": n, "out": name}
    links = [("x", x_in, "eval")]
    if b_mode == "commit":
        params["b_tensor"] = b_tensor
        params["_leaf_base"] = lb[b_tensor]
        params["b_broadcast"] = broadcast
    else:
        links.append(("b", b_in, "eval"))
    return Plan(name=name, kind="ew_mul" if kind_op == "mul" else "ew_add",
                params=params, links=tuple(links), out=name)


def session_plans(cfg: ModelConfig, tokens, activated_per_layer, lb) -> list:
    """Ordered component plans for a prefill session.

    ``activated_per_layer[i]`` is the ascending list of experts that ran
    in layer i (the routing outcome; cross-checked against the selector
    claims during verification).  ``lb`` maps tensor name to its first
    leaf in the model commitment.
    """
    a = len(tokens)
    q = cfg.quant.q
    h, dn, dr = cfg.n_heads, cfg.head_dim, cfg.rope_dim
    kv, ql = cfg.kv_lora_rank, cfg.q_lora_rank
    m = a  # prefill from an empty cache attends the batch itself
    seg = cfg.seg
    plans = [Plan(
        name="embedding", kind="embedding",
        params={"a": a, "n": cfg.dim, "seg": seg.embed, "tokens": list(tokens),
                "_leaf_base": lb["model.vocab"], "out": "embedding"},
        out="embedding",
    )]
    x_in = "embedding"
    for i in range(cfg.n_layers):
        L = f"L{i}"
        positions = list(range(a))
        plans.append(_norm_plan(f"{L}.attn_norm", a, cfg.dim, seg.norm,
                                f"{L}.attn_norm_w", x_in, lb))
        plans.append(_gemm_plan(f"{L}.wq_a", a, cfg.dim, ql, seg.gemm, q,
                                f"{L}.attn_norm", w_tensor=f"{L}.wq_a", lb=lb))
        plans.append(_norm_plan(f"{L}.q_norm", a, ql, seg.norm,
                                f"{L}.q_norm_w", f"{L}.wq_a", lb))
        plans.append(_gemm_plan(f"{L}.wq_b1", a, ql, h * dn, seg.gemm, q,
                                f"{L}.q_norm", w_tensor=f"{L}.wq_b1", lb=lb))
        plans.append(_gemm_plan(f"{L}.wq_b2", a, ql, h * dr, seg.gemm, q,
                                f"{L}.q_norm", w_tensor=f"{L}.wq_b2", lb=lb))
        plans.append(Plan(
            name=f"{L}.rope1", kind="rope",
            params={"a": a, "heads": h, "head_dim": dr, "positions": positions,
                    "_leaf_base": lb["model.rope"], "x_cols": h * dr,
                    "out": f"{L}.rope1"},
            links=(("x", f"{L}.wq_b2", "eval"),), out=f"{L}.rope1"))
        plans.append(_gemm_plan(f"{L}.wkv_a1", a, cfg.dim, kv, seg.gemm, q,
                                f"{L}.attn_norm", w_tensor=f"{L}.wkv_a1", lb=lb))
        plans.append(_gemm_plan(f"{L}.wkv_a2", a, cfg.dim, dr, seg.gemm, q,
                                f"{L}.attn_norm", w_tensor=f"{L}.wkv_a2", lb=lb))
        plans.append(Plan(
            name=f"{L}.rope2", kind="rope",
            params={"a": a, "heads": 1, "head_dim": dr, "positions": positions,
                    "_leaf_base": lb["model.rope"], "x_cols": dr,
                    "out": f"{L}.rope2"},
            links=(("x", f"{L}.wkv_a2", "eval"),), out=f"{L}.rope2"))
        plans.append(_norm_plan(f"{L}.kv_norm", a, kv, seg.norm,
                                f"{L}.kv_norm_w", f"{L}.wkv_a1", lb))
        plans.append(_gemm_plan(f"{L}.wkv_b1", a, h * dn, h * kv, seg.gemm, q,
                                f"{L}.wq_b1", w_tensor=f"{L}.wkv_b1", lb=lb))
        plans.append(_gemm_plan(f"{L}.mul1", a, kv, m, seg.gemm, q,
                                f"{L}.wkv_b1", heads=h,
                                w_link=f"{L}.kv_norm", w_grid=(m, kv, True)))
        plans.append(_gemm_plan(f"{L}.mul2", a, dr, m, seg.gemm, q,
                                f"{L}.rope1", heads=h,
                                w_link=f"{L}.rope2", w_grid=(m, dr, True)))
        plans.append(_ew_plan(f"{L}.add", "add", a, h * m, seg.ew,
                              f"{L}.mul1", f"{L}.mul2"))
        plans.append(Plan(
            name=f"{L}.softmax", kind="softmax",
            params={"a": a, "heads": h, "m": m, "seg": seg.softmax,
                    "used": [p + 1 for p in positions], "x_cols": h * m,
                    "out": f"{L}.softmax"},
            links=(("x", f"{L}.add", "eval"),), out=f"{L}.softmax"))
        plans.append(_gemm_plan(f"{L}.mul3", a, m, kv, seg.gemm, q,
                                f"{L}.softmax", heads=h,
                                w_link=f"{L}.kv_norm", w_grid=(m, kv, False)))
        plans.append(_gemm_plan(f"{L}.wkv_b2", a, h * kv, h * dn, seg.gemm, q,
                                f"{L}.mul3", w_tensor=f"{L}.wkv_b2", lb=lb))
        plans.append(_gemm_plan(f"{L}.wo", a, h * dn, cfg.dim, seg.gemm, q,
                                f"{L}.wkv_b2", w_tensor=f"{L}.wo", lb=lb))
        plans.append(_norm_plan(f"{L}.ffn_norm", a, cfg.dim, seg.norm,
                                f"{L}.ffn_norm_w", f"{L}.wo", lb))
        ne = cfg.moe.n_experts
        plans.append(_gemm_plan(f"{L}.weight", a, cfg.dim, ne, seg.gemm, q,
                                f"{L}.ffn_norm", w_tensor=f"{L}.gate_weight",
                                lb=lb))
        plans.append(Plan(
            name=f"{L}.sigmoid", kind="sigmoid",
            params={"a": a, "n": ne, "seg": seg.act, "kind": "sigmoid",
                    "x_cols": ne, "out": f"{L}.sigmoid"},
            links=(("x", f"{L}.weight", "eval"),), out=f"{L}.sigmoid"))
        plans.append(_ew_plan(f"{L}.bias", "add", a, ne, seg.act,
                              f"{L}.sigmoid", None, b_mode="commit",
                              b_tensor=f"{L}.gate_bias", lb=lb, broadcast=True))
        g = cfg.moe
        plans.append(Plan(
            name=f"{L}.selector", kind="expert_selector",
            params={"a": a, "n_experts": ne, "x_cols": ne,
                    "grouping": (g.n_groups, g.per_group_top,
                                 g.groups_selected, g.experts_selected)},
            links=(("x", f"{L}.bias", "eval"),)))
        activated = list(activated_per_layer[i])
        for e in activated:
            E = f"{L}.e{e}"
            plans.append(_gemm_plan(f"{E}.w1", a, cfg.dim, g.inter_dim, seg.gemm,
                                    q, f"{L}.ffn_norm", w_tensor=f"{E}.w1", lb=lb))
            plans.append(_gemm_plan(f"{E}.w3", a, cfg.dim, g.inter_dim, seg.gemm,
                                    q, f"{L}.ffn_norm", w_tensor=f"{E}.w3", lb=lb))
            plans.append(Plan(
                name=f"{E}.silu", kind="silu",
                params={"a": a, "n": g.inter_dim, "seg": seg.act, "kind": "silu",
                        "x_cols": g.inter_dim, "out": f"{E}.silu"},
                links=(("x", f"{E}.w1", "eval"),), out=f"{E}.silu"))
            plans.append(_ew_plan(f"{E}.mul2", "mul", a, g.inter_dim, seg.ew,
                                  f"{E}.silu", f"{E}.w3"))
            plans.append(_gemm_plan(f"{E}.w2", a, g.inter_dim, cfg.dim, seg.gemm,
                                    q, f"{E}.mul2", w_tensor=f"{E}.w2", lb=lb))
        links = [(f"expert:{e}", f"L{i}.e{e}.w2", "eval") for e in activated]
        links.append(("gates", f"{L}.sigmoid", "gates"))
        plans.append(Plan(
            name=f"{L}.moe_mul1", kind="weighted_sum",
            params={"a": a, "n": cfg.dim, "seg": seg.ew, "experts": activated,
                    "n_experts": ne, "out": f"{L}.moe_mul1",
                    "gates_out": f"{L}.gates"},
            links=tuple(links), out=f"{L}.moe_mul1"))
        prev_add = f"{L}.moe_mul1"
        for s in range(g.n_shared):
            S = f"{L}.sh{s}"
            plans.append(_gemm_plan(f"{S}.w1", a, cfg.dim, g.inter_dim, seg.gemm,
                                    q, f"{L}.ffn_norm", w_tensor=f"{S}.w1", lb=lb))
            plans.append(_gemm_plan(f"{S}.w3", a, cfg.dim, g.inter_dim, seg.gemm,
                                    q, f"{L}.ffn_norm", w_tensor=f"{S}.w3", lb=lb))
            plans.append(Plan(
                name=f"{S}.silu", kind="silu",
                params={"a": a, "n": g.inter_dim, "seg": seg.act, "kind": "silu",
                        "x_cols": g.inter_dim, "out": f"{S}.silu"},
                links=(("x", f"{S}.w1", "eval"),), out=f"{S}.silu"))
            plans.append(_ew_plan(f"{S}.mul2", "mul", a, g.inter_dim, seg.ew,
                                  f"{S}.silu", f"{S}.w3"))
            plans.append(_gemm_plan(f"{S}.w2", a, g.inter_dim, cfg.dim, seg.gemm,
                                    q, f"{S}.mul2", w_tensor=f"{S}.w2", lb=lb))
            plans.append(_ew_plan(f"{L}.moe_add{s}", "add", a, cfg.dim, seg.ew,
                                  prev_add, f"{S}.w2"))
            prev_add = f"{L}.moe_add{s}"
        x_in = prev_add
    plans.append(_norm_plan("final_norm", a, cfg.dim, seg.norm,
                            "model.final_norm", x_in, lb))
    plans.append(_gemm_plan("head", a, cfg.dim, cfg.vocab_size, seg.gemm, q,
                            "final_norm", w_tensor="model.head", lb=lb))
    plans.append(Plan(
        name="argmax", kind="topk",
        params={"k": 1, "order": "desc", "n": cfg.vocab_size,
                "src_row": a - 1, "src_cols": cfg.vocab_size},
        links=(("x", "head", "slice_row"),)))
    return plans


def witness_order(plans) -> list:
    """Deterministic witness-tensor registry: every component output plus
    the per-layer gate matrices."""
    names = []
    for p in plans:
        if p.out:
            names.append(p.out)
        if p.kind == "weighted_sum":
            names.append(p.params["gates_out"])
    return names
