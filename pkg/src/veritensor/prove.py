"""Proving pipeline: execute, commit to witnesses, derive challenges,
build the proof DAG.

Order matters for soundness: the witness Merkle root is fixed before the
challenge pair (z, t) is derived, and every claim is evaluated at that
(z, t).  Weights are loaded layer by layer twice (once to execute, once
to open committed segments) so peak resident parameter bytes stay within
the streaming bound of one layer plus the model-level tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .encoding import hash_segment
from .errors import BadConfigError
from .field import DEFAULT_FIELD
from .graph import Plan, session_plans, witness_order
from .merkle import MerkleTree
from .model import Engine, Recorder
from .proofs.context import Ctx
from .proofs.elementwise import build_elementwise, build_weighted_sum
from .proofs.gemm import build_gemm
from .proofs.nodes import Claim, Level, ProofNode, make_node
from .proofs.normact import (
    build_activation,
    build_embedding,
    build_rmsnorm,
    build_rope,
    build_softmax,
)
from .proofs.select import build_expert_selector, build_topk
from .store import Commitment, WeightStore, commit_model
from .tensor import QTensor

INPUT_TAG = "input-tokens"
WITNESS_TAG = "wit"


def input_digest_of(tokens) -> bytes:
    return hash_segment(INPUT_TAG, list(tokens))


def witness_digest(name: str, values) -> bytes:
    return hash_segment(f"{WITNESS_TAG}:{name}", values)


def build_component(plan: Plan, rec: Recorder, ctx: Ctx, ws: WeightStore,
                    tree: MerkleTree, rope_rows) -> ProofNode:
    p = plan.params
    kind = plan.kind
    producer = {k: src for k, src, *_ in plan.links}

    def produced(key):
        return rec.tensors[producer[key]]

    if kind == "embedding":
        return build_embedding(plan.name, p, rec.tensors["embedding"], ctx,
                               commit_tree=tree)
    if kind == "rmsnorm":
        x = produced("x")
        w_vec = ws.tensor(p["w_tensor"]).row(0)
        return build_rmsnorm(plan.name, p, x, w_vec, rec.tensors[plan.out],
                             rec.aux[plan.out], ctx, commit_tree=tree)
    if kind == "gemm":
        x = produced("x")
        if p["w_mode"] == "commit":
            w_used = ws.tensor(p["w_tensor"])
        else:
            w_prod = produced("w")
            w_used = w_prod.transpose() if p["w_transposed"] else w_prod
        aux = rec.aux[plan.out]
        return build_gemm(plan.name, p, x, w_used, aux["y_raw"], aux["rems"],
                          rec.tensors[plan.out], ctx, commit_tree=tree)
    if kind == "rope":
        return build_rope(plan.name, p, produced("x"), rec.tensors[plan.out],
                          rec.aux[plan.out], ctx, rope_rows, commit_tree=tree)
    if kind == "softmax":
        return build_softmax(plan.name, p, produced("x"), rec.aux[plan.out], ctx)
    if kind in ("sigmoid", "silu"):
        return build_activation(plan.name, p, produced("x"),
                                rec.tensors[plan.out], rec.aux[plan.out], ctx)
    if kind in ("ew_add", "ew_mul"):
        x = produced("x")
        if p["b_mode"] == "commit":
            b = ws.tensor(p["b_tensor"])
        else:
            b = produced("b")
        rems = rec.aux.get(plan.out)
        return build_elementwise(plan.name, p, x, b, rec.tensors[plan.out],
                                 rems, ctx, commit_tree=tree)
    if kind == "expert_selector":
        layer = int(plan.name.split(".")[0][1:])
        return build_expert_selector(plan.name, p, produced("x"),
                                     rec.selections[layer], ctx)
    if kind == "weighted_sum":
        layer = plan.name.split(".")[0]
        expert_outs = {e: rec.tensors[f"{layer}.e{e}.w2"] for e in p["experts"]}
        return build_weighted_sum(plan.name, p, expert_outs,
                                  rec.tensors[p["gates_out"]],
                                  rec.tensors[plan.out], rec.aux[plan.out], ctx)
    if kind == "topk":
        aux = rec.aux["argmax"]
        return build_topk(plan.name, p, aux["input"], aux["sorted"],
                          aux["perm"], ctx)
    raise BadConfigError(f"no builder for kind {kind}")


@dataclass
class ProveResult:
    root: ProofNode
    commitment: Commitment
    logits_digest: bytes
    predicted: int
    z: int
    t: int
    peak_param_bytes: int
    streaming_bound: int


def prove_inference(model_dir, tokens, commitment=None, tree=None) -> ProveResult:
    """Run a prefill session over the committed model and prove it."""
    model_dir = Path(model_dir)
    if commitment is None or tree is None:
        commitment, tree = commit_model(model_dir)
    if not tokens:
        raise BadConfigError("token list must be non-empty")
    cfg = commitment.cfg
    if len(tokens) > cfg.max_seq:
        raise BadConfigError("token list longer than max_seq")
    ws = WeightStore(model_dir, commitment)
    ws.attach_tree(tree)
    engine = Engine(cfg)
    rec = Recorder()
    logits, _, predicted = engine.run(tokens, ws, rec=rec)
    ws.release_tensor("model.head")
    activated = [rec.activated[i] for i in range(cfg.n_layers)]
    plans = session_plans(cfg, tokens, activated, commitment.leaf_base)

    order = witness_order(plans)
    wit_leaves = [witness_digest(n, rec.tensors[n].data) for n in order]
    witness_root = MerkleTree(wit_leaves).root
    in_digest = input_digest_of(tokens)
    from .transcript import derive_session_challenges

    challenge, _ = derive_session_challenges(commitment.root, in_digest,
                                             witness_root, DEFAULT_FIELD)
    ctx = Ctx(field=DEFAULT_FIELD, qcfg=cfg.quant, z=challenge.z, t=challenge.t,
              model_root=commitment.root, weight_base=commitment.leaf_base)

    comp_nodes = {}
    current_layer = None
    for plan in plans:
        layer = int(plan.name.split(".")[0][1:]) if plan.name.startswith("L") \
            else None
        if current_layer is not None and layer != current_layer:
            ws.release(current_layer)
        current_layer = layer
        comp_nodes[plan.name] = build_component(plan, rec, ctx, ws, tree,
                                                engine.rope_table.rows)
    if current_layer is not None:
        ws.release(current_layer)

    children = [comp_nodes["embedding"]]
    for i in range(cfg.n_layers):
        prefix = f"L{i}."
        layer_children = [comp_nodes[p.name] for p in plans
                          if p.name.startswith(prefix)]
        layer_claim = Claim(kind="layer", aux={"layer": i})
        children.append(make_node(Level.LAYER, layer_claim, layer_children))
    children += [comp_nodes["final_norm"], comp_nodes["head"],
                 comp_nodes["argmax"]]

    logits_digest = witness_digest("head", logits.data)
    model_aux = {
        "model_root": commitment.root,
        "input_digest": in_digest,
        "witness_root": witness_root,
        "z": challenge.z,
        "t": challenge.t,
        "n_tokens": len(tokens),
        "n_layers": cfg.n_layers,
        "logits_digest": logits_digest,
        "predicted": predicted,
    }
    for i, acts in enumerate(activated):
        model_aux[f"activated:{i}"] = list(acts)
    root = make_node(Level.MODEL, Claim(kind="model", name=commitment.model_name,
                                        aux=model_aux), children)
    return ProveResult(
        root=root, commitment=commitment, logits_digest=logits_digest,
        predicted=predicted, z=challenge.z, t=challenge.t,
        peak_param_bytes=ws.peak, streaming_bound=ws.streaming_bound(),
    )
