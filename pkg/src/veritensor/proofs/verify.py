"""Session verification: full replay and seeded spot-checking.

REPLAY recomputes every claim from its openings, checks every arithmetic
constraint, every Merkle path, every cross-component link, reassembles
the witness tensors to recompute the witness commitment, and re-derives
the challenge pair from the transcript.  SPOTCHECK keeps all structural
checks (digests, merge recombination, wiring, links, commitments and the
challenge re-derivation) but recomputes only a seeded pseudorandom
fraction of the leaf claims; it is a testing and benchmarking mode, not
a soundness claim.

Failures are verdicts, not exceptions: the first failing node's path and
constraint name come back in the Verdict.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

from ..encoding import seg_eval
from ..errors import VeritensorError
from ..field import DEFAULT_FIELD
from ..graph import session_plans, witness_order
from ..merkle import MerkleTree
from .context import CHECKERS, CheckFailure, Ctx, need
from .nodes import (
    Level,
    ProofNode,
    Verdict,
    _node_digest,
    combine_claims,
    encode_claim,
)

# checkers register themselves on import
from . import elementwise as _ew  # noqa: F401
from . import gemm as _gemm  # noqa: F401
from . import normact as _normact  # noqa: F401
from . import select as _select  # noqa: F401


def make_sampler(fraction: float, seed: int):
    if fraction >= 1.0:
        return None
    threshold = int(fraction * (1 << 64))

    def sample(digest: bytes) -> bool:
        h = hashlib.sha256(b"VT1\x00spot" + seed.to_bytes(8, "little") + digest)
        return int.from_bytes(h.digest()[:8], "little") < threshold

    return sample


def _digest_and_merge_pass(root: ProofNode) -> tuple | None:
    """Recompute every node digest and recombine every merge claim."""
    field = DEFAULT_FIELD
    for node, path in root.walk():
        expect = _node_digest(node.level, encode_claim(node.claim),
                              [c.digest for c in node.children])
        if node.digest != expect:
            return (path, "node-digest")
        if node.level == Level.MERGE:
            if len(node.children) != 2:
                return (path, "merge-arity")
            combined = combine_claims([c.claim for c in node.children], field)
            if encode_claim(combined) != encode_claim(node.claim):
                return (path, "merge-recombination")
    return None


def _check_model_layout(root: ProofNode, plans, cfg) -> list:
    """Model/layer wiring: returns [(plan, component node, path)]."""
    need(root.level == Level.MODEL and root.claim.kind == "model", "model:level")
    by_layer: dict = {}
    model_level = []
    for p in plans:
        if p.name.startswith("L"):
            by_layer.setdefault(int(p.name.split(".")[0][1:]), []).append(p)
        else:
            model_level.append(p)
    expected_children = 1 + cfg.n_layers + 3
    need(len(root.children) == expected_children, "model:child-count")
    out = []
    emb = root.children[0]
    need(emb.claim.name == "embedding" and emb.claim.kind == "embedding",
         "model:embedding-slot")
    out.append((model_level[0], emb, "model[0]"))
    for i in range(cfg.n_layers):
        ln = root.children[1 + i]
        need(ln.level == Level.LAYER and ln.claim.kind == "layer"
             and ln.claim.aux.get("layer") == i, "model:layer-slot")
        lplans = by_layer.get(i, [])
        need(len(ln.children) == len(lplans), "layer:component-count")
        for k, (p, comp) in enumerate(zip(lplans, ln.children)):
            need(comp.claim.name == p.name, "layer:component-name")
            need(comp.claim.kind == p.kind, "layer:component-kind")
            out.append((p, comp, f"model[{1 + i}][{k}]"))
    tail = root.children[1 + cfg.n_layers:]
    for off, (p, comp) in enumerate(zip(model_level[1:], tail)):
        need(comp.claim.name == p.name and comp.claim.kind == p.kind,
             "model:tail-slot")
        out.append((p, comp, f"model[{1 + cfg.n_layers + off}]"))
    return out


def _activated_from_claim(root: ProofNode, n_layers: int) -> list:
    out = []
    for i in range(n_layers):
        acts = root.claim.aux.get(f"activated:{i}")
        need(isinstance(acts, list) and acts == sorted(set(acts)),
             "model:activated-list")
        out.append(acts)
    return out


def _check_links(plans, claims, witnesses, cfg, field, z) -> tuple | None:
    for p in plans:
        claim = claims[p.name]
        for key, src, mode in p.links:
            if mode == "eval":
                prod = claims.get(src)
                if prod is None:
                    return (p.name, f"link:{key}:missing-producer")
                if claim.input_evals.get(key) != prod.output_eval:
                    return (p.name, f"link:{key}:value")
            elif mode == "slice_row":
                vals = witnesses.get(src)
                if vals is None:
                    return (p.name, f"link:{key}:missing-witness")
                cols = p.params["src_cols"]
                row = p.params["src_row"]
                expect = seg_eval(vals[row * cols:(row + 1) * cols], z,
                                  row * cols, field)
                if claim.input_evals.get(key) != expect:
                    return (p.name, f"link:{key}:slice")
            elif mode == "gates":
                layer = p.name.split(".")[0]
                gates = witnesses.get(p.params["gates_out"])
                gate_src = "sigmoid" if cfg.route_bias_after_sigmoid else "bias"
                sig = witnesses.get(f"{layer}.{gate_src}")
                sel_claim = claims.get(f"{layer}.selector")
                if gates is None or sig is None or sel_claim is None:
                    return (p.name, "link:gates:missing")
                esel = cfg.moe.experts_selected
                ne = cfg.moe.n_experts
                selected = sel_claim.aux["selected"]
                for r in range(p.params["a"]):
                    chosen = set(selected[r * esel:(r + 1) * esel])
                    for e in range(ne):
                        want = sig[r * ne + e] if e in chosen else 0
                        if gates[r * ne + e] != want:
                            return (p.name, "link:gates:value")
            else:
                return (p.name, f"link:{key}:unknown-mode")
    return None


def verify_session(root: ProofNode, commitment, tokens, mode: str = "replay",
                   fraction: float = 0.1, seed: int = 0,
                   threads: int = 1) -> Verdict:
    """Never raises on malformed proofs: every failure is a Verdict."""
    try:
        return _verify_session(root, commitment, tokens, mode, fraction,
                               seed, threads)
    except Exception as e:  # noqa: BLE001 - a verifier must not crash
        return Verdict(False, ("proof", f"malformed:{type(e).__name__}"))


def _verify_session(root: ProofNode, commitment, tokens, mode: str,
                    fraction: float, seed: int, threads: int) -> Verdict:
    from ..prove import input_digest_of, witness_digest
    from ..transcript import derive_session_challenges

    field = DEFAULT_FIELD
    cfg = commitment.cfg
    try:
        fail = _digest_and_merge_pass(root)
        if fail:
            return Verdict(False, fail)
        mc = root.claim.aux
        if mc.get("model_root") != commitment.root:
            return Verdict(False, ("model", "commitment-root"))
        if mc.get("n_tokens") != len(tokens) or mc.get("n_layers") != cfg.n_layers:
            return Verdict(False, ("model", "session-shape"))
        if mc.get("input_digest") != input_digest_of(tokens):
            return Verdict(False, ("model", "input-digest"))
        z, t = mc.get("z"), mc.get("t")
        if not (isinstance(z, int) and isinstance(t, int) and z and t):
            return Verdict(False, ("model", "challenges"))
        activated = _activated_from_claim(root, cfg.n_layers)
        plans = session_plans(cfg, tokens, activated, commitment.leaf_base)
        slots = _check_model_layout(root, plans, cfg)
    except (CheckFailure, VeritensorError, ValueError, KeyError, IndexError) as e:
        name = e.constraint if isinstance(e, CheckFailure) else f"malformed:{e}"
        return Verdict(False, ("model", name))

    sample = None if mode == "replay" else make_sampler(fraction, seed)
    ctx = Ctx(field=field, qcfg=cfg.quant, z=z, t=t, model_root=commitment.root,
              weight_base=commitment.leaf_base, sample=sample)

    def check_one(item):
        plan, node, path = item
        try:
            kind = plan.kind
            _, fn = CHECKERS[kind]
            fn(node, plan.params, ctx)
            return None
        except CheckFailure as e:
            return (path + "/" + plan.name, e.constraint)
        except (VeritensorError, ValueError, KeyError, IndexError, TypeError) as e:
            return (path + "/" + plan.name, f"malformed:{type(e).__name__}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(check_one, slots))
    else:
        results = [check_one(item) for item in slots]
    for r in results:
        if r is not None:
            return Verdict(False, r)

    claims = {plan.name: node.claim for plan, node, _ in slots}

    try:
        # routing claimed at the model level must match the selector claims
        esel = cfg.moe.experts_selected
        for i in range(cfg.n_layers):
            sel = claims[f"L{i}.selector"].aux["selected"]
            union = sorted({e for r in range(len(tokens))
                            for e in sel[r * esel:(r + 1) * esel]})
            if union != activated[i]:
                return Verdict(False, (f"L{i}.selector", "activated-mismatch"))

        order = witness_order(plans)
        missing = [n for n in order if n not in ctx.witnesses]
        if missing:
            return Verdict(False, ("session", f"witness-missing:{missing[0]}"))
        leaves = [witness_digest(n, ctx.witnesses[n]) for n in order]
        if MerkleTree(leaves).root != mc.get("witness_root"):
            return Verdict(False, ("session", "witness-root"))

        ch, _ = derive_session_challenges(commitment.root, mc["input_digest"],
                                          mc["witness_root"], field)
        if (ch.z, ch.t) != (z, t):
            return Verdict(False, ("session", "challenge-derivation"))

        fail = _check_links(plans, claims, ctx.witnesses, cfg, field, z)
        if fail:
            return Verdict(False, fail)

        if mc.get("logits_digest") != witness_digest("head", ctx.witnesses["head"]):
            return Verdict(False, ("session", "logits-digest"))
        argmax = claims["argmax"]
        if argmax.aux.get("topk_indices", [None])[0] != mc.get("predicted"):
            return Verdict(False, ("argmax", "predicted-token"))
    except (CheckFailure, VeritensorError, ValueError, KeyError,
            IndexError, TypeError) as e:
        name = e.constraint if isinstance(e, CheckFailure) else f"malformed:{e}"
        return Verdict(False, ("session", name))
    return Verdict(True)
