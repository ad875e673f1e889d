"""End-to-end session behavior: binding, determinism, modes, tampering."""

import random

import pytest

from veritensor.field import GOLDILOCKS_P
from veritensor.proofs.io import deserialize_proof, serialize_proof
from veritensor.proofs.nodes import Claim, ProofNode, make_node
from veritensor.proofs.verify import verify_session
from veritensor.prove import prove_inference
from tamper_utils import collect_paths, rebuild_path, tampered_root


def test_honest_session_accepts_replay_and_spot(mini_session):
    res = mini_session["result"]
    c, toks = mini_session["commitment"], mini_session["tokens"]
    assert verify_session(res.root, c, toks).accepted
    assert verify_session(res.root, c, toks, mode="spot", fraction=1.0).accepted
    assert verify_session(res.root, c, toks, mode="spot", fraction=0.2,
                          seed=9).accepted


def test_wrong_tokens_rejected(mini_session):
    res = mini_session["result"]
    v = verify_session(res.root, mini_session["commitment"], [1, 2, 4])
    assert not v.accepted and v.failure[1] == "input-digest"


def test_wrong_commitment_rejected(mini_session, toy_model):
    res = mini_session["result"]
    v = verify_session(res.root, toy_model["commitment"],
                       mini_session["tokens"])
    assert not v.accepted and v.failure[1] == "commitment-root"


def test_challenge_binding(mini_session):
    res = mini_session["result"]
    root = res.root
    aux = dict(root.claim.aux)
    aux["z"] = (aux["z"] + 1) % GOLDILOCKS_P or 1
    bad = make_node(root.level, Claim(kind="model", name=root.claim.name,
                                      aux=aux), root.children)
    v = verify_session(bad, mini_session["commitment"], mini_session["tokens"])
    assert not v.accepted
    # the foreign z breaks either a claim recomputation or the re-derivation
    assert v.failure[1] in ("challenge-derivation",) or "claim" in v.failure[1] \
        or v.failure[1].startswith(("gemm", "embed", "rms"))


def test_witness_root_binding(mini_session):
    res = mini_session["result"]
    root = res.root
    aux = dict(root.claim.aux)
    aux["witness_root"] = bytes(32)
    bad = make_node(root.level, Claim(kind="model", name=root.claim.name,
                                      aux=aux), root.children)
    v = verify_session(bad, mini_session["commitment"], mini_session["tokens"])
    assert not v.accepted
    assert v.failure[1] in ("witness-root", "challenge-derivation")


def test_logits_digest_and_prediction_bound(mini_session):
    res = mini_session["result"]
    root = res.root
    aux = dict(root.claim.aux)
    aux["predicted"] = (aux["predicted"] + 1) % 32
    bad = make_node(root.level, Claim(kind="model", name=root.claim.name,
                                      aux=aux), root.children)
    v = verify_session(bad, mini_session["commitment"], mini_session["tokens"])
    assert not v.accepted and v.failure[1] == "predicted-token"


def test_prove_is_deterministic(mini_model, mini_session):
    res2 = prove_inference(mini_model["dir"], mini_session["tokens"],
                           mini_model["commitment"], mini_model["tree"])
    raw1 = serialize_proof(mini_session["result"].root, GOLDILOCKS_P, 16, 8)
    raw2 = serialize_proof(res2.root, GOLDILOCKS_P, 16, 8)
    assert raw1 == raw2


def test_verdict_independent_of_threads(mini_session):
    res = mini_session["result"]
    c, toks = mini_session["commitment"], mini_session["tokens"]
    verdicts = [verify_session(res.root, c, toks, threads=n) for n in (1, 2, 5)]
    assert all(v.accepted for v in verdicts)
    rng = random.Random(4)
    bad, _ = tampered_root(res.root, rng, fix_digests=True)
    fails = [verify_session(bad, c, toks, threads=n).failure for n in (1, 2, 5)]
    assert fails[0] == fails[1] == fails[2]
    assert fails[0] is not None


def test_random_single_value_tampers_rejected(mini_session):
    res = mini_session["result"]
    c, toks = mini_session["commitment"], mini_session["tokens"]
    rng = random.Random(31)
    nodes = collect_paths(res.root)
    for _ in range(40):
        out = tampered_root(res.root, rng, nodes=nodes)
        assert out is not None
        bad, label = out
        v = verify_session(bad, c, toks)
        assert not v.accepted, f"tamper survived: {label}"
        assert v.failure is not None


def test_stale_digest_tamper_located_at_digest_pass(mini_session):
    res = mini_session["result"]
    rng = random.Random(12)
    bad, _ = tampered_root(res.root, rng, fix_digests=False)
    v = verify_session(bad, mini_session["commitment"], mini_session["tokens"])
    assert not v.accepted and v.failure[1] == "node-digest"


def test_spot_mode_checks_structure_but_samples_leaves(mini_session):
    res = mini_session["result"]
    c, toks = mini_session["commitment"], mini_session["tokens"]
    rng = random.Random(77)
    # a stale-digest tamper is structural and must be caught even at 0 fraction
    bad, _ = tampered_root(res.root, rng, fix_digests=False)
    v = verify_session(bad, c, toks, mode="spot", fraction=0.0, seed=1)
    assert not v.accepted


def test_swapped_component_subtrees_rejected(mini_session):
    res = mini_session["result"]
    root = res.root
    layer = root.children[1]
    kids = list(layer.children)
    i1 = next(i for i, n in enumerate(kids) if n.claim.name == "L0.wq_b1")
    i2 = next(i for i, n in enumerate(kids) if n.claim.name == "L0.wq_b2")
    kids[i1], kids[i2] = kids[i2], kids[i1]
    bad_layer = make_node(layer.level, layer.claim, kids)
    bad = rebuild_path(root, (1,), bad_layer)
    v = verify_session(bad, mini_session["commitment"], mini_session["tokens"])
    assert not v.accepted and v.failure[1] == "layer:component-name"


def test_proof_byte_flips_rejected(mini_session):
    res = mini_session["result"]
    cfg = mini_session["cfg"]
    raw = serialize_proof(res.root, GOLDILOCKS_P, cfg.quant.q, cfg.quant.l)
    rng = random.Random(3)
    for _ in range(20):
        bad = bytearray(raw)
        off = rng.randrange(16, len(bad))
        bad[off] ^= 1 << rng.randrange(8)
        try:
            root, *_ = deserialize_proof(bytes(bad))
        except Exception:
            continue  # rejected at the container
        v = verify_session(root, mini_session["commitment"],
                           mini_session["tokens"])
        assert not v.accepted
