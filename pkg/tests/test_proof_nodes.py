import pytest

from veritensor.errors import IncompatibleNodesError, ProofFormatError
from veritensor.field import DEFAULT_FIELD
from veritensor.proofs.io import decode_claim
from veritensor.proofs.nodes import (
    Claim,
    Level,
    canonical_merge,
    combine_claims,
    count_levels,
    encode_claim,
    make_node,
    merge,
)

F = DEFAULT_FIELD


def leaf(kind="gemm_x", **kw):
    return make_node(Level.SEGMENT, Claim(kind=kind, **kw))


def test_claim_encode_decode_roundtrip():
    c = Claim(
        kind="gemm_x",
        name="L0.wq_a",
        input_evals={"x": 123456789, "w": 5},
        output_eval=42,
        weight_digest=b"\x07" * 32,
        aux={"row": 3, "neg": -17, "v_col": [1, 2, 3], "tag": "hi",
             "digs": [b"\x01" * 4, b""], "flag": True},
        openings={"x": [-1, 0, 2**62], "path": [b"\x02" * 32]},
    )
    raw = encode_claim(c)
    c2 = decode_claim(raw)
    assert encode_claim(c2) == raw
    assert c2.input_evals == c.input_evals
    assert c2.aux["neg"] == -17
    assert c2.aux["flag"] is True
    assert c2.openings["x"] == [-1, 0, 2**62]


def test_claim_encoding_is_canonical_under_key_order():
    a = Claim(kind="k", aux={"b": 1, "a": 2})
    b = Claim(kind="k", aux={"a": 2, "b": 1})
    assert encode_claim(a) == encode_claim(b)


def test_claim_encoding_rejects_mixed_lists():
    with pytest.raises(ProofFormatError):
        encode_claim(Claim(kind="k", aux={"v": [1, b"x"]}))


def test_node_digest_binds_subtree():
    a = leaf(input_evals={"x": 1})
    b = leaf(input_evals={"x": 2})
    m1 = merge(a, b, F)
    a2 = leaf(input_evals={"x": 3})
    m2 = merge(a2, b, F)
    assert m1.digest != m2.digest
    assert m1.digest != merge(b, a, F).digest  # order matters


def test_merge_combines_fields():
    a = leaf(input_evals={"x": 10}, output_eval=1,
             aux={"f_ip": 5, "i_sum": 7, "v_col": [1, 2], "row": 0})
    b = leaf(input_evals={"x": 20}, output_eval=2,
             aux={"f_ip": 6, "i_sum": 8, "v_col": [3, 4], "row": 1})
    m = merge(a, b, F)
    assert m.claim.input_evals == {"x": 30}
    assert m.claim.output_eval == 3
    assert m.claim.aux["f_ip"] == 11
    assert m.claim.aux["i_sum"] == 15
    assert m.claim.aux["v_col"] == [4, 6]
    assert "row" not in m.claim.aux  # leaf-local keys drop


def test_merge_field_wraparound():
    p = F.modulus
    a = leaf(input_evals={"x": p - 1})
    b = leaf(input_evals={"x": 5})
    assert merge(a, b, F).claim.input_evals["x"] == 4


def test_merge_vector_length_mismatch():
    a = leaf(aux={"v_col": [1, 2]})
    b = leaf(aux={"v_col": [1]})
    with pytest.raises(IncompatibleNodesError):
        merge(a, b, F)


def test_merge_zero_contribution_padding():
    # merging with a zero-contribution node keeps the claim unchanged
    a = leaf(input_evals={"x": 77}, output_eval=13, aux={"f_ip": 9})
    pad = leaf(input_evals={"x": 0}, output_eval=0, aux={"f_ip": 0})
    m = merge(a, pad, F)
    assert m.claim.input_evals["x"] == 77
    assert m.claim.output_eval == 13
    assert m.claim.aux["f_ip"] == 9


def test_canonical_merge_is_left_leaning():
    a, b, c = (leaf(input_evals={"x": i}) for i in (1, 2, 3))
    assert canonical_merge([a, b, c], F).digest == merge(merge(a, b, F), c, F).digest


def test_canonical_merge_singleton_and_empty():
    a = leaf()
    assert canonical_merge([a], F) is a
    with pytest.raises(IncompatibleNodesError):
        canonical_merge([], F)


def test_combine_claims_associativity_of_fold():
    claims = [Claim(kind="k", input_evals={"x": i}, aux={"i_n": i})
              for i in (4, 9, 16)]
    direct = combine_claims(claims, F)
    two_step = combine_claims(
        [combine_claims(claims[:2], F), claims[2]], F)
    assert encode_claim(direct) == encode_claim(two_step)


def test_count_levels_and_walk_paths():
    a, b = leaf(), leaf()
    m = merge(a, b, F)
    counts = count_levels(m)
    assert counts == {Level.MERGE: 1, Level.SEGMENT: 2}
    paths = [p for _, p in m.walk()]
    assert paths[0].startswith("merge:")
    assert "[0]" in paths[1] and "[1]" in paths[2]
