import pytest

from veritensor.errors import BadConfigError
from veritensor.graph import (
    build_mla_graph,
    build_moe_graph,
    dag_shape,
    session_plans,
    witness_order,
)
from veritensor.model import toy_config


def test_mla_graph_nodes_and_kind_mapping():
    g = build_mla_graph(toy_config())
    names = {n.name for n in g.nodes}
    assert names == {
        "attn_norm", "wq_a", "q_norm", "wq_b1", "wq_b2", "RoPE1",
        "wkv_a1", "wkv_a2", "RoPE2", "kv_norm", "wkv_b1", "mul1", "mul2",
        "add", "softmax", "mul3", "wkv_b2", "wo",
    }
    kinds = g.kinds()
    assert kinds["GeMM"] == {"wq_a", "wkv_a1", "wkv_a2", "wq_b1", "wq_b2",
                             "wkv_b1", "wkv_b2", "mul1", "mul2", "mul3", "wo"}
    assert {"q_norm", "kv_norm"} <= kinds["RMSNorm"]
    assert kinds["RoPE"] == {"RoPE1", "RoPE2"}
    assert kinds["Softmax"] == {"softmax"}
    assert "add" in kinds["Element-wise Addition"]


def test_mla_graph_audit_acyclic_single_output():
    g = build_mla_graph(toy_config())
    stats = g.audit()
    assert g.output == "wo"
    assert stats["nodes"] == 18
    # every edge carries exactly one link obligation, every weight one digest
    assert stats["edges"] >= 18
    assert stats["weights"] == 13  # 8 projections + 3 norms + 2 rope tables


def test_moe_graph_nodes_and_kind_mapping():
    g = build_moe_graph(toy_config())
    kinds = g.kinds()
    assert kinds["Top-k"] == {"top-k1", "top-k2"}
    assert kinds["Element-wise Addition"] == {"add", "bias"}
    assert {"weight", "w1", "w2", "w3"} <= kinds["GeMM"]
    assert "silu" in kinds["Silu"]
    assert {"mul1", "mul2"} <= kinds["Element-wise Multiplication"]
    g.audit()
    assert g.output == "add"


def test_graph_audit_rejects_double_weight_obligation():
    from veritensor.graph import ComponentGraph, GraphNode

    g = ComponentGraph(nodes=[
        GraphNode("a", "GeMM", (("x", "@input"),), ("w",)),
        GraphNode("b", "GeMM", (("x", "a"),), ("w",)),
    ], output="b")
    with pytest.raises(BadConfigError):
        g.audit()


# ---------------------------------------------------------------------------
# structural shape arithmetic


def test_dag_shape_reference_configurations():
    assert dag_shape("embedding", rows=24, dim=7168, segment=224) == [
        ("segment", 768), ("row", 24), ("component", 1)]
    assert dag_shape("rmsnorm", rows=24, dim=7168, segment=112) == [
        ("segment", 1536), ("row", 24), ("component", 1)]
    assert dag_shape("rmsnorm", rows=24, dim=1536, segment=48) == [
        ("segment", 768), ("row", 24), ("component", 1)]
    assert dag_shape("rope", rows=24, head_count=128) == [
        ("head", 3072), ("row", 24), ("component", 1)]
    assert dag_shape("softmax", rows=24, head_count=128) == [
        ("head", 3072), ("row", 24), ("component", 1)]
    assert dag_shape("sigmoid", rows=24, dim=256, segment=16) == [
        ("segment", 384), ("row", 24), ("component", 1)]
    assert dag_shape("expert_selector", rows=24, group_count=8) == [
        ("group", 192), ("group_row", 24), ("sorted_group", 192),
        ("sorted_group_row", 24), ("component", 1)]
    assert dag_shape("gemm", n=7168, segment=112) == [
        ("input_block", 64), ("weight_block", 64), ("component", 1)]


def test_dag_shape_bad_inputs():
    with pytest.raises(BadConfigError):
        dag_shape("embedding", rows=0, dim=4, segment=2)
    with pytest.raises(BadConfigError):
        dag_shape("gemm", n=4, segment=0)
    with pytest.raises(BadConfigError):
        dag_shape("nosuch", rows=1)


def test_dag_shape_matches_built_proofs(mini_session):
    """The pure arithmetic agrees with actual node counts in a real proof."""
    from veritensor.proofs.nodes import count_levels

    cfg = mini_session["cfg"]
    root = mini_session["result"].root
    comps = {}
    for node, _ in root.walk():
        if node.level == "component" and node.claim.name:
            comps[node.claim.name] = node
    a = len(mini_session["tokens"])
    emb = count_levels(comps["embedding"])
    expect = dict(dag_shape("embedding", rows=a, dim=cfg.dim,
                            segment=cfg.seg.embed))
    assert emb["segment"] == expect["segment"] and emb["row"] == expect["row"]
    sm = count_levels(comps["L0.softmax"])
    expect = dict(dag_shape("softmax", rows=a, head_count=cfg.n_heads))
    assert sm["head"] == expect["head"] and sm["row"] == expect["row"]
    sel = count_levels(comps["L0.selector"])
    expect = dict(dag_shape("expert_selector", rows=a,
                            group_count=cfg.moe.n_groups))
    for lvl in ("group", "group_row", "sorted_group", "sorted_group_row"):
        assert sel[lvl] == expect[lvl]
    g = count_levels(comps["L0.wq_a"])
    expect = dict(dag_shape("gemm", n=cfg.dim, segment=cfg.seg.gemm))
    assert g["input_block"] == expect["input_block"]
    assert g["weight_block"] == expect["weight_block"]


# ---------------------------------------------------------------------------
# session plans


def test_session_plans_structure_and_witness_order():
    cfg = toy_config()
    lb = {t: 0 for t in _all_tensor_names(cfg)}
    lb["model.vocab"] = 0
    plans = session_plans(cfg, [1, 2, 3], [[0, 1], [2]], lb)
    names = [p.name for p in plans]
    assert names[0] == "embedding"
    assert names[-3:] == ["final_norm", "head", "argmax"]
    assert "L0.e0.w1" in names and "L1.e2.w1" in names
    assert "L0.e2.w1" not in names  # not activated in layer 0
    # every link refers to an earlier plan
    seen = set()
    for p in plans:
        for _, src, _ in p.links:
            assert src in seen, f"{p.name} links forward to {src}"
        seen.add(p.name)
    order = witness_order(plans)
    assert order[0] == "embedding" and "L0.gates" in order
    assert len(order) == len(set(order))


def _all_tensor_names(cfg):
    from veritensor.store import tensor_specs

    return [t.name for t in tensor_specs(cfg)]
