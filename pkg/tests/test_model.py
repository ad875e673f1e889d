import random

import pytest

from veritensor.errors import ShapeMismatchError
from veritensor.kernels import embed_tokens, silu, sigmoid, gemm, rescale, \
    elementwise_mul
from veritensor.model import (
    Engine,
    ExpertWeights,
    LayerWeights,
    ModelConfig,
    ModelState,
    MoeConfig,
    Recorder,
    toy_config,
)
from veritensor.store import WeightStore
from veritensor.tensor import QTensor
from conftest import mini_config


def zero_layer_weights(cfg):
    z = QTensor.zeros
    h, dn, dr = cfg.n_heads, cfg.head_dim, cfg.rope_dim
    kv, ql, g = cfg.kv_lora_rank, cfg.q_lora_rank, cfg.moe

    def ew():
        return ExpertWeights(z(cfg.dim, g.inter_dim), z(g.inter_dim, cfg.dim),
                             z(cfg.dim, g.inter_dim))

    return LayerWeights(
        wq_a=z(cfg.dim, ql), wq_b1=z(ql, h * dn), wq_b2=z(ql, h * dr),
        wkv_a1=z(cfg.dim, kv), wkv_a2=z(cfg.dim, dr),
        wkv_b1=z(h * dn, h * kv), wkv_b2=z(h * kv, h * dn),
        wo=z(h * dn, cfg.dim),
        attn_norm_w=[0] * cfg.dim, q_norm_w=[0] * ql, kv_norm_w=[0] * kv,
        ffn_norm_w=[0] * cfg.dim, gate_weight=z(cfg.dim, g.n_experts),
        gate_bias=[0] * g.n_experts,
        experts=[ew() for _ in range(g.n_experts)],
        shared=[ew() for _ in range(g.n_shared)],
    )


def test_zero_weights_layer_outputs_zero_and_grows_caches():
    cfg = mini_config()
    engine = Engine(cfg)
    state = ModelState.fresh(1)
    x = QTensor(1, cfg.dim, [12345] * cfg.dim)
    out, state = engine.run_layer(state, zero_layer_weights(cfg), x, 0)
    assert all(v == 0 for v in out.data)
    assert len(state.kv_cache[0]) == 1 and len(state.pe_cache[0]) == 1


def test_cache_rows_grow_by_token_count(mini_model):
    cfg = mini_model["cfg"]
    ws = WeightStore(mini_model["dir"])
    engine = Engine(cfg)
    state = ModelState.fresh(cfg.n_layers)
    x = embed_tokens([4, 5, 6], ws.vocab())
    engine.run_layer(state, ws.layer(0), x, 0)
    assert len(state.kv_cache[0]) == 3 and len(state.pe_cache[0]) == 3
    assert all(len(r) == cfg.kv_lora_rank for r in state.kv_cache[0])
    assert all(len(r) == cfg.rope_dim for r in state.pe_cache[0])


def test_prefill_decode_equivalence(mini_model):
    cfg = mini_model["cfg"]
    ws = WeightStore(mini_model["dir"])
    engine = Engine(cfg)
    tokens = [9, 4, 17]

    state_a = ModelState.fresh(cfg.n_layers)
    cur = embed_tokens(tokens, ws.vocab())
    for layer in range(cfg.n_layers):
        cur, state_a = engine.run_layer(state_a, ws.layer(layer), cur, layer)
    prefill_rows = cur.tolist()

    state_b = ModelState.fresh(cfg.n_layers)
    decode_rows = []
    for tok in tokens:
        cur = embed_tokens([tok], ws.vocab())
        for layer in range(cfg.n_layers):
            cur, state_b = engine.run_layer(state_b, ws.layer(layer), cur, layer)
        decode_rows.append(cur.row(0))
    # causal position outputs match exactly, including every cache row
    assert prefill_rows == decode_rows
    assert state_a.kv_cache == state_b.kv_cache
    assert state_a.pe_cache == state_b.pe_cache


def test_multi_row_prefill_requires_empty_cache(mini_model):
    cfg = mini_model["cfg"]
    ws = WeightStore(mini_model["dir"])
    engine = Engine(cfg)
    state = ModelState.fresh(cfg.n_layers)
    x = embed_tokens([1], ws.vocab())
    engine.run_layer(state, ws.layer(0), x, 0)
    with pytest.raises(ShapeMismatchError):
        engine.run_layer(state, ws.layer(0), embed_tokens([1, 2], ws.vocab()), 0)


def test_moe_dense_limit_equals_plain_expert_sum(mini_model):
    """With every expert selected the gated block equals the direct sum
    of gate-weighted expert MLPs plus the shared experts."""
    base = mini_model["cfg"]
    cfg = ModelConfig(
        dim=base.dim, n_layers=1, n_heads=base.n_heads, head_dim=base.head_dim,
        rope_dim=base.rope_dim, q_lora_rank=base.q_lora_rank,
        kv_lora_rank=base.kv_lora_rank, vocab_size=base.vocab_size,
        max_seq=base.max_seq,
        moe=MoeConfig(n_experts=4, n_shared=1, n_groups=2, per_group_top=2,
                      groups_selected=2, experts_selected=4, inter_dim=8),
    )
    ws = WeightStore(mini_model["dir"])
    engine = Engine(cfg)
    weights = ws.layer(0)
    rng = random.Random(8)
    hn = QTensor(2, cfg.dim, [rng.randrange(-cfg.quant.one, cfg.quant.one)
                              for _ in range(2 * cfg.dim)])
    rec = Recorder()
    out = engine._run_moe(hn, weights, 0, rec)
    assert rec.activated[0] == [0, 1, 2, 3]

    def mlp(x, ew):
        g1, _ = rescale(gemm(x, ew.w1), cfg.quant.q)
        g3, _ = rescale(gemm(x, ew.w3), cfg.quant.q)
        s1 = QTensor.from_rows([[silu(v, cfg.quant, engine.pos_table)[0]
                                 for v in g1.row(i)] for i in range(x.rows)])
        gated, _ = elementwise_mul(s1, g3, cfg.quant.q)
        y, _ = rescale(gemm(gated, ew.w2), cfg.quant.q)
        return y

    gate_lin, _ = rescale(gemm(hn, weights.gate_weight), cfg.quant.q)
    sig = QTensor.from_rows([[sigmoid(v, cfg.quant, engine.pos_table)[0]
                              for v in gate_lin.row(i)] for i in range(2)])
    expect_rows = []
    for i in range(2):
        acc = [0] * cfg.dim
        for e in range(4):
            y_e = mlp(hn, weights.experts[e])
            for j in range(cfg.dim):
                acc[j] += sig.at(i, e) * y_e.at(i, j)
        row = [v >> cfg.quant.q for v in acc]
        sh = mlp(hn, weights.shared[0])
        expect_rows.append([r + sh.at(i, j) for j, r in enumerate(row)])
    assert out.tolist() == expect_rows


def test_state_snapshot_roundtrip():
    st = ModelState.fresh(2)
    st.kv_cache[0].append([1, 2, 3])
    st.pe_cache[1].append([4, 5])
    st.pos = 7
    st2 = ModelState.from_json(st.to_json())
    assert st2.kv_cache == st.kv_cache
    assert st2.pe_cache == st.pe_cache
    assert st2.pos == 7


def test_run_rejects_bad_tokens(mini_model):
    engine = Engine(mini_model["cfg"])
    ws = WeightStore(mini_model["dir"])
    with pytest.raises(ShapeMismatchError):
        engine.run([], ws)
    with pytest.raises(ShapeMismatchError):
        engine.run([10_000], ws)


def test_config_validation():
    with pytest.raises(Exception):
        ModelConfig(head_dim=3)
    with pytest.raises(Exception):
        ModelConfig(moe=MoeConfig(n_experts=10, n_groups=4))
    cfg = toy_config()
    assert ModelConfig.from_json(cfg.to_json()) == cfg
