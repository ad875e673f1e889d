"""Model configuration, weights, caches and the exact-integer executor.

A layer runs latent attention followed by the gated expert block, in the
same integer arithmetic the proofs replay.  Attention caches the
compressed KV latents and the rotated key positions per layer; decode
steps append one row per token and attend across everything cached, so
a prefill over n tokens and n single-token decodes produce bit-identical
outputs (softmax lanes beyond a row's position are padding and come out
exactly zero).

The executor optionally records every component's output tensor and
kernel witness, which is what the proof builders consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

from .errors import BadConfigError, ShapeMismatchError
from .fixedpoint import Direction, QuantConfig, build_exp2_frac_table
from .kernels import (
    GroupedTopK,
    SortOrder,
    build_rope_table,
    elementwise_add,
    elementwise_mul,
    embed_tokens,
    expert_select,
    gemm,
    rescale,
    rmsnorm,
    rope_rotate,
    sigmoid,
    silu,
    softmax_row,
    sort_with_witness,
)
from .tensor import QTensor


@dataclass(frozen=True)
class MoeConfig:
    n_experts: int = 16
    n_shared: int = 1
    n_groups: int = 4
    per_group_top: int = 1
    groups_selected: int = 2
    experts_selected: int = 4
    inter_dim: int = 32

    @property
    def grouping(self) -> GroupedTopK:
        return GroupedTopK(self.n_groups, self.per_group_top,
                           self.groups_selected, self.experts_selected)


@dataclass(frozen=True)
class SegmentConfig:
    """Segment widths per component kind."""

    embed: int = 16
    norm: int = 16
    gemm: int = 16
    softmax: int = 8
    act: int = 8
    ew: int = 16


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    rope_dim: int = 8
    q_lora_rank: int = 32
    kv_lora_rank: int = 16
    vocab_size: int = 256
    max_seq: int = 32
    moe: MoeConfig = dc_field(default_factory=MoeConfig)
    quant: QuantConfig = dc_field(default_factory=QuantConfig)
    seg: SegmentConfig = dc_field(default_factory=SegmentConfig)
    rope_base: int = 10000
    route_bias_after_sigmoid: bool = True

    def __post_init__(self):
        if self.head_dim % 2 or self.rope_dim % 2:
            raise BadConfigError("head_dim and rope_dim must be even")
        if self.moe.n_experts % self.moe.n_groups:
            raise BadConfigError("n_experts must divide into n_groups")
        for v in (self.dim, self.n_layers, self.n_heads, self.q_lora_rank,
                  self.kv_lora_rank, self.vocab_size, self.max_seq):
            if v < 1:
                raise BadConfigError("all dims must be >= 1")

    def to_json(self) -> dict:
        return {
            "dim": self.dim, "n_layers": self.n_layers, "n_heads": self.n_heads,
            "head_dim": self.head_dim, "rope_dim": self.rope_dim,
            "q_lora_rank": self.q_lora_rank, "kv_lora_rank": self.kv_lora_rank,
            "vocab_size": self.vocab_size, "max_seq": self.max_seq,
            "rope_base": self.rope_base,
            "route_bias_after_sigmoid": self.route_bias_after_sigmoid,
            "moe": vars(self.moe) | {},
            "quant": {"q": self.quant.q, "l": self.quant.l,
                      "neg_inf_q": self.quant.neg_inf_q},
            "seg": vars(self.seg) | {},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(
            dim=d["dim"], n_layers=d["n_layers"], n_heads=d["n_heads"],
            head_dim=d["head_dim"], rope_dim=d["rope_dim"],
            q_lora_rank=d["q_lora_rank"], kv_lora_rank=d["kv_lora_rank"],
            vocab_size=d["vocab_size"], max_seq=d["max_seq"],
            rope_base=d.get("rope_base", 10000),
            route_bias_after_sigmoid=d.get("route_bias_after_sigmoid", True),
            moe=MoeConfig(**d["moe"]),
            quant=QuantConfig(**d["quant"]),
            seg=SegmentConfig(**d["seg"]),
        )


def toy_config() -> ModelConfig:
    return ModelConfig()


@dataclass
class ExpertWeights:
    w1: QTensor  # dim x inter
    w2: QTensor  # inter x dim
    w3: QTensor  # dim x inter


@dataclass
class LayerWeights:
    wq_a: QTensor
    wq_b1: QTensor
    wq_b2: QTensor
    wkv_a1: QTensor
    wkv_a2: QTensor
    wkv_b1: QTensor  # block-diagonal up-projection extracting keys
    wkv_b2: QTensor  # block-diagonal up-projection recovering values
    wo: QTensor
    attn_norm_w: list
    q_norm_w: list
    kv_norm_w: list
    ffn_norm_w: list
    gate_weight: QTensor
    gate_bias: list
    experts: list
    shared: list


@dataclass
class ModelState:
    """Per-layer caches plus the processed-token counter."""

    kv_cache: list  # per layer: list of kv_lora_rank rows
    pe_cache: list  # per layer: list of rope_dim rows
    pos: int = 0

    @classmethod
    def fresh(cls, n_layers: int) -> "ModelState":
        return cls(kv_cache=[[] for _ in range(n_layers)],
                   pe_cache=[[] for _ in range(n_layers)], pos=0)

    def to_json(self) -> str:
        return json.dumps({"kv": self.kv_cache, "pe": self.pe_cache, "pos": self.pos})

    @classmethod
    def from_json(cls, raw: str) -> "ModelState":
        d = json.loads(raw)
        return cls(kv_cache=d["kv"], pe_cache=d["pe"], pos=d["pos"])


class Recorder:
    """Collects witness tensors and kernel auxiliaries during execution."""

    def __init__(self):
        self.tensors: dict = {}
        self.aux: dict = {}
        self.selections: dict = {}
        self.activated: dict = {}

    def put(self, name: str, tensor: QTensor, aux=None) -> None:
        self.tensors[name] = tensor
        if aux is not None:
            self.aux[name] = aux


def _rmsnorm_tensor(x: QTensor, w, q: int):
    rows, auxes = [], []
    for i in range(x.rows):
        y, aux = rmsnorm(x.row(i), w, q)
        rows.append(y)
        auxes.append(aux)
    return QTensor.from_rows(rows), auxes


def _gemm_rescaled(x: QTensor, w: QTensor, q: int):
    y_raw = gemm(x, w)
    y, rems = rescale(y_raw, q)
    return y, {"y_raw": y_raw, "rems": rems}


def _multihead_matmul(x: QTensor, w_used: QTensor, heads: int, q: int):
    """Per-head product against a shared right operand, heads side by side."""
    n = x.cols // heads
    parts = [gemm(x.hslice(h * n, (h + 1) * n), w_used) for h in range(heads)]
    b = w_used.cols
    raw = QTensor(x.rows, heads * b,
                  [parts[h].at(i, j) for i in range(x.rows)
                   for h in range(heads) for j in range(b)], validate=False)
    y, rems = rescale(raw, q)
    return y, {"y_raw": raw, "rems": rems}


def _rope_tensor(x: QTensor, heads: int, positions, table, q: int):
    d = x.cols // heads
    rows, rem_rows = [], []
    for i in range(x.rows):
        out_row, rems = [], []
        trow = table.rows[positions[i]]
        for h in range(heads):
            y, r = rope_rotate(x.row_slice(i, h * d, (h + 1) * d), trow, q)
            out_row.extend(y)
            rems.extend(r)
        rows.append(out_row)
        rem_rows.append(rems)
    return QTensor.from_rows(rows), rem_rows


class Engine:
    """Executes the model in exact integer arithmetic.

    Weights arrive per layer through a loader callable so the full model
    never has to be resident; see store.WeightStore.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.neg_table = build_exp2_frac_table(cfg.quant, Direction.NEG)
        self.pos_table = build_exp2_frac_table(cfg.quant, Direction.POS)
        self.rope_table = build_rope_table(cfg.max_seq - 1, cfg.rope_dim,
                                           cfg.quant.q, cfg.rope_base)

    # -- attention + experts for one layer --------------------------------

    def run_layer(self, state: ModelState, weights: LayerWeights, x: QTensor,
                  layer: int, rec: Recorder | None = None):
        cfg = self.cfg
        q = cfg.quant.q
        h, dn, dr = cfg.n_heads, cfg.head_dim, cfg.rope_dim
        a = x.rows
        prev = len(state.kv_cache[layer])
        if x.rows > 1 and prev != 0:
            raise ShapeMismatchError("multi-row prefill needs an empty cache")
        positions = [prev + i for i in range(a)]
        L = f"L{layer}"

        def put(nm, tensor, aux=None):
            if rec is not None:
                rec.put(f"{L}.{nm}", tensor, aux)

        xn, aux = _rmsnorm_tensor(x, weights.attn_norm_w, q)
        put("attn_norm", xn, aux)
        cq, aux = _gemm_rescaled(xn, weights.wq_a, q)
        put("wq_a", cq, aux)
        cqn, aux = _rmsnorm_tensor(cq, weights.q_norm_w, q)
        put("q_norm", cqn, aux)
        q_nope, aux = _gemm_rescaled(cqn, weights.wq_b1, q)
        put("wq_b1", q_nope, aux)
        q_pe_raw, aux = _gemm_rescaled(cqn, weights.wq_b2, q)
        put("wq_b2", q_pe_raw, aux)
        q_pe, rems = _rope_tensor(q_pe_raw, h, positions, self.rope_table, q)
        put("rope1", q_pe, rems)
        ckv_raw, aux = _gemm_rescaled(xn, weights.wkv_a1, q)
        put("wkv_a1", ckv_raw, aux)
        kpe_raw, aux = _gemm_rescaled(xn, weights.wkv_a2, q)
        put("wkv_a2", kpe_raw, aux)
        k_pe, rems = _rope_tensor(kpe_raw, 1, positions, self.rope_table, q)
        put("rope2", k_pe, rems)
        c_kv, aux = _rmsnorm_tensor(ckv_raw, weights.kv_norm_w, q)
        put("kv_norm", c_kv, aux)

        for i in range(a):
            state.kv_cache[layer].append(c_kv.row(i))
            state.pe_cache[layer].append(k_pe.row(i))
        m = prev + a
        kv_all = QTensor.from_rows(state.kv_cache[layer])  # m x kv_lora
        pe_all = QTensor.from_rows(state.pe_cache[layer])  # m x rope_dim

        q_lat, aux = _gemm_rescaled(q_nope, weights.wkv_b1, q)
        put("wkv_b1", q_lat, aux)
        s_nope, aux = _multihead_matmul(q_lat, kv_all.transpose(), h, q)
        put("mul1", s_nope, aux)
        s_pe, aux = _multihead_matmul(q_pe, pe_all.transpose(), h, q)
        put("mul2", s_pe, aux)
        scores = elementwise_add(s_nope, s_pe)
        put("add", scores)

        attn = QTensor.zeros(a, h * m)
        sm_aux = {}
        pw = -(-m // cfg.seg.softmax) * cfg.seg.softmax
        for i in range(a):
            used = positions[i] + 1
            for hh in range(h):
                eff = [scores.at(i, hh * m + j) if j < used else cfg.quant.neg_inf_q
                       for j in range(pw)]
                ps, saux = softmax_row(eff, cfg.quant, self.neg_table)
                sm_aux[(i, hh)] = (eff, ps, saux)
                for j in range(m):
                    attn.data[i * h * m + hh * m + j] = ps[j]
        put("softmax", attn, sm_aux)

        ctx_lat, aux = _multihead_matmul(attn, kv_all, h, q)
        put("mul3", ctx_lat, aux)
        ctx, aux = _gemm_rescaled(ctx_lat, weights.wkv_b2, q)
        put("wkv_b2", ctx, aux)
        attn_out, aux = _gemm_rescaled(ctx, weights.wo, q)
        put("wo", attn_out, aux)

        hn, aux = _rmsnorm_tensor(attn_out, weights.ffn_norm_w, q)
        put("ffn_norm", hn, aux)
        out = self._run_moe(hn, weights, layer, rec)
        return out, state

    def _expert_mlp(self, x: QTensor, ew: ExpertWeights, prefix: str,
                    rec: Recorder | None):
        q = self.cfg.quant.q
        g1, aux = _gemm_rescaled(x, ew.w1, q)
        if rec:
            rec.put(f"{prefix}.w1", g1, aux)
        g3, aux = _gemm_rescaled(x, ew.w3, q)
        if rec:
            rec.put(f"{prefix}.w3", g3, aux)
        s_rows, s_aux, y_rows = [], [], []
        for i in range(g1.rows):
            auxr, yr = [], []
            for v in g1.row(i):
                y, a2 = silu(v, self.cfg.quant, self.pos_table)
                auxr.append(a2)
                yr.append(y)
            s_aux.append(auxr)
            y_rows.append(yr)
        s1 = QTensor.from_rows(y_rows)
        if rec:
            rec.put(f"{prefix}.silu", s1, s_aux)
        gated, rems = elementwise_mul(s1, g3, q)
        if rec:
            rec.put(f"{prefix}.mul2", gated, rems)
        y, aux = _gemm_rescaled(gated, ew.w2, q)
        if rec:
            rec.put(f"{prefix}.w2", y, aux)
        return y

    def _run_moe(self, hn: QTensor, weights: LayerWeights, layer: int,
                 rec: Recorder | None) -> QTensor:
        cfg = self.cfg
        q = cfg.quant.q
        a, ne = hn.rows, cfg.moe.n_experts
        L = f"L{layer}"
        gate_lin, aux = _gemm_rescaled(hn, weights.gate_weight, q)
        if rec:
            rec.put(f"{L}.weight", gate_lin, aux)
        sig_rows, sig_aux = [], []
        for i in range(a):
            auxr, row = [], []
            for v in gate_lin.row(i):
                s, a2 = sigmoid(v, cfg.quant, self.pos_table)
                auxr.append(a2)
                row.append(s)
            sig_aux.append(auxr)
            sig_rows.append(row)
        sig = QTensor.from_rows(sig_rows)
        if rec:
            rec.put(f"{L}.sigmoid", sig, sig_aux)
        bias_rows = QTensor(a, ne, list(weights.gate_bias) * a)
        routing = elementwise_add(sig, bias_rows)
        if rec:
            rec.put(f"{L}.bias", routing)
        selections = [expert_select(routing.row(i), cfg.moe.grouping)
                      for i in range(a)]
        activated = sorted({e for s in selections for e in s.expert_indices})
        if rec:
            rec.selections[layer] = selections
            rec.activated[layer] = activated
        gates = QTensor.zeros(a, ne)
        for i, sel in enumerate(selections):
            for e in sel.expert_indices:
                gates.data[i * ne + e] = sig.at(i, e) \
                    if cfg.route_bias_after_sigmoid else routing.at(i, e)
        expert_outs = {}
        for e in activated:
            expert_outs[e] = self._expert_mlp(hn, weights.experts[e],
                                              f"{L}.e{e}", rec)
        out_rows, rems = [], []
        mask = (1 << q) - 1
        for i in range(a):
            row = []
            for j in range(cfg.dim):
                acc = 0
                for e in activated:
                    acc += gates.at(i, e) * expert_outs[e].at(i, j)
                row.append(acc >> q)
                rems.append(acc & mask)
            out_rows.append(row)
        routed = QTensor.from_rows(out_rows)
        if rec:
            rec.put(f"{L}.moe_mul1", routed, rems)
            rec.tensors[f"{L}.gates"] = gates
        acc_out = routed
        for s, ew in enumerate(weights.shared):
            sh = self._expert_mlp(hn, ew, f"{L}.sh{s}", rec)
            acc_out = elementwise_add(acc_out, sh)
            if rec:
                rec.put(f"{L}.moe_add{s}", acc_out)
        return acc_out

    # -- whole model -------------------------------------------------------

    def run(self, tokens, weight_loader, state: ModelState | None = None,
            rec: Recorder | None = None):
        """Prefill the token list; returns (logits, state, argmax witness)."""
        cfg = self.cfg
        if not tokens:
            raise ShapeMismatchError("token list must be non-empty")
        if any(not 0 <= t < cfg.vocab_size for t in tokens):
            raise ShapeMismatchError("token id out of range")
        if state is None:
            state = ModelState.fresh(cfg.n_layers)
        x = embed_tokens(tokens, weight_loader.vocab())
        if rec is not None:
            rec.put("embedding", x)
        for layer in range(cfg.n_layers):
            weights = weight_loader.layer(layer)
            x, state = self.run_layer(state, weights, x, layer, rec)
            weight_loader.release(layer)
        state.pos += len(tokens)
        q = cfg.quant.q
        fn, aux = _rmsnorm_tensor(x, weight_loader.final_norm(), q)
        if rec is not None:
            rec.put("final_norm", fn, aux)
        logits, aux = _gemm_rescaled(fn, weight_loader.head(), q)
        if rec is not None:
            rec.put("head", logits, aux)
        last = logits.row(logits.rows - 1)
        sorted_vals, perm = sort_with_witness(last, SortOrder.DESC)
        if rec is not None:
            rec.put("argmax", QTensor(1, 1, [perm[0]]),
                    {"input": last, "sorted": sorted_vals, "perm": perm})
        return logits, state, perm[0]
