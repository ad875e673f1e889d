"""Model directory layout, weight commitment and streamed loading.

A model directory holds manifest.json (config plus tensor index) and one
little-endian int64 raw binary per tensor.  Committing hashes every
tensor into leaves whose layout matches how proofs consume it:

    gemm_w     one leaf per (output column, inner block): the s x 1
               column segment, zero-extended
    vector     one leaf per 1 x s segment of a parameter row
    row_digest one leaf per row, assembled from its 1 x s segment
               digests (vocabulary rows)
    rope_row   one leaf per table row, hashed directly

and the Merkle root over all leaves (manifest order) is the public
model commitment.  The commitment file records the per-tensor leaf
ranges so provers and verifiers agree on leaf numbering.

WeightStore memory-maps nothing fancy: it loads tensor files on demand,
evicts per layer, and tracks the peak resident parameter bytes so the
streaming bound (one layer plus its active experts, plus the model-level
tensors) can be asserted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

from .encoding import hash_digests, hash_segment
from .errors import CommitmentMismatchError, ManifestError, TensorFileError
from .field import DEFAULT_FIELD
from .kernels import build_rope_table
from .merkle import MerkleTree
from .model import ExpertWeights, LayerWeights, ModelConfig
from .proofs.gemm import WSEG_TAG
from .proofs.normact import ROPE_ROW_TAG, VROW_TAG, VSEG_TAG
from .tensor import QTensor


@dataclass
class TensorSpec:
    name: str
    rows: int
    cols: int
    layout: str  # gemm_w | vector | row_digest | rope_row
    seg: int
    leaf_lo: int = -1
    leaf_hi: int = -1

    @property
    def filename(self) -> str:
        return self.name + ".bin"

    @property
    def n_leaves(self) -> int:
        if self.layout == "gemm_w":
            return self.cols * ((self.rows + self.seg - 1) // self.seg)
        if self.layout == "vector":
            return (self.cols + self.seg - 1) // self.seg
        return self.rows  # row_digest, rope_row

    @property
    def n_bytes(self) -> int:
        return 8 * self.rows * self.cols


def tensor_specs(cfg: ModelConfig) -> list:
    """The canonical tensor index for a model of this configuration."""
    h, dn, dr = cfg.n_heads, cfg.head_dim, cfg.rope_dim
    kv, ql, g = cfg.kv_lora_rank, cfg.q_lora_rank, cfg.moe
    s = cfg.seg
    specs = [
        TensorSpec("model.vocab", cfg.vocab_size, cfg.dim, "row_digest", s.embed),
        TensorSpec("model.rope", cfg.max_seq, dr, "rope_row", 0),
        TensorSpec("model.final_norm", 1, cfg.dim, "vector", s.norm),
        TensorSpec("model.head", cfg.dim, cfg.vocab_size, "gemm_w", s.gemm),
    ]
    for i in range(cfg.n_layers):
        L = f"L{i}"
        specs += [
            TensorSpec(f"{L}.attn_norm_w", 1, cfg.dim, "vector", s.norm),
            TensorSpec(f"{L}.q_norm_w", 1, ql, "vector", s.norm),
            TensorSpec(f"{L}.kv_norm_w", 1, kv, "vector", s.norm),
            TensorSpec(f"{L}.ffn_norm_w", 1, cfg.dim, "vector", s.norm),
            TensorSpec(f"{L}.wq_a", cfg.dim, ql, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wq_b1", ql, h * dn, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wq_b2", ql, h * dr, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wkv_a1", cfg.dim, kv, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wkv_a2", cfg.dim, dr, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wkv_b1", h * dn, h * kv, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wkv_b2", h * kv, h * dn, "gemm_w", s.gemm),
            TensorSpec(f"{L}.wo", h * dn, cfg.dim, "gemm_w", s.gemm),
            TensorSpec(f"{L}.gate_weight", cfg.dim, g.n_experts, "gemm_w", s.gemm),
            TensorSpec(f"{L}.gate_bias", 1, g.n_experts, "vector", s.act),
        ]
        for e in range(g.n_experts):
            E = f"{L}.e{e}"
            specs += [
                TensorSpec(f"{E}.w1", cfg.dim, g.inter_dim, "gemm_w", s.gemm),
                TensorSpec(f"{E}.w2", g.inter_dim, cfg.dim, "gemm_w", s.gemm),
                TensorSpec(f"{E}.w3", cfg.dim, g.inter_dim, "gemm_w", s.gemm),
            ]
        for sh in range(g.n_shared):
            S = f"{L}.sh{sh}"
            specs += [
                TensorSpec(f"{S}.w1", cfg.dim, g.inter_dim, "gemm_w", s.gemm),
                TensorSpec(f"{S}.w2", g.inter_dim, cfg.dim, "gemm_w", s.gemm),
                TensorSpec(f"{S}.w3", cfg.dim, g.inter_dim, "gemm_w", s.gemm),
            ]
    return specs


# ---------------------------------------------------------------------------
# tensor files and manifest


def write_tensor(path: Path, tensor: QTensor) -> None:
    path.write_bytes(struct.pack(f"<{len(tensor.data)}q", *tensor.data))


def read_tensor(path: Path, spec: TensorSpec) -> QTensor:
    raw = path.read_bytes()
    if len(raw) != spec.n_bytes:
        raise TensorFileError(
            f"{spec.name}: file is {len(raw)} bytes, manifest says {spec.n_bytes}")
    vals = struct.unpack(f"<{spec.rows * spec.cols}q", raw)
    return QTensor(spec.rows, spec.cols, list(vals))


def write_manifest(model_dir: Path, name: str, cfg: ModelConfig) -> None:
    specs = tensor_specs(cfg)
    doc = {
        "model_name": name,
        "field_modulus": DEFAULT_FIELD.modulus,
        "q": cfg.quant.q,
        "l": cfg.quant.l,
        "config": cfg.to_json(),
        "tensors": [
            {"name": t.name, "rows": t.rows, "cols": t.cols,
             "layout": t.layout, "seg": t.seg}
            for t in specs
        ],
    }
    (model_dir / "manifest.json").write_text(json.dumps(doc, indent=1))


@dataclass
class Manifest:
    model_name: str
    cfg: ModelConfig
    specs: list

    def spec(self, name: str) -> TensorSpec:
        for t in self.specs:
            if t.name == name:
                return t
        raise ManifestError(f"unknown tensor {name}")


def load_manifest(model_dir: Path) -> Manifest:
    raw = (model_dir / "manifest.json").read_text()  # missing file is an I/O error
    try:
        doc = json.loads(raw)
        cfg = ModelConfig.from_json(doc["config"])
        specs = [TensorSpec(t["name"], t["rows"], t["cols"], t["layout"], t["seg"])
                 for t in doc["tensors"]]
        name = doc["model_name"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"malformed manifest: {e}") from e
    expected = tensor_specs(cfg)
    if [(t.name, t.rows, t.cols, t.layout, t.seg) for t in specs] != \
       [(t.name, t.rows, t.cols, t.layout, t.seg) for t in expected]:
        raise ManifestError("tensor index disagrees with the configuration")
    return Manifest(model_name=name, cfg=cfg, specs=specs)


# ---------------------------------------------------------------------------
# commitment


def tensor_leaves(tensor: QTensor, spec: TensorSpec) -> list:
    s = spec.seg
    if spec.layout == "gemm_w":
        nb = (spec.rows + s - 1) // s
        out = []
        for j in range(spec.cols):
            for blk in range(nb):
                vals = [tensor.at(k, j) if k < spec.rows else 0
                        for k in range(blk * s, blk * s + s)]
                out.append(hash_segment(WSEG_TAG, vals))
        return out
    if spec.layout == "vector":
        nb = (spec.cols + s - 1) // s
        row = tensor.row(0)
        return [
            hash_segment(VSEG_TAG, (row + [0] * (nb * s))[blk * s : blk * s + s])
            for blk in range(nb)
        ]
    if spec.layout == "row_digest":
        nb = (spec.cols + s - 1) // s
        out = []
        for r in range(spec.rows):
            row = tensor.row(r)
            segd = [
                hash_segment(VSEG_TAG, (row + [0] * (nb * s))[blk * s : blk * s + s])
                for blk in range(nb)
            ]
            out.append(hash_digests(VROW_TAG, segd))
        return out
    if spec.layout == "rope_row":
        return [hash_segment(ROPE_ROW_TAG, tensor.row(r)) for r in range(spec.rows)]
    raise ManifestError(f"unknown layout {spec.layout}")


@dataclass
class Commitment:
    model_name: str
    root: bytes
    leaf_base: dict       # tensor name -> first leaf index
    specs: list
    cfg: ModelConfig

    def to_json(self) -> str:
        return json.dumps({
            "model_name": self.model_name,
            "field_modulus": DEFAULT_FIELD.modulus,
            "q": self.cfg.quant.q,
            "l": self.cfg.quant.l,
            "config": self.cfg.to_json(),
            "root": self.root.hex(),
            "tensors": [
                {"name": t.name, "rows": t.rows, "cols": t.cols,
                 "layout": t.layout, "seg": t.seg,
                 "leaf_lo": t.leaf_lo, "leaf_hi": t.leaf_hi}
                for t in self.specs
            ],
        }, indent=1)

    @classmethod
    def from_json(cls, raw: str) -> "Commitment":
        doc = json.loads(raw)
        cfg = ModelConfig.from_json(doc["config"])
        specs = [TensorSpec(t["name"], t["rows"], t["cols"], t["layout"],
                            t["seg"], t["leaf_lo"], t["leaf_hi"])
                 for t in doc["tensors"]]
        return cls(
            model_name=doc["model_name"],
            root=bytes.fromhex(doc["root"]),
            leaf_base={t.name: t.leaf_lo for t in specs},
            specs=specs,
            cfg=cfg,
        )


def commit_model(model_dir: Path):
    """Hash every tensor into leaves and build the model Merkle tree.

    Returns (Commitment, MerkleTree).  Raises TensorFileError when a
    tensor file disagrees with the manifest.
    """
    manifest = load_manifest(model_dir)
    leaves: list = []
    specs = []
    for spec in manifest.specs:
        tensor = read_tensor(model_dir / spec.filename, spec)
        lo = len(leaves)
        leaves.extend(tensor_leaves(tensor, spec))
        specs.append(TensorSpec(spec.name, spec.rows, spec.cols, spec.layout,
                                spec.seg, lo, len(leaves)))
    tree = MerkleTree(leaves)
    commitment = Commitment(
        model_name=manifest.model_name, root=tree.root,
        leaf_base={t.name: t.leaf_lo for t in specs},
        specs=specs, cfg=manifest.cfg,
    )
    return commitment, tree


# ---------------------------------------------------------------------------
# streamed weight loading


class _LazyExperts:
    """Sequence facade loading expert weight triples on first access."""

    def __init__(self, store: "WeightStore", layer: int, shared: bool):
        self._store = store
        self._layer = layer
        self._prefix = "sh" if shared else "e"
        self._n = (store.cfg.moe.n_shared if shared else store.cfg.moe.n_experts)

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, e: int) -> ExpertWeights:
        if not 0 <= e < self._n:
            raise IndexError(e)
        L = f"L{self._layer}.{self._prefix}{e}"
        return ExpertWeights(
            w1=self._store.tensor(f"{L}.w1"),
            w2=self._store.tensor(f"{L}.w2"),
            w3=self._store.tensor(f"{L}.w3"),
        )

    def __iter__(self):
        return (self[i] for i in range(self._n))


class WeightStore:
    """Loads tensors on demand and tracks resident parameter bytes.

    When constructed with a commitment it re-derives each loaded
    tensor's leaves and fails fast on any disagreement, so a swapped
    weight file surfaces as CommitmentMismatchError at load time.
    """

    def __init__(self, model_dir: Path, commitment: Commitment | None = None):
        self.dir = Path(model_dir)
        self.manifest = load_manifest(self.dir)
        self.cfg = self.manifest.cfg
        self.commitment = commitment
        self._tree = None
        self._cache: dict = {}
        self.resident = 0
        self.peak = 0

    def attach_tree(self, tree: MerkleTree) -> None:
        self._tree = tree

    def tensor(self, name: str) -> QTensor:
        if name in self._cache:
            return self._cache[name]
        spec = self.manifest.spec(name)
        t = read_tensor(self.dir / spec.filename, spec)
        if self.commitment is not None and self._tree is not None:
            lo = self.commitment.leaf_base[name]
            for i, leaf in enumerate(tensor_leaves(t, spec)):
                if self._tree.levels[0][lo + i] != leaf:
                    raise CommitmentMismatchError(
                        f"{name}: leaf {lo + i} disagrees with the commitment")
        self._cache[name] = t
        self.resident += spec.n_bytes
        self.peak = max(self.peak, self.resident)
        return t

    def release_tensor(self, name: str) -> None:
        if name in self._cache:
            self.resident -= self.manifest.spec(name).n_bytes
            del self._cache[name]

    # -- loader interface used by the engine ---------------------------

    def vocab(self) -> QTensor:
        return self.tensor("model.vocab")

    def head(self) -> QTensor:
        self.release_tensor("model.vocab")
        return self.tensor("model.head")

    def final_norm(self) -> list:
        return self.tensor("model.final_norm").row(0)

    def layer(self, i: int) -> LayerWeights:
        self.release_tensor("model.vocab")
        L = f"L{i}"
        return LayerWeights(
            wq_a=self.tensor(f"{L}.wq_a"),
            wq_b1=self.tensor(f"{L}.wq_b1"),
            wq_b2=self.tensor(f"{L}.wq_b2"),
            wkv_a1=self.tensor(f"{L}.wkv_a1"),
            wkv_a2=self.tensor(f"{L}.wkv_a2"),
            wkv_b1=self.tensor(f"{L}.wkv_b1"),
            wkv_b2=self.tensor(f"{L}.wkv_b2"),
            wo=self.tensor(f"{L}.wo"),
            attn_norm_w=self.tensor(f"{L}.attn_norm_w").row(0),
            q_norm_w=self.tensor(f"{L}.q_norm_w").row(0),
            kv_norm_w=self.tensor(f"{L}.kv_norm_w").row(0),
            ffn_norm_w=self.tensor(f"{L}.ffn_norm_w").row(0),
            gate_weight=self.tensor(f"{L}.gate_weight"),
            gate_bias=self.tensor(f"{L}.gate_bias").row(0),
            experts=_LazyExperts(self, i, shared=False),
            shared=_LazyExperts(self, i, shared=True),
        )

    def release(self, i: int) -> None:
        prefix = f"L{i}."
        for name in [n for n in self._cache if n.startswith(prefix)]:
            self.release_tensor(name)

    def streaming_bound(self) -> int:
        """Model-level tensors plus the heaviest single layer with all of
        its experts; the instrumented peak must stay at or under this."""
        model_bytes = sum(t.n_bytes for t in self.manifest.specs
                          if t.name.startswith("model."))
        per_layer = {}
        for t in self.manifest.specs:
            if t.name.startswith("L"):
                layer = t.name.split(".")[0]
                per_layer[layer] = per_layer.get(layer, 0) + t.n_bytes
        return model_bytes + (max(per_layer.values()) if per_layer else 0)


# ---------------------------------------------------------------------------
# deterministic toy model generation


def _uniform(rng, lo: int, hi: int) -> int:
    """rng.getrandbits-based uniform integer in [lo, hi]; stable across
    Python versions."""
    span = hi - lo + 1
    bits = span.bit_length()
    while True:
        v = rng.getrandbits(bits)
        if v < span:
            return lo + v


def make_toy_model(model_dir: Path, cfg: ModelConfig | None = None,
                   seed: int = 7, name: str = "toy") -> ModelConfig:
    """Write a complete small model directory with deterministic weights."""
    import random

    cfg = cfg or ModelConfig()
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    one = cfg.quant.one

    def proj(rows, cols, fan_in):
        r = max(1, int(0.5 * one / max(1.0, fan_in ** 0.5)))
        return QTensor(rows, cols,
                       [_uniform(rng, -r, r) for _ in range(rows * cols)])

    def norm_w(n):
        return QTensor(1, n, [one + _uniform(rng, -one // 8, one // 8)
                              for _ in range(n)])

    def blockdiag(heads, rows_h, cols_h, fan_in):
        t = QTensor.zeros(heads * rows_h, heads * cols_h)
        r = max(1, int(0.5 * one / max(1.0, fan_in ** 0.5)))
        for h in range(heads):
            for i in range(rows_h):
                for j in range(cols_h):
                    t.data[(h * rows_h + i) * t.cols + h * cols_h + j] = \
                        _uniform(rng, -r, r)
        return t

    h, dn, dr = cfg.n_heads, cfg.head_dim, cfg.rope_dim
    kv, ql, g = cfg.kv_lora_rank, cfg.q_lora_rank, cfg.moe
    rope = build_rope_table(cfg.max_seq - 1, dr, cfg.quant.q, cfg.rope_base)
    tensors = {
        "model.vocab": QTensor(cfg.vocab_size, cfg.dim,
                               [_uniform(rng, -one, one)
                                for _ in range(cfg.vocab_size * cfg.dim)]),
        "model.rope": QTensor(cfg.max_seq, dr,
                              [v for row in rope.rows for v in row]),
        "model.final_norm": norm_w(cfg.dim),
        "model.head": proj(cfg.dim, cfg.vocab_size, cfg.dim),
    }
    for i in range(cfg.n_layers):
        L = f"L{i}"
        tensors |= {
            f"{L}.attn_norm_w": norm_w(cfg.dim),
            f"{L}.q_norm_w": norm_w(ql),
            f"{L}.kv_norm_w": norm_w(kv),
            f"{L}.ffn_norm_w": norm_w(cfg.dim),
            f"{L}.wq_a": proj(cfg.dim, ql, cfg.dim),
            f"{L}.wq_b1": proj(ql, h * dn, ql),
            f"{L}.wq_b2": proj(ql, h * dr, ql),
            f"{L}.wkv_a1": proj(cfg.dim, kv, cfg.dim),
            f"{L}.wkv_a2": proj(cfg.dim, dr, cfg.dim),
            f"{L}.wkv_b1": blockdiag(h, dn, kv, dn),
            f"{L}.wkv_b2": blockdiag(h, kv, dn, kv),
            f"{L}.wo": proj(h * dn, cfg.dim, h * dn),
            f"{L}.gate_weight": proj(cfg.dim, g.n_experts, cfg.dim),
            f"{L}.gate_bias": QTensor(1, g.n_experts,
                                      [_uniform(rng, -one // 4, one // 4)
                                       for _ in range(g.n_experts)]),
        }
        for kind, count in (("e", g.n_experts), ("sh", g.n_shared)):
            for e in range(count):
                E = f"{L}.{kind}{e}"
                tensors |= {
                    f"{E}.w1": proj(cfg.dim, g.inter_dim, cfg.dim),
                    f"{E}.w2": proj(g.inter_dim, cfg.dim, g.inter_dim),
                    f"{E}.w3": proj(cfg.dim, g.inter_dim, cfg.dim),
                }
    write_manifest(model_dir, name, cfg)
    for spec in tensor_specs(cfg):
        write_tensor(model_dir / spec.filename, tensors[spec.name])
    return cfg
