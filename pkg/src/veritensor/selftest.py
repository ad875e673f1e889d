"""Built-in invariant suite behind `veritensor selftest`.

A fast sweep over the load-bearing invariants: field laws, table
construction, the integer-root and division contracts, the product
identity with tamper rejection, softmax bounds, transcript determinism,
a Merkle round trip and a miniature commit/prove/verify session.
"""

from __future__ import annotations

import random
import tempfile
from pathlib import Path


def run_selftest(q: int = 16, l: int = 8) -> list:
    failures = []

    def check(name: str, fn):
        try:
            fn()
        except Exception as e:  # noqa: BLE001 - report, do not crash
            failures.append((name, f"{type(e).__name__}: {e}"))

    rng = random.Random(0x5EED)

    def field_laws():
        from .field import DEFAULT_FIELD

        f = DEFAULT_FIELD
        for _ in range(2000):
            a, b, c = (rng.randrange(f.modulus) for _ in range(3))
            assert f.add(a, b) == f.add(b, a)
            assert f.mul(a, f.add(b, c)) == f.add(f.mul(a, b), f.mul(a, c))
        assert f.mul(3, f.inv(3)) == 1

    def tables():
        from .fixedpoint import Direction, QuantConfig, build_exp2_frac_table

        cfg = QuantConfig(q=q, l=l)
        neg = build_exp2_frac_table(cfg, Direction.NEG)
        pos = build_exp2_frac_table(cfg, Direction.POS)
        assert neg[0] == pos[0] == 1 << q
        assert all(neg[i] > neg[i + 1] for i in range(len(neg) - 1))
        assert all(pos[i] < pos[i + 1] for i in range(len(pos) - 1))

    def roots_and_division():
        from .fixedpoint import div_rem, isqrt

        for _ in range(2000):
            n = rng.randrange(0, 1 << 40)
            r = isqrt(n)
            assert r * r <= n < (r + 1) * (r + 1)
            a, b = rng.randrange(0, 1 << 50), rng.randrange(1, 1 << 20)
            qq, rr = div_rem(a, b)
            assert qq * b + rr == a and 0 <= rr < b

    def product_identity():
        from .encoding import matmul_check
        from .kernels import gemm
        from .tensor import QTensor
        from .field import DEFAULT_FIELD

        p = DEFAULT_FIELD.modulus
        for _ in range(20):
            a, n, b = rng.randrange(1, 6), rng.randrange(1, 6), rng.randrange(1, 6)
            x = QTensor(a, n, [rng.randrange(-99, 100) for _ in range(a * n)])
            w = QTensor(n, b, [rng.randrange(-99, 100) for _ in range(n * b)])
            y = gemm(x, w)
            z = rng.randrange(1, p)
            assert matmul_check(x, w, y, z)
            y.data[rng.randrange(a * b)] += 1
            assert not matmul_check(x, w, y, z)

    def softmax_bounds():
        from .fixedpoint import Direction, QuantConfig, build_exp2_frac_table
        from .kernels import sigmoid, softmax_row

        cfg = QuantConfig(q=q, l=l)
        neg = build_exp2_frac_table(cfg, Direction.NEG)
        pos = build_exp2_frac_table(cfg, Direction.POS)
        one = 1 << q
        for _ in range(200):
            n = rng.randrange(1, 9)
            xs = [rng.randrange(-8 * one, 8 * one) for _ in range(n)]
            ps, _ = softmax_row(xs, cfg, neg)
            assert one - n < sum(ps) <= one
        s, _ = sigmoid(0, cfg, pos)
        assert s == 1 << (q - 1)

    def transcript_determinism():
        from .transcript import Transcript

        a, b = Transcript(), Transcript()
        for tr in (a, b):
            tr.absorb("x", b"selftest")
        assert a.challenge_field("C") == b.challenge_field("C")

    def merkle_roundtrip():
        from .encoding import hash_segment
        from .merkle import MerkleTree, merkle_verify

        leaves = [hash_segment("leaf", [i]) for i in range(9)]
        tree = MerkleTree(leaves)
        for i in range(9):
            assert merkle_verify(tree.root, i, leaves[i], tree.open(i))

    def mini_session():
        from .model import ModelConfig, MoeConfig
        from .prove import prove_inference
        from .proofs.verify import verify_session
        from .store import commit_model, make_toy_model

        cfg = ModelConfig(dim=16, n_layers=1, n_heads=2, head_dim=4, rope_dim=4,
                          q_lora_rank=8, kv_lora_rank=4, vocab_size=16, max_seq=4,
                          moe=MoeConfig(n_experts=4, n_shared=1, n_groups=2,
                                        per_group_top=1, groups_selected=1,
                                        experts_selected=2, inter_dim=8))
        with tempfile.TemporaryDirectory() as d:
            make_toy_model(Path(d), cfg, seed=11)
            commitment, tree = commit_model(Path(d))
            res = prove_inference(Path(d), [1, 2], commitment, tree)
            assert verify_session(res.root, commitment, [1, 2]).accepted

    check("field-laws", field_laws)
    check("exp2-tables", tables)
    check("roots-and-division", roots_and_division)
    check("product-identity", product_identity)
    check("softmax-bounds", softmax_bounds)
    check("transcript", transcript_determinism)
    check("merkle", merkle_roundtrip)
    check("mini-session", mini_session)
    return failures
