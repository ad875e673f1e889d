"""Command-line entry points.

Exit codes: 0 success / proof accepted; 1 proof rejected or integrity
failure; 2 usage error or malformed manifest; 3 tensor/manifest
disagreement; 4 I/O error.  VERITENSOR_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import (
    CommitmentMismatchError,
    ManifestError,
    ProofFormatError,
    TensorFileError,
    VeritensorError,
)

log = logging.getLogger("veritensor")

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_SHAPE = 3
EXIT_IO = 4


def _parse_tokens(spec: str) -> list:
    if spec.startswith("@"):
        spec = Path(spec[1:]).read_text()
    parts = spec.replace(",", " ").split()
    return [int(p) for p in parts]


def cmd_commit(args) -> int:
    from .store import commit_model

    model_dir = Path(args.model)
    commitment, _ = commit_model(model_dir)
    out = Path(args.out) if args.out else model_dir / "commitment.json"
    out.write_text(commitment.to_json())
    print(commitment.root.hex())
    return EXIT_OK


def cmd_prove(args) -> int:
    from .proofs.io import serialize_proof
    from .store import Commitment, commit_model
    from .prove import prove_inference

    tokens = _parse_tokens(args.tokens)
    model_dir = Path(args.model)
    commitment, tree = commit_model(model_dir)
    if args.commitment:
        published = Commitment.from_json(Path(args.commitment).read_text())
        if published.root != commitment.root:
            print("model directory does not match the published commitment",
                  file=sys.stderr)
            return EXIT_REJECT
    res = prove_inference(model_dir, tokens, commitment, tree)
    cfg = commitment.cfg
    raw = serialize_proof(res.root, commitment_modulus(), cfg.quant.q, cfg.quant.l)
    Path(args.proof).write_bytes(raw)
    log.info("proof written: %s (%d bytes), predicted token %d",
             args.proof, len(raw), res.predicted)
    print(res.logits_digest.hex())
    return EXIT_OK


def commitment_modulus() -> int:
    from .field import DEFAULT_FIELD

    return DEFAULT_FIELD.modulus


def cmd_verify(args) -> int:
    from .proofs.io import deserialize_proof
    from .proofs.verify import verify_session
    from .store import Commitment

    tokens = _parse_tokens(args.tokens)
    commitment = Commitment.from_json(Path(args.commitment).read_text())
    try:
        root, modulus, q, l = deserialize_proof(Path(args.proof).read_bytes())
    except ProofFormatError as e:
        print(f"reject: proof-container: {e}")
        return EXIT_REJECT
    if modulus != commitment_modulus() or (q, l) != (commitment.cfg.quant.q,
                                                     commitment.cfg.quant.l):
        print("reject: proof header disagrees with the commitment")
        return EXIT_REJECT
    verdict = verify_session(
        root, commitment, tokens,
        mode="spot" if args.mode == "spot" else "replay",
        fraction=args.spot, seed=args.seed, threads=args.threads,
    )
    if not verdict.accepted:
        path, constraint = verdict.failure
        print(f"reject: {path}: {constraint}")
        return EXIT_REJECT
    if args.logits:
        if root.claim.aux.get("logits_digest", b"").hex() != args.logits.lower():
            print("reject: logits digest mismatch")
            return EXIT_REJECT
    print("accept")
    return EXIT_OK


_SHAPE_KINDS = {
    "embedding": ("embedding", ("rows", "dim", "segment")),
    "rmsnorm": ("rmsnorm", ("rows", "dim", "segment")),
    "sigmoid": ("sigmoid", ("rows", "dim", "segment")),
    "rope": ("rope", ("rows", "head_count")),
    "softmax": ("softmax", ("rows", "head_count")),
    "selector": ("expert_selector", ("rows", "group_count")),
    "expert_selector": ("expert_selector", ("rows", "group_count")),
    "gemm": ("gemm", ("n", "segment")),
}


def cmd_shape(args) -> int:
    from .graph import dag_shape

    if args.component not in _SHAPE_KINDS:
        print(f"unknown component {args.component!r}; expected one of "
              f"{sorted(_SHAPE_KINDS)}", file=sys.stderr)
        return EXIT_USAGE
    kind, wanted = _SHAPE_KINDS[args.component]
    kwargs = {}
    for field in wanted:
        v = getattr(args, field.replace("-", "_"), None)
        if v is None:
            print(f"--{field.replace('_', '-')} is required for "
                  f"{args.component}", file=sys.stderr)
            return EXIT_USAGE
        kwargs[field] = v
    try:
        counts = dag_shape(kind, **kwargs)
    except VeritensorError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    for level, count in counts:
        print(f"{level:>18} {count}")
    print("counts:", "/".join(str(c) for _, c in counts))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(q=args.q, l=args.l)
    if failures:
        for name, msg in failures:
            print(f"FAIL {name}: {msg}")
        return EXIT_REJECT
    print("selftest ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="veritensor",
        description="Verifiable quantized transformer inference",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("commit", help="hash model weights into a commitment")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--out", help="commitment file (default MODEL/commitment.json)")
    p.set_defaults(fn=cmd_commit)

    p = sub.add_parser("prove", help="run inference and write the proof")
    p.add_argument("--model", required=True)
    p.add_argument("--tokens", required=True,
                   help='token ids, "1,2,3" or @file')
    p.add_argument("--proof", required=True, help="output proof file")
    p.add_argument("--commitment", help="published commitment to check against")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("verify", help="verify a proof against a commitment")
    p.add_argument("--commitment", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--logits", help="expected logits digest (hex)")
    p.add_argument("--mode", choices=("replay", "spot"), default="replay")
    p.add_argument("--spot", type=float, default=0.1,
                   help="fraction of leaf claims recomputed in spot mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("shape", help="print proof DAG node counts per level")
    p.add_argument("component", help="embedding|rmsnorm|rope|softmax|sigmoid|"
                                     "selector|gemm")
    p.add_argument("--rows", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--segment", type=int)
    p.add_argument("--head-dim", dest="head_dim", type=int)
    p.add_argument("--head-count", dest="head_count", type=int)
    p.add_argument("--group-dim", dest="group_dim", type=int)
    p.add_argument("--group-count", dest="group_count", type=int)
    p.add_argument("--a", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--b", type=int)
    p.set_defaults(fn=cmd_shape)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--q", type=int, default=16)
    p.add_argument("--l", type=int, default=8)
    p.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("VERITENSOR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ManifestError as e:
        print(f"manifest error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TensorFileError as e:
        print(f"tensor file error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except CommitmentMismatchError as e:
        print(f"commitment mismatch: {e}", file=sys.stderr)
        return EXIT_REJECT
    except (OSError, ProofFormatError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except VeritensorError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"bad argument: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
