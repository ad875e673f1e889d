from .nodes import Claim, Level, ProofNode, Verdict, canonical_merge, make_node, merge

__all__ = [
    "Claim",
    "Level",
    "ProofNode",
    "Verdict",
    "canonical_merge",
    "make_node",
    "merge",
]
