"""Shared build/verify context and the check-failure signal."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from ..field import DEFAULT_FIELD, Field
from ..fixedpoint import Direction, QuantConfig, build_exp2_frac_table, log2e_q


class CheckFailure(Exception):
    """A constraint failed; carries the constraint name for the verdict."""

    def __init__(self, constraint: str):
        super().__init__(constraint)
        self.constraint = constraint


def need(cond: bool, constraint: str) -> None:
    if not cond:
        raise CheckFailure(constraint)


@dataclass
class Ctx:
    """Everything a builder or checker needs besides the node itself.

    Weight bases map tensor name -> (leaf_base, layout, seg); they come
    from the commitment index so prover and verifier agree on leaf
    numbering.  ``claims`` and ``witnesses`` are filled during
    verification as component subtrees pass, and feed the link pass.
    """

    field: Field = dc_field(default_factory=lambda: DEFAULT_FIELD)
    qcfg: QuantConfig = dc_field(default_factory=QuantConfig)
    z: int = 1
    t: int = 1
    model_root: bytes = b""
    weight_base: dict = dc_field(default_factory=dict)
    plans: dict = dc_field(default_factory=dict)
    claims: dict = dc_field(default_factory=dict)
    witnesses: dict = dc_field(default_factory=dict)
    sample: object = None  # None (replay) or callable(path) -> bool

    @property
    def neg_table(self):
        return build_exp2_frac_table(self.qcfg, Direction.NEG)

    @property
    def pos_table(self):
        return build_exp2_frac_table(self.qcfg, Direction.POS)

    @property
    def log2e(self) -> int:
        return log2e_q(self.qcfg.q)


#: kind -> (cost_class, checker); cost "recompute" is sampled in spot mode,
#: "structural" always runs.
CHECKERS: dict = {}


def checker(kind: str, cost: str = "recompute"):
    def deco(fn):
        CHECKERS[kind] = (cost, fn)
        return fn

    return deco
