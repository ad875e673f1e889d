"""Exact integer inference kernels with verification witnesses.

Every kernel computes in plain integer arithmetic and returns, besides
its output, the auxiliary values (quotients, remainders, maxima, sort
permutations) that let a verifier replay the computation as a chain of
exact identities.  Division never rounds silently: each floor division
records a remainder r with 0 <= r < divisor so the reconstruction
``quotient * divisor + r == dividend`` can be re-checked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from mpmath import mp, mpf

from .errors import (
    AllPaddedError,
    BadGroupingError,
    OddHeadDimError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)
from .fixedpoint import Direction, Exp2Table, QuantConfig, _round_half_away, isqrt, log2e_q
from .tensor import QTensor, check_window


# ---------------------------------------------------------------------------
# linear ops


def gemm(x: QTensor, w: QTensor) -> QTensor:
    """Exact matrix product, no rescale.

    Output scale is 2^(2q) when both operands are at scale 2^q.  Entries
    leaving the 2^62 window raise rather than wrap.
    """
    if x.cols != w.rows:
        raise ShapeMismatchError(f"inner dims {x.cols} != {w.rows}")
    a, n, b = x.rows, x.cols, w.cols
    out = [0] * (a * b)
    wd = w.data
    for i in range(a):
        xrow = x.data[i * n : (i + 1) * n]
        obase = i * b
        for k in range(n):
            xv = xrow[k]
            if xv:
                wbase = k * b
                for j in range(b):
                    out[obase + j] += xv * wd[wbase + j]
    for v in out:
        check_window(v)
    return QTensor(a, b, out, validate=False)


def rescale(y: QTensor, shift_bits: int) -> tuple:
    """Arithmetic right shift with per-entry remainders.

    Floor semantics for negatives: y_out * 2^s + r == y_in with
    0 <= r < 2^s, so -1 >> 16 gives (-1, 65535).
    """
    if shift_bits < 0:
        raise ShapeMismatchError("shift_bits must be >= 0")
    mask = (1 << shift_bits) - 1
    out, rems = [], []
    for v in y.data:
        out.append(v >> shift_bits)
        rems.append(v & mask)
    return QTensor(y.rows, y.cols, out), rems


def elementwise_add(x: QTensor, b: QTensor) -> QTensor:
    if x.shape() != b.shape():
        raise ShapeMismatchError("elementwise add shape mismatch")
    return QTensor(x.rows, x.cols, [u + v for u, v in zip(x.data, b.data)])


def elementwise_mul(x: QTensor, b: QTensor, rescale_q: int) -> tuple:
    """Hadamard product of two scale-q operands, rescaled back to scale q."""
    if x.shape() != b.shape():
        raise ShapeMismatchError("elementwise mul shape mismatch")
    mask = (1 << rescale_q) - 1
    out, rems = [], []
    for u, v in zip(x.data, b.data):
        p = u * v
        out.append(p >> rescale_q)
        rems.append(p & mask)
    return QTensor(x.rows, x.cols, out), rems


def embed_tokens(token_ids, vocab: QTensor) -> QTensor:
    rows = []
    for tid in token_ids:
        if not 0 <= tid < vocab.rows:
            raise TokenOutOfRangeError(f"token id {tid} not in [0, {vocab.rows})")
        rows.append(vocab.row(tid))
    return QTensor.from_rows(rows)


# ---------------------------------------------------------------------------
# RMS normalization


@dataclass
class RmsAux:
    """Witness for one normalized row.

    sum_sq = q_div * n + r_mod with r_mod < n, and the integer root
    satisfies rms^2 <= q_div + 1 < (rms + 1)^2 (epsilon = 1).
    """

    n: int
    sum_sq: int
    q_div: int
    r_mod: int
    rms: int
    rems: list


def rmsnorm(x, w, q: int) -> tuple:
    """Normalize one row: y_i * (rms * 2^q) + r_i == x_i * w_i * 2^q.

    The all-zero row is fine: epsilon = 1 forces rms = 1 and the
    numerators vanish, so y is all zeros.
    """
    if len(x) != len(w) or not x:
        raise ShapeMismatchError("rmsnorm row length mismatch")
    n = len(x)
    sum_sq = sum(v * v for v in x)
    q_div, r_mod = divmod(sum_sq, n)
    rms = isqrt(q_div + 1)
    denom = rms << q
    ys, rems = [], []
    for xv, wv in zip(x, w):
        num = (xv * wv) << q
        yv, r = divmod(num, denom)
        check_window(yv)
        ys.append(yv)
        rems.append(r)
    return ys, RmsAux(n=n, sum_sq=sum_sq, q_div=q_div, r_mod=r_mod, rms=rms, rems=rems)


# ---------------------------------------------------------------------------
# rotary position encoding


@dataclass(frozen=True)
class RopeTable:
    """Quantized interleaved cos/sin grid, rows indexed by position.

    Row p holds [cos(p*t_0), sin(p*t_0), cos(p*t_1), ...] scaled by 2^q
    with t_i = base^(-2i/d).  Row 0 is the exact identity rotation.
    """

    max_pos: int
    head_dim: int
    q: int
    base: int
    rows: tuple

    def row(self, p: int):
        return self.rows[p]


def build_rope_table(max_pos: int, head_dim: int, q: int, base: int = 10000) -> RopeTable:
    if head_dim % 2:
        raise OddHeadDimError("head dimension must be even")
    half = head_dim // 2
    thetas = [mp.power(base, -mpf(2 * i) / head_dim) for i in range(half)]
    one = 1 << q
    rows = []
    for p in range(max_pos + 1):
        row = []
        for th in thetas:
            ang = p * th
            row.append(_round_half_away(mp.cos(ang) * one))
            row.append(_round_half_away(mp.sin(ang) * one))
        rows.append(tuple(row))
    return RopeTable(max_pos=max_pos, head_dim=head_dim, q=q, base=base, rows=tuple(rows))


def rope_rotate(x_head, table_row, q: int) -> tuple:
    """Rotate consecutive pairs by the quantized angles of one table row.

    y_2i     = (x_2i * cos_i - x_2i+1 * sin_i) >> q
    y_2i+1   = (x_2i+1 * cos_i + x_2i * sin_i) >> q
    with arithmetic-shift remainders recorded per output element.
    """
    d = len(x_head)
    if d % 2:
        raise OddHeadDimError("head dimension must be even")
    if len(table_row) != d:
        raise ShapeMismatchError("table row width mismatch")
    mask = (1 << q) - 1
    ys, rems = [], []
    for i in range(0, d, 2):
        x0, x1 = x_head[i], x_head[i + 1]
        c, s = table_row[i], table_row[i + 1]
        raw0 = x0 * c - x1 * s
        raw1 = x1 * c + x0 * s
        ys.append(raw0 >> q)
        rems.append(raw0 & mask)
        ys.append(raw1 >> q)
        rems.append(raw1 & mask)
    for v in ys:
        check_window(v)
    return ys, rems


# ---------------------------------------------------------------------------
# softmax


@dataclass
class SoftmaxAux:
    """Per-lane witness of the five softmax steps.

    For each lane: delta = x - x_max <= 0; mneg = floor((-delta)*L/2^q)
    with remainder rem3; mneg = k*2^q + f; idx = top l bits of f with
    remainder rem4; t = table[idx]; w = t >> k with shift remainder
    rem5 (rem5 < 2^k, checked by bit length so padded lanes stay cheap);
    finally w*2^q = p*S + rem_div with rem_div < S.
    """

    x_max: int
    delta: list
    mneg: list
    rem3: list
    k: list
    f: list
    idx: list
    rem4: list
    t: list
    w: list
    rem5: list
    sum_w: int
    rem_div: list


def softmax_row(x, cfg: QuantConfig, table: Exp2Table) -> tuple:
    """Fixed-point softmax over one row (lanes at scale 2^q).

    Lanes equal to cfg.neg_inf_q are padding and come out exactly 0; a
    row of nothing but padding has no meaningful maximum and raises.
    """
    if not x:
        raise ShapeMismatchError("empty softmax row")
    if table.direction is not Direction.NEG:
        raise ShapeMismatchError("softmax needs the NEG table")
    if all(v == cfg.neg_inf_q for v in x):
        raise AllPaddedError("softmax row is entirely padding")
    q, l = cfg.q, cfg.l
    L = log2e_q(q)
    mask = cfg.frac_mask
    x_max = max(x)
    aux = SoftmaxAux(
        x_max=x_max, delta=[], mneg=[], rem3=[], k=[], f=[], idx=[], rem4=[],
        t=[], w=[], rem5=[], sum_w=0, rem_div=[],
    )
    for xv in x:
        d = xv - x_max
        prod = (-d) * L
        m = prod >> q
        aux.delta.append(d)
        aux.mneg.append(m)
        aux.rem3.append(prod & mask)
        k, f = m >> q, m & mask
        aux.k.append(k)
        aux.f.append(f)
        idx = f >> (q - l)
        aux.idx.append(idx)
        aux.rem4.append(f & ((1 << (q - l)) - 1))
        t = table[idx]
        w = t >> k
        aux.t.append(t)
        aux.w.append(w)
        aux.rem5.append(t - (w << k))
    S = sum(aux.w)
    aux.sum_w = S
    ps = []
    for w in aux.w:
        p, r = divmod(w << q, S)
        ps.append(p)
        aux.rem_div.append(r)
    return ps, aux


# ---------------------------------------------------------------------------
# sigmoid / SiLU


@dataclass
class SigmoidAux:
    """Witness of the sigmoid steps for a single lane.

    y = floor((-x)*L / 2^q) with remainder rem2; y = k*2^q + f with
    0 <= f < 2^q (k may be negative); idx = top l bits of f with
    remainder rem4; t = table[idx]; u = t >> -k (with remainder rem5)
    when k < 0 else exactly t << k; finally
    s * (2^q + u) + rem6 == 2^(2q).
    """

    y: int
    rem2: int
    k: int
    f: int
    idx: int
    rem4: int
    t: int
    u: int
    rem5: int
    s: int
    rem6: int
    silu_y: int | None = None
    rem7: int | None = None


def sigmoid(x: int, cfg: QuantConfig, table: Exp2Table) -> tuple:
    if table.direction is not Direction.POS:
        raise ShapeMismatchError("sigmoid needs the POS table")
    q, l = cfg.q, cfg.l
    L = log2e_q(q)
    mask = cfg.frac_mask
    prod = -x * L
    y = prod >> q
    rem2 = prod & mask
    k, f = y >> q, y & mask
    idx = f >> (q - l)
    rem4 = f & ((1 << (q - l)) - 1)
    t = table[idx]
    if k < 0:
        u = t >> -k
        rem5 = t - (u << -k)
    else:
        u = t << k
        rem5 = 0
    denom = (1 << q) + u
    s, rem6 = divmod(1 << (2 * q), denom)
    return s, SigmoidAux(
        y=y, rem2=rem2, k=k, f=f, idx=idx, rem4=rem4, t=t, u=u, rem5=rem5,
        s=s, rem6=rem6,
    )


def silu(x: int, cfg: QuantConfig, table: Exp2Table) -> tuple:
    """x * sigmoid(x) at scale 2^q with a sign-correct floor."""
    s, aux = sigmoid(x, cfg, table)
    prod = x * s
    y = prod >> cfg.q
    aux.silu_y = y
    aux.rem7 = prod & cfg.frac_mask
    check_window(y)
    return y, aux


# ---------------------------------------------------------------------------
# sorting, top-k and grouped expert selection


class SortOrder(enum.Enum):
    ASC = "asc"
    DESC = "desc"


def sort_with_witness(values, order: SortOrder) -> tuple:
    """Stable sort returning (sorted values, permutation indices).

    DESC is ASC on negated values, so ties keep original index order in
    both directions and witnesses are deterministic.
    """
    values = list(values)
    if order is SortOrder.ASC:
        perm = sorted(range(len(values)), key=lambda i: (values[i], i))
    else:
        perm = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return [values[i] for i in perm], perm


@dataclass(frozen=True)
class GroupedTopK:
    n_groups: int
    per_group_top: int
    groups_selected: int
    experts_selected: int


@dataclass
class ExpertSelection:
    """Full witness of the two-round grouped top-k routing.

    Round one sorts each group and scores it by the sum of its top
    per_group_top values, then picks the top groups_selected groups.
    Round two picks experts_selected experts from the surviving groups
    by score, ties resolved toward the lower global index.
    """

    expert_indices: list        # final experts, best first
    group_indices: list         # selected groups, ascending
    group_sorts: list           # per group: (sorted values, local perm)
    group_scores: list
    group_score_sort: tuple     # (sorted scores, group perm)
    chosen_per_group: dict      # group -> global indices chosen, best first


def expert_select(scores, grouping: GroupedTopK) -> ExpertSelection:
    ng, top = grouping.n_groups, grouping.per_group_top
    n = len(scores)
    if ng < 1 or n % ng:
        raise BadGroupingError(f"{n} experts not divisible into {ng} groups")
    gs = n // ng
    if not (1 <= top <= gs):
        raise BadGroupingError("per_group_top outside group size")
    if not (1 <= grouping.groups_selected <= ng):
        raise BadGroupingError("groups_selected outside group count")
    if not (1 <= grouping.experts_selected <= grouping.groups_selected * gs):
        raise BadGroupingError("experts_selected exceeds surviving experts")

    group_sorts, group_scores = [], []
    for g in range(ng):
        sv, perm = sort_with_witness(scores[g * gs : (g + 1) * gs], SortOrder.DESC)
        group_sorts.append((sv, perm))
        group_scores.append(sum(sv[:top]))
    gsv, gperm = sort_with_witness(group_scores, SortOrder.DESC)
    selected = sorted(gperm[: grouping.groups_selected])

    survivors = [g * gs + j for g in selected for j in range(gs)]
    order = sorted(survivors, key=lambda e: (-scores[e], e))
    chosen = order[: grouping.experts_selected]
    per_group: dict = {g: [] for g in selected}
    for e in chosen:
        per_group[e // gs].append(e)
    return ExpertSelection(
        expert_indices=chosen,
        group_indices=selected,
        group_sorts=group_sorts,
        group_scores=group_scores,
        group_score_sort=(gsv, gperm),
        chosen_per_group=per_group,
    )
