"""
The Chief: blocked echelonisation of a dense matrix.

The input is chopped into a x b blocks and a task plan is emitted in three
steps. Step 1 walks block rows top to bottom, clearing each block against
the pivots already found in its block column and updating the blocks to
its right (and the transformation blocks, if requested). Step 2 lengthens
the multiplier blocks to their final width. Step 3 clears upwards from the
last block column to the first.

Block ordinals in the plan (and in trace records) start at 1, with 0
denoting the absent package that precedes the first block row or column.
Everything returned to callers is 0-based.
"""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from field import ff_inv
from jobs import DEFAULT_ECH_THRESHOLD, EchResult
from matrix import IndexSet, Matrix, ShapeError, hstack, index_set_complement, vstack, zeros
from scheduler import RunReport, TaskGraph, TaskNode, run
from tasks import (
    PkgD, clear_down, clear_up, copy_d, extend, pre_clear_up, row_lengthen,
    update_row, update_row_trafo,
)

logger = logging.getLogger(__name__)


class SingularMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class ChopSpec:
    row_cuts: tuple
    col_cuts: tuple

    @property
    def a(self) -> int:
        return len(self.row_cuts)

    @property
    def b(self) -> int:
        return len(self.col_cuts)

    @property
    def row_offsets(self) -> tuple:
        return tuple(int(x) for x in np.cumsum((0,) + self.row_cuts[:-1])) if self.row_cuts else ()

    @property
    def col_offsets(self) -> tuple:
        return tuple(int(x) for x in np.cumsum((0,) + self.col_cuts[:-1])) if self.col_cuts else ()


def _cuts(total: int, block: int, shrink_ends: bool) -> tuple:
    if total == 0:
        return ()
    if not shrink_ends or total <= block:
        full, rest = divmod(total, block)
        return (block,) * full + ((rest,) if rest else ())
    half = (block + 1) // 2
    first = half
    remaining = total - first
    last = half if remaining > half else remaining
    middle = remaining - last
    full, rest = divmod(middle, block)
    parts = (first,) + (block,) * full + ((rest,) if rest else ())
    return parts + ((last,) if last else ())


def chop(m: int, n: int, block: int, shrink_ends: bool = False) -> ChopSpec:
    """
    Cut an m x n matrix into blocks of `block` rows and columns, the last
    part taking the remainder. With shrink_ends the first and last parts
    are halved.
    """
    if block < 1:
        raise ValueError(f"Block size must be >= 1, got {block}")
    return ChopSpec(_cuts(m, block, shrink_ends), _cuts(n, block, shrink_ends))


class ChiefPlan(TaskGraph):
    def __init__(self, spec, shape, chop_spec: ChopSpec, with_transform: bool):
        super().__init__()
        self.spec = spec
        self.shape = shape
        self.chop = chop_spec
        self.with_transform = with_transform


def _clear_down_stats(results):
    D, A = results
    r_prime = len(A.rho_prime)
    return {"r": len(D.gamma) - r_prime, "r_prime": r_prime}


def final_m_slot(j: int, h: int, b: int) -> tuple:
    return ("MU", j, h, j + 1) if j < b else ("ML", j, h)


def build_plan(C: Matrix, chop_spec: ChopSpec, with_transform: bool = True,
               threshold: int = DEFAULT_ECH_THRESHOLD) -> ChiefPlan:
    if sum(chop_spec.row_cuts) != C.n_rows or sum(chop_spec.col_cuts) != C.n_cols:
        raise ShapeError(f"Chop {chop_spec} does not cover a {C.n_rows}x{C.n_cols} matrix")
    plan = ChiefPlan(C.spec, C.shape, chop_spec, with_transform)
    a, b = chop_spec.a, chop_spec.b
    ro, co = chop_spec.row_offsets, chop_spec.col_offsets

    for i in range(1, a + 1):
        rows = slice(ro[i - 1], ro[i - 1] + chop_spec.row_cuts[i - 1])
        for k in range(1, b + 1):
            cols = slice(co[k - 1], co[k - 1] + chop_spec.col_cuts[k - 1])
            plan.add_source(("C", i, k, 1), Matrix(C.spec, C.data[rows, cols]))

    # Step 1
    for i in range(1, a + 1):
        for j in range(1, b + 1):
            prio = i + j
            plan.plan_add(TaskNode(
                "ClearDown", (i, j), [("C", i, j, j), ("D", j, i - 1)], [("D", j, i), ("A", i, j)],
                partial(clear_down, i=i, threshold=threshold), prio, 1, stats=_clear_down_stats))
            plan.plan_add(TaskNode(
                "Extend", (i, j), [("A", i, j), ("E", i, j - 1)], [("E", i, j)],
                partial(extend, j=j), prio, 1))
            for k in range(j + 1, b + 1):
                plan.plan_add(TaskNode(
                    "UpdateRow", (i, j, k),
                    [("A", i, j), ("C", i, k, j), ("B", j, k, i - 1)],
                    [("C", i, k, j + 1), ("B", j, k, i)],
                    partial(update_row, i=i), prio, 1))
            if with_transform:
                for h in range(1, i + 1):
                    plan.plan_add(TaskNode(
                        "UpdateRowTrafo", (i, j, h),
                        [("A", i, j), ("K", i, h, j), ("M", j, h, i - 1), ("E", h, j)],
                        [("K", i, h, j + 1), ("M", j, h, i)],
                        partial(update_row_trafo, i=i, h=h, j=j), prio, 1))

    # Step 2
    if with_transform:
        for j in range(1, b + 1):
            for h in range(1, a + 1):
                plan.plan_add(TaskNode(
                    "RowLengthen", (j, h), [("M", j, h, a), ("E", h, j), ("E", h, b)], [("ML", j, h)],
                    row_lengthen, a + b, 2))

    # Step 3
    for k in range(1, b + 1 if a else 1):
        plan.plan_add(TaskNode("Copy", (k,), [("D", k, a)], [("R", k, k, 0)], copy_d, a + b, 3))
    for k in range(b if a else 0, 0, -1):
        prio = a + b + (b - k)
        for j in range(1, k):
            plan.plan_add(TaskNode(
                "PreClearUp", (j, k), [("B", j, k, a), ("D", k, a)], [("X", j, k), ("R", j, k, 0)],
                pre_clear_up, prio, 3))
            for l in range(k, b + 1):
                plan.plan_add(TaskNode(
                    "ClearUp", (j, l, k),
                    [("R", j, l, l - k), ("X", j, k), ("R", k, l, l - k)], [("R", j, l, l - k + 1)],
                    clear_up, prio, 3))
            if with_transform:
                for h in range(1, a + 1):
                    current = ("MU", j, h, k + 1) if k < b else ("ML", j, h)
                    plan.plan_add(TaskNode(
                        "ClearUp", (j, h, k), [current, ("X", j, k), final_m_slot(k, h, b)],
                        [("MU", j, h, k)], clear_up, prio, 3))

    # Pin everything the assembly reads.
    for i in range(1, a + 1 if b else 1):
        plan.pin(("E", i, b))
        if with_transform:
            for h in range(1, i + 1):
                plan.pin(("K", i, h, b + 1))
    for j in range(1, b + 1 if a else 1):
        plan.pin(("D", j, a))
        for l in range(j, b + 1):
            plan.pin(("R", j, l, l - j))
        if with_transform:
            for h in range(1, a + 1):
                plan.pin(final_m_slot(j, h, b))

    plan.check_acyclic()
    logger.info(f"Planned {len(plan.nodes)} tasks for a {a}x{b} block grid "
                f"({'with' if with_transform else 'without'} transform)")
    return plan


@dataclass
class EchelonOutput:
    """
    Result of echelonize, 0-based throughout.

    R_blocks[(j, l)] for j <= l, T_M_blocks[(j, h)] and T_K_blocks[(i, h)]
    for h <= i (None without transform); varrho_blocks[i] and
    upsilon_blocks[j] are the per-block selected rows and pivot columns.
    """
    spec: object
    shape: tuple
    chop: ChopSpec
    R_blocks: dict
    T_M_blocks: Optional[dict]
    T_K_blocks: Optional[dict]
    varrho_blocks: list
    upsilon_blocks: list
    rank: int
    report: Optional[RunReport] = None
    plan: Optional[ChiefPlan] = field(default=None, repr=False)

    @property
    def with_transform(self) -> bool:
        return self.T_M_blocks is not None

    @property
    def varrho(self) -> IndexSet:
        members = []
        for off, s in zip(self.chop.row_offsets, self.varrho_blocks):
            members.extend(off + x for x in s.members)
        return IndexSet(self.shape[0], tuple(members))

    @property
    def upsilon(self) -> IndexSet:
        members = []
        for off, s in zip(self.chop.col_offsets, self.upsilon_blocks):
            members.extend(off + x for x in s.members)
        return IndexSet(self.shape[1], tuple(members))

    def snapshot(self, slot_id):
        """Payload of a plan slot; needs a run with retain=True for unpinned slots."""
        if self.plan is None:
            raise KeyError(slot_id)
        return self.plan.payload(slot_id)

    def dense_R(self) -> Matrix:
        m, n = self.shape
        b = self.chop.b
        if self.rank == 0:
            return zeros(self.spec, 0, n - self.rank)
        widths = [self.chop.col_cuts[l] - len(self.upsilon_blocks[l]) for l in range(b)]
        strips = []
        for j in range(b):
            r_j = len(self.upsilon_blocks[j])
            row = [self.R_blocks[(j, l)] if l >= j else zeros(self.spec, r_j, widths[l]) for l in range(b)]
            strips.append(hstack(*row))
        return vstack(*strips)

    def assemble_transform(self) -> Matrix:
        """Dense T = [[M, 0], [K, 1]] with columns ordered as (varrho | varrho-bar)."""
        if not self.with_transform:
            raise ValueError("Run was made without transformation matrix")
        m = self.shape[0]
        a, b = self.chop.a, self.chop.b
        r = self.rank
        s = [len(v) for v in self.varrho_blocks]
        top = [hstack(*[self.T_M_blocks[(j, h)] for h in range(a)], zeros(self.spec, len(self.upsilon_blocks[j]), m - r))
               for j in range(b)]
        bottom = []
        ident_col = 0
        for i in range(a):
            n_rest = self.chop.row_cuts[i] - s[i]
            parts = [self.T_K_blocks[(i, h)] if h <= i else zeros(self.spec, n_rest, s[h]) for h in range(a)]
            unit = np.zeros((n_rest, m - r), dtype=np.int64)
            unit[np.arange(n_rest), ident_col + np.arange(n_rest)] = 1
            ident_col += n_rest
            bottom.append(hstack(*parts, Matrix(self.spec, unit)))
        return vstack(*top, *bottom) if (top or bottom) else zeros(self.spec, m, m)


def _assemble(plan: ChiefPlan, report: Optional[RunReport]) -> EchelonOutput:
    spec = plan.spec
    chop_spec = plan.chop
    a, b = chop_spec.a, chop_spec.b

    if b:
        varrho_blocks = [plan.payload(("E", i, b)).rho for i in range(1, a + 1)]
    else:
        varrho_blocks = [IndexSet(chop_spec.row_cuts[i], ()) for i in range(a)]
    if a:
        finals = [plan.payload(("D", j, a)) for j in range(1, b + 1)]
    else:
        finals = [PkgD(zeros(spec, 0, chop_spec.col_cuts[j]), IndexSet(chop_spec.col_cuts[j], ())) for j in range(b)]
    upsilon_blocks = [d.gamma for d in finals]

    R_blocks = {}
    for j in range(1, b + 1):
        R_blocks[(j - 1, j - 1)] = finals[j - 1].R
        for l in range(j + 1, b + 1):
            if a:
                R_blocks[(j - 1, l - 1)] = plan.payload(("R", j, l, l - j))
            else:
                R_blocks[(j - 1, l - 1)] = zeros(spec, 0, chop_spec.col_cuts[l - 1])

    T_M = T_K = None
    if plan.with_transform:
        T_M, T_K = {}, {}
        s = [len(v) for v in varrho_blocks]
        for j in range(1, b + 1):
            for h in range(1, a + 1):
                T_M[(j - 1, h - 1)] = plan.payload(final_m_slot(j, h, b))
        for i in range(1, a + 1):
            for h in range(1, i + 1):
                if b:
                    T_K[(i - 1, h - 1)] = plan.payload(("K", i, h, b + 1))
                else:
                    T_K[(i - 1, h - 1)] = zeros(spec, chop_spec.row_cuts[i - 1], s[h - 1])

    rank = sum(len(g) for g in upsilon_blocks)
    return EchelonOutput(spec, plan.shape, chop_spec, R_blocks, T_M, T_K,
                         varrho_blocks, upsilon_blocks, rank, report, plan)


def echelonize(C: Matrix, block: int = 256, threads: int = 1, with_transform: bool = True,
               threshold: int = DEFAULT_ECH_THRESHOLD, shrink_ends: bool = False,
               trace_sink=None, retain: bool = False) -> EchelonOutput:
    chop_spec = chop(C.n_rows, C.n_cols, block, shrink_ends)
    plan = build_plan(C, chop_spec, with_transform, threshold)
    report = run(plan, threads, trace_sink=trace_sink, retain=retain)
    out = _assemble(plan, report)
    logger.info(f"Rank of {C.n_rows}x{C.n_cols} matrix over {C.spec}: {out.rank}")
    return out


# --- oracle and checks ---

def oracle_rref(C: Matrix) -> EchResult:
    """
    Gauss-Jordan on [C | 1], rows taken top-down, pivot = first nonzero
    entry, eliminating in every other row. No blocks, no recursion.

    Rows are normalised to a leading 1 and negated at the end, so the
    result is in the same negative form as ech.
    """
    spec = C.spec
    m, n = C.shape
    W = np.hstack([C.data, np.eye(m, dtype=np.int64)])
    rows, cols = [], []
    for i in range(m):
        nonzero = np.flatnonzero(W[i, :n])
        if len(nonzero) == 0:
            continue
        c = int(nonzero[0])
        W[i] = spec.scale(W[i], ff_inv(spec, int(W[i, c])))
        factors = W[:, c].copy()
        factors[i] = 0
        W = spec.sub(W, spec.mul(factors[:, None], W[i][None, :]))
        rows.append(i)
        cols.append(c)

    rho = IndexSet(m, tuple(rows))
    gamma = IndexSet(n, tuple(sorted(cols)))
    order = [rows[t] for t in np.argsort(cols, kind="stable")]
    r = len(rows)
    rho_arr = rho.as_array()
    rest = index_set_complement(rho).as_array()
    pivot = spec.neg(W[order]) if order else np.zeros((0, n + m), dtype=np.int64)
    M = pivot[:, n:][:, rho_arr].reshape(r, r)
    R = pivot[:, :n][:, index_set_complement(gamma).as_array()].reshape(r, n - r)
    K = W[rest][:, n:][:, rho_arr].reshape(len(rest), r)
    return EchResult(Matrix(spec, M), Matrix(spec, K), Matrix(spec, R), rho, gamma)


@dataclass(frozen=True)
class Verification:
    ok: bool
    message: str

    def __bool__(self):
        return self.ok


def _first_mismatch(got: np.ndarray, want: np.ndarray) -> str:
    if got.shape != want.shape:
        return f"shape {got.shape} != {want.shape}"
    r, c = np.argwhere(got != want)[0]
    return f"entry ({r}, {c}) is {got[r, c]}, expected {want[r, c]}"


def verify(C: Matrix, out: EchelonOutput) -> Verification:
    """
    Check T . P_varrho . C . (upsilon | upsilon-bar)^T = [[-1, R], [0, 0]]
    by dense multiplication and compare (varrho, upsilon, R) with the oracle.
    The selected rows are the first independent rows taken top-down, so
    varrho is checked even when the output carries no transformation.
    """
    spec = C.spec
    if spec != out.spec or C.shape != tuple(out.shape):
        return Verification(False, f"output is for {out.spec} {out.shape}, matrix is {spec} {C.shape}")
    m, n = C.shape
    try:
        varrho, upsilon = out.varrho, out.upsilon
        R = out.dense_R()
    except (KeyError, ValueError) as e:
        return Verification(False, f"malformed output: {e}")
    r = out.rank
    if len(varrho) != r or len(upsilon) != r:
        return Verification(False, f"rank {r} disagrees with |varrho|={len(varrho)}, |upsilon|={len(upsilon)}")
    if R.shape != (r, n - r):
        return Verification(False, f"R has shape {R.shape}, expected {(r, n - r)}")

    if out.with_transform:
        try:
            T = out.assemble_transform()
        except (KeyError, ValueError, ShapeError) as e:
            return Verification(False, f"malformed transformation: {e}")
        row_order = np.concatenate([varrho.as_array(), varrho.complement().as_array()]).astype(np.int64)
        col_order = np.concatenate([upsilon.as_array(), upsilon.complement().as_array()]).astype(np.int64)
        permuted = C.data[row_order][:, col_order].reshape(m, n)
        lhs = spec.matmul(T.data, permuted)
        rhs = np.zeros((m, n), dtype=np.int64)
        rhs[:r, :r] = spec.neg(np.eye(r, dtype=np.int64))
        rhs[:r, r:] = R.data
        if not np.array_equal(lhs, rhs):
            message = f"echelon identity fails: {_first_mismatch(lhs, rhs)}"
            logger.warning(message)
            return Verification(False, message)

    oracle = oracle_rref(C)
    if oracle.gamma != upsilon:
        message = f"pivot columns {upsilon.members} differ from oracle {oracle.gamma.members}"
        logger.warning(message)
        return Verification(False, message)
    if oracle.rho != varrho:
        message = f"selected rows {varrho.members} differ from oracle {oracle.rho.members}"
        logger.warning(message)
        return Verification(False, message)
    if not np.array_equal(oracle.R.data, R.data):
        message = f"R differs from oracle: {_first_mismatch(R.data, oracle.R.data)}"
        logger.warning(message)
        return Verification(False, message)
    logger.info(f"Verified rank {r} output for {m}x{n} matrix over {spec}")
    return Verification(True, "ok")


def invert(C: Matrix, block: int = 256, threads: int = 1, **kwargs) -> Matrix:
    """C^-1 from T . P_varrho . C . upsilon^T = -1, i.e. C^-1[upsilon_s, varrho_t] = -T[s, t]."""
    if C.n_rows != C.n_cols:
        raise ShapeError(f"Cannot invert a {C.n_rows}x{C.n_cols} matrix")
    out = echelonize(C, block, threads, with_transform=True, **kwargs)
    n = C.n_rows
    if out.rank != n:
        raise SingularMatrixError(f"Matrix has rank {out.rank} < {n}")
    T = out.assemble_transform()
    inv = np.zeros((n, n), dtype=np.int64)
    inv[np.ix_(out.upsilon.as_array(), out.varrho.as_array())] = C.spec.neg(T.data)
    return Matrix(C.spec, inv)


def left_kernel(out: EchelonOutput) -> Matrix:
    """Rows of (K | 1) . P_varrho: a basis N of the left null space, N . C = 0."""
    m = out.shape[0]
    r = out.rank
    T = out.assemble_transform()
    order = np.concatenate([out.varrho.as_array(), out.varrho.complement().as_array()]).astype(np.int64)
    N = np.zeros((m - r, m), dtype=np.int64)
    N[:, order] = T.data[r:]
    return Matrix(out.spec, N)
