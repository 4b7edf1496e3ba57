"""
Elementary jobs. Every task is a composition of these; all are pure
functions of immutable matrices, index sets and bitstrings.
"""
import logging
from dataclasses import dataclass

import numpy as np

from field import ff_inv, ff_neg
from matrix import (
    BitString, IndexSet, Matrix, ShapeError, UniverseError, BitStringError,
    check_same_field, index_set_complement, select_cols, select_rows, riffle_rows, riffle_cols,
    hstack, vstack, zeros,
)

logger = logging.getLogger(__name__)

DEFAULT_ECH_THRESHOLD = 256


@dataclass(frozen=True)
class EchResult:
    """
    Output of ech on an alpha x beta matrix H:
    [[M, 0], [K, 1]] . P_rho . H . (gamma | gamma-bar)^T = [[-1, R], [0, 0]]
    """
    M: Matrix
    K: Matrix
    R: Matrix
    rho: IndexSet
    gamma: IndexSet

    @property
    def rank(self) -> int:
        return len(self.rho)


def cpy(a: Matrix) -> Matrix:
    return Matrix(a.spec, a.data.copy())


def mul(a: Matrix, b: Matrix) -> Matrix:
    spec = check_same_field(a, b)
    if a.n_cols != b.n_rows:
        raise ShapeError(f"Cannot multiply {a.n_rows}x{a.n_cols} by {b.n_rows}x{b.n_cols}")
    return Matrix(spec, spec.matmul(a.data, b.data))


def mad(a: Matrix, b: Matrix, c: Matrix) -> Matrix:
    """a + b.c"""
    spec = check_same_field(a, b, c)
    if b.n_cols != c.n_rows or a.shape != (b.n_rows, c.n_cols):
        raise ShapeError(
            f"Cannot form {a.n_rows}x{a.n_cols} + {b.n_rows}x{b.n_cols} . {c.n_rows}x{c.n_cols}")
    return Matrix(spec, spec.add(a.data, spec.matmul(b.data, c.data)))


def cex(h: Matrix, gamma: IndexSet) -> tuple:
    return select_cols(h, gamma), select_cols(h, index_set_complement(gamma))


def rex(h: Matrix, rho: IndexSet) -> tuple:
    return select_rows(h, rho), select_rows(h, index_set_complement(rho))


def unh(rho1: IndexSet, rho2: IndexSet) -> tuple:
    """
    Union plus history. rho2 indexes the complement of rho1; the bitstring
    marks with 1 the members of the union that came from rho2.
    """
    rest = index_set_complement(rho1).members
    if rho2.universe != len(rest):
        raise UniverseError(f"Second set lives over {rho2.universe}, complement of first has {len(rest)} members")
    new = {rest[x] for x in rho2.members}
    union = tuple(sorted(set(rho1.members) | new))
    u = BitString(tuple(1 if x in new else 0 for x in union))
    return IndexSet(rho1.universe, union), u


def un0(rho2: IndexSet) -> tuple:
    return unh(IndexSet(rho2.universe, ()), rho2)


def mkr(rho1: IndexSet, rho2: IndexSet) -> BitString:
    inner = set(rho1.members)
    if not inner.issubset(rho2.members):
        raise UniverseError(f"{rho1.members} is not a subset of {rho2.members}")
    return BitString(tuple(1 if x in inner else 0 for x in rho2.members))


def rrf(u: BitString, b: Matrix, c: Matrix) -> Matrix:
    return riffle_rows(u, b, c)


def crf(u: BitString, b: Matrix, c: Matrix) -> Matrix:
    return riffle_cols(u, b, c)


def crz(m: Matrix, lam: BitString, out_cols: int = None, *, fill: int = 0) -> Matrix:
    """
    Riffle zero columns into m. Zero columns go where lam equals `fill`,
    the columns of m fill the remaining positions in order.
    """
    if out_cols is None:
        out_cols = len(lam)
    keep = 1 - fill
    if len(lam) != out_cols or lam.count(keep) != m.n_cols:
        raise BitStringError(
            f"Cannot riffle {m.n_cols} columns into {out_cols} with {lam.bits} (fill={fill})")
    out = np.zeros((m.n_rows, out_cols), dtype=np.int64)
    out[:, lam.positions(keep)] = m.data
    return Matrix(m.spec, out)


def adi(k: Matrix, delta: BitString, *, mark: int) -> Matrix:
    """Set k[i, j_i] = 1 where j_i is the position of the i-th `mark` bit of delta."""
    positions = delta.positions(mark)
    if len(positions) > k.n_rows or len(delta) != k.n_cols:
        raise BitStringError(f"Cannot add identity for {delta.bits} into {k.n_rows}x{k.n_cols}")
    out = k.data.copy()
    out[np.arange(len(positions)), positions] = 1
    return Matrix(k.spec, out)


def _gauss(h: Matrix) -> EchResult:
    """Single pass, first nonzero entry of each processed row as pivot."""
    spec = h.spec
    alpha, beta = h.shape
    pivots = np.zeros((0, beta), dtype=np.int64)
    trafo = np.zeros((0, alpha), dtype=np.int64)
    cols, rows, kernel = [], [], []

    for i in range(alpha):
        v = h.data[i].copy()
        t = np.zeros(alpha, dtype=np.int64)
        t[i] = 1
        if cols:
            coef = v[cols][None, :]
            v = spec.add(v, spec.matmul(coef, pivots)[0])
            t = spec.add(t, spec.matmul(coef, trafo)[0])
        nonzero = np.flatnonzero(v)
        if len(nonzero) == 0:
            kernel.append(t)
            continue
        c = int(nonzero[0])
        s = ff_neg(spec, ff_inv(spec, int(v[c])))
        v = spec.scale(v, s)
        t = spec.scale(t, s)
        if cols:
            col = pivots[:, c][:, None]
            pivots = spec.add(pivots, spec.mul(col, v[None, :]))
            trafo = spec.add(trafo, spec.mul(col, t[None, :]))
        pivots = np.vstack([pivots, v[None, :]])
        trafo = np.vstack([trafo, t[None, :]])
        cols.append(c)
        rows.append(i)

    order = np.argsort(cols, kind="stable")
    rho = IndexSet(alpha, tuple(rows))
    gamma = IndexSet(beta, tuple(sorted(cols)))
    rho_arr = rho.as_array()
    r = len(rows)
    M = trafo[order][:, rho_arr].reshape(r, r)
    R = pivots[order][:, index_set_complement(gamma).as_array()].reshape(r, beta - r)
    if kernel:
        K = np.vstack(kernel)[:, rho_arr].reshape(len(kernel), r)
    else:
        K = np.zeros((0, r), dtype=np.int64)
    return EchResult(Matrix(spec, M), Matrix(spec, K), Matrix(spec, R), rho, gamma)


def _ech_rows(h: Matrix, threshold: int) -> EchResult:
    alpha = h.n_rows
    a1 = alpha // 2
    top = IndexSet(alpha, tuple(range(a1)))
    H1, H2 = rex(h, top)

    e1 = ech(H1, threshold)
    A, A_rest = cex(H2, e1.gamma)
    e2 = ech(mad(A_rest, A, e1.R), threshold)

    E, R_rest = cex(e1.R, e2.gamma)
    gamma, lam = unh(e1.gamma, e2.gamma)
    R = rrf(lam, mad(R_rest, E, e2.R), e2.R)

    A2p, A2n = rex(A, e2.rho)
    YM = mul(mul(e2.M, A2p), e1.M)
    M = rrf(lam, hstack(mad(e1.M, E, YM), mul(E, e2.M)), hstack(YM, e2.M))

    r1, r2 = e1.rank, e2.rank
    K = vstack(
        hstack(e1.K, zeros(h.spec, e1.K.n_rows, r2)),
        hstack(mul(mad(A2n, e2.K, A2p), e1.M), e2.K),
    )
    rho = IndexSet(alpha, e1.rho.members + tuple(a1 + x for x in e2.rho.members))
    logger.debug(f"Row split {alpha}x{h.n_cols}: ranks {r1}+{r2}")
    return EchResult(M, K, R, rho, gamma)


def _ech_cols(h: Matrix, threshold: int) -> EchResult:
    beta = h.n_cols
    b1 = beta // 2
    left = IndexSet(beta, tuple(range(b1)))
    H1, H2 = cex(h, left)

    e1 = ech(H1, threshold)
    V, W = rex(H2, e1.rho)
    X = mul(e1.M, V)
    e2 = ech(mad(W, e1.K, V), threshold)

    Xg, Xr = cex(X, e2.gamma)
    R = vstack(
        hstack(e1.R, mad(Xr, Xg, e2.R)),
        hstack(zeros(h.spec, e2.rank, e1.R.n_cols), e2.R),
    )
    gamma = IndexSet(beta, e1.gamma.members + tuple(b1 + x for x in e2.gamma.members))

    rho, u = unh(e1.rho, e2.rho)
    K1p, K1n = rex(e1.K, e2.rho)
    Z = mul(e2.M, K1p)
    M = crf(u, vstack(mad(e1.M, Xg, Z), Z), vstack(mul(Xg, e2.M), e2.M))
    K = crf(u, mad(K1n, e2.K, K1p), e2.K)
    logger.debug(f"Column split {h.n_rows}x{beta}: ranks {e1.rank}+{e2.rank}")
    return EchResult(M, K, R, rho, gamma)


def ech(h: Matrix, threshold: int = DEFAULT_ECH_THRESHOLD) -> EchResult:
    """
    Negative reduced echelon form of h with its transformation.

    Blocks with both dimensions at most `threshold` go through direct Gauss;
    larger ones are halved along the longer dimension and recombined.
    """
    if threshold < 1:
        raise ValueError(f"ech threshold must be >= 1, got {threshold}")
    alpha, beta = h.shape
    if alpha == 0 or beta == 0 or (alpha <= threshold and beta <= threshold):
        return _gauss(h)
    if alpha >= beta:
        return _ech_rows(h, threshold)
    return _ech_cols(h, threshold)
