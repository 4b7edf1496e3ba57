"""
Composite tasks of the Chief. Each task is a deterministic function from
input packages to output packages, built only from the jobs in jobs.py.

Packages B, C, K, M, X and R are plain Matrix payloads; their block
coordinates and versions live in the scheduler's slot ids.
"""
import logging
from dataclasses import dataclass
from typing import Optional

from jobs import (
    DEFAULT_ECH_THRESHOLD, adi, cex, cpy, crz, ech, mad, mkr, mul, rex, rrf, unh, un0,
)
from matrix import BitString, IndexSet, Matrix

logger = logging.getLogger(__name__)


class TaskInputError(ValueError):
    """A package component is absent (or present) against the task's case table."""


@dataclass(frozen=True)
class PkgA:
    """
    Output of ClearDown consumed along block row i. A, E and lam are
    absent for the first block row.
    """
    M: Matrix
    K: Matrix
    rho_prime: IndexSet
    A: Optional[Matrix] = None
    E: Optional[Matrix] = None
    lam: Optional[BitString] = None

    def need(self, name: str):
        value = getattr(self, name)
        if value is None:
            raise TaskInputError(f"Package A has no component '{name}' (first block row)")
        return value

    @property
    def nbytes(self) -> int:
        return sum(m.nbytes for m in (self.M, self.K, self.A, self.E) if m is not None)


@dataclass(frozen=True)
class PkgD:
    R: Matrix
    gamma: IndexSet

    @property
    def rank(self) -> int:
        return len(self.gamma)

    @property
    def nbytes(self) -> int:
        return self.R.nbytes


@dataclass(frozen=True)
class PkgE:
    rho: IndexSet
    delta: BitString

    def __post_init__(self):
        if len(self.delta) != len(self.rho):
            raise TaskInputError(f"delta has length {len(self.delta)}, rho has {len(self.rho)} members")

    @property
    def nbytes(self) -> int:
        return 8 * (len(self.rho) + len(self.delta))


def _absent(value, name, task):
    if value is not None:
        raise TaskInputError(f"{task}: '{name}' must be absent here")


def _present(value, name, task):
    if value is None:
        raise TaskInputError(f"{task}: '{name}' is required here")
    return value


def clear_down(C: Matrix, D: Optional[PkgD], i: int, threshold: int = DEFAULT_ECH_THRESHOLD) -> tuple:
    """
    Echelonise block C against the pivots D already found in its block
    column. Returns (D', A).
    """
    if i == 1:
        if D is not None and D.rank:
            raise TaskInputError("ClearDown: first block row takes no pivots")
        e = ech(C, threshold)
        return PkgD(e.R, e.gamma), PkgA(e.M, e.K, e.rho)

    D = _present(D, "D", "ClearDown")
    A, A_rest = cex(C, D.gamma)
    e = ech(mad(A_rest, A, D.R), threshold)
    E, R_rest = cex(D.R, e.gamma)
    gamma, lam = unh(D.gamma, e.gamma)
    R = rrf(lam, mad(R_rest, E, e.R), e.R)
    return PkgD(R, gamma), PkgA(e.M, e.K, e.rho, A=A, E=E, lam=lam)


def update_row(A: PkgA, C: Matrix, B: Optional[Matrix], i: int) -> tuple:
    """Returns (C', B')."""
    if i == 1:
        _absent(B, "B", "UpdateRow")
        Z = C
    else:
        Z = mad(C, A.need("A"), _present(B, "B", "UpdateRow"))
    V, W = rex(Z, A.rho_prime)
    X = mul(A.M, V)
    if i == 1:
        B_new = X
    else:
        B_new = rrf(A.need("lam"), mad(B, A.need("E"), X), X)
    return mad(W, A.K, V), B_new


def update_row_trafo(A: PkgA, K: Optional[Matrix], M: Optional[Matrix], E: PkgE,
                     i: int, h: int, j: int) -> tuple:
    """
    Carry the row operations of ClearDown(i, j) into the transformation
    blocks K_ih and M_jh. Returns (K', M').
    """
    if h > i:
        raise TaskInputError(f"UpdateRowTrafo: h={h} exceeds i={i}")
    first = j == 1 and h == i
    if j == 1:
        _absent(K, "K", "UpdateRowTrafo")
    else:
        K = crz(_present(K, "K", "UpdateRowTrafo"), E.delta, fill=1)
    if h == i:
        _absent(M, "M", "UpdateRowTrafo")
    else:
        _present(M, "M", "UpdateRowTrafo")

    if h != i:
        Z = mad(K, A.need("A"), M) if j != 1 else mul(A.need("A"), M)
    else:
        Z = K

    if first:
        X = A.M
    else:
        V, W = rex(Z, A.rho_prime)
        if h == i:
            V = adi(V, E.delta, mark=1)
        X = mul(A.M, V)

    if h != i:
        M_new = rrf(A.need("lam"), mad(M, A.need("E"), X), X)
    elif i != 1:
        M_new = rrf(A.need("lam"), mul(A.need("E"), X), X)
    else:
        M_new = X

    K_new = A.K if first else mad(W, A.K, V)
    return K_new, M_new


def extend(A: PkgA, E: Optional[PkgE], j: int) -> PkgE:
    if j == 1:
        _absent(E, "E", "Extend")
        rho, delta = un0(A.rho_prime)
    else:
        E = _present(E, "E", "Extend")
        rho, delta = unh(E.rho, A.rho_prime)
    return PkgE(rho, delta)


def row_lengthen(M: Matrix, E1: PkgE, E2: PkgE) -> Matrix:
    return crz(M, mkr(E1.rho, E2.rho), len(E2.rho), fill=0)


def pre_clear_up(B: Matrix, D: PkgD) -> tuple:
    """Returns (X, R): pivotal and remaining columns of B."""
    return cex(B, D.gamma)


def clear_up(R: Matrix, X: Matrix, M: Matrix) -> Matrix:
    return mad(R, X, M)


def copy_d(D: PkgD) -> Matrix:
    return cpy(D.R)
