import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from field import FieldSpec, FieldSpecError

logger = logging.getLogger(__name__)

GFMAT_HEADER = "GFMAT v1"


class MatrixError(Exception):
    """Base class for matrix, index set and bitstring errors."""


class ShapeError(MatrixError, ValueError):
    pass


class UniverseError(MatrixError, ValueError):
    pass


class BitStringError(MatrixError, ValueError):
    pass


class FormatError(MatrixError, ValueError):
    """Malformed GFMAT text."""


@dataclass(frozen=True, eq=False)
class Matrix:
    """
    Dense row-major matrix over one field.

    data is a read-only int64 array of element encodings; zero-row and
    zero-column shapes are allowed.
    """
    spec: FieldSpec
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.int64)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix data must be 2-D, got {arr.ndim}-D")
        arr = arr.view()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    def is_zero(self) -> bool:
        return not self.data.any()

    def tolist(self) -> list:
        return self.data.tolist()

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return mat_eq(self, other)

    __hash__ = None

    def __repr__(self):
        return f"Matrix({self.spec}, {self.n_rows}x{self.n_cols}, {self.tolist()})"


@dataclass(frozen=True)
class IndexSet:
    """Ordered subset of range(universe); members strictly increasing."""
    universe: int
    members: tuple = ()

    def __post_init__(self):
        members = tuple(int(x) for x in self.members)
        object.__setattr__(self, "members", members)
        if self.universe < 0:
            raise UniverseError(f"Negative universe {self.universe}")
        prev = -1
        for x in members:
            if x <= prev or x >= self.universe:
                raise UniverseError(f"Members {members} are not strictly increasing inside [0, {self.universe})")
            prev = x

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, x):
        return x in self.members

    def as_array(self) -> np.ndarray:
        return np.array(self.members, dtype=np.int64)

    def complement(self) -> "IndexSet":
        return index_set_complement(self)


@dataclass(frozen=True)
class BitString:
    bits: tuple = ()

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise BitStringError(f"Bitstring entries must be 0 or 1: {bits}")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def count(self, bit: int) -> int:
        return self.bits.count(bit)

    def positions(self, bit: int = 1) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.bits) if b == bit], dtype=np.int64)


def index_set_complement(s: IndexSet) -> IndexSet:
    members = set(s.members)
    return IndexSet(s.universe, tuple(x for x in range(s.universe) if x not in members))


def check_same_field(*mats):
    spec = mats[0].spec
    for m in mats[1:]:
        if m.spec != spec:
            raise ShapeError(f"Field mismatch: {spec} vs {m.spec}")
    return spec


def mat_build(spec: FieldSpec, n_rows: int, n_cols: int, entries) -> Matrix:
    entries = np.asarray(list(entries), dtype=np.int64)
    if n_rows < 0 or n_cols < 0 or entries.size != n_rows * n_cols:
        raise ShapeError(f"{entries.size} entries do not fill a {n_rows}x{n_cols} matrix")
    if entries.size and (entries.min() < 0 or entries.max() >= spec.order):
        raise ShapeError(f"Entries must lie in [0, {spec.order}) for {spec}")
    return Matrix(spec, entries.reshape(n_rows, n_cols))


def from_rows(spec: FieldSpec, rows, n_cols: int = None) -> Matrix:
    rows = [list(r) for r in rows]
    if n_cols is None:
        n_cols = len(rows[0]) if rows else 0
    return mat_build(spec, len(rows), n_cols, [x for r in rows for x in r])


def mat_eq(a: Matrix, b: Matrix) -> bool:
    return a.spec == b.spec and a.shape == b.shape and bool(np.array_equal(a.data, b.data))


def zeros(spec: FieldSpec, n_rows: int, n_cols: int) -> Matrix:
    return Matrix(spec, np.zeros((n_rows, n_cols), dtype=np.int64))


def identity(spec: FieldSpec, n: int) -> Matrix:
    return Matrix(spec, np.eye(n, dtype=np.int64))


def hstack(*mats: Matrix) -> Matrix:
    spec = check_same_field(*mats)
    if len({m.n_rows for m in mats}) > 1:
        raise ShapeError(f"Row counts differ: {[m.n_rows for m in mats]}")
    return Matrix(spec, np.hstack([m.data for m in mats]))


def vstack(*mats: Matrix) -> Matrix:
    spec = check_same_field(*mats)
    if len({m.n_cols for m in mats}) > 1:
        raise ShapeError(f"Column counts differ: {[m.n_cols for m in mats]}")
    return Matrix(spec, np.vstack([m.data for m in mats]))


def select_rows(m: Matrix, rows: IndexSet) -> Matrix:
    if rows.universe != m.n_rows:
        raise UniverseError(f"Row set over {rows.universe} applied to {m.n_rows} rows")
    return Matrix(m.spec, m.data[rows.as_array()].reshape(len(rows), m.n_cols))


def select_cols(m: Matrix, cols: IndexSet) -> Matrix:
    if cols.universe != m.n_cols:
        raise UniverseError(f"Column set over {cols.universe} applied to {m.n_cols} columns")
    return Matrix(m.spec, m.data[:, cols.as_array()].reshape(m.n_rows, len(cols)))


def riffle_rows(u: BitString, b: Matrix, c: Matrix) -> Matrix:
    """Row ℓ of the result is the next row of b if u[ℓ] = 0, else the next row of c."""
    spec = check_same_field(b, c)
    if u.count(0) != b.n_rows or u.count(1) != c.n_rows:
        raise BitStringError(
            f"Riffle {u.bits} needs {u.count(0)}+{u.count(1)} rows, got {b.n_rows}+{c.n_rows}")
    if b.n_cols != c.n_cols:
        raise ShapeError(f"Riffled matrices differ in width: {b.n_cols} vs {c.n_cols}")
    out = np.zeros((len(u), b.n_cols), dtype=np.int64)
    out[u.positions(0)] = b.data
    out[u.positions(1)] = c.data
    return Matrix(spec, out)


def riffle_cols(u: BitString, b: Matrix, c: Matrix) -> Matrix:
    """Column analogue of riffle_rows."""
    spec = check_same_field(b, c)
    if u.count(0) != b.n_cols or u.count(1) != c.n_cols:
        raise BitStringError(
            f"Riffle {u.bits} needs {u.count(0)}+{u.count(1)} columns, got {b.n_cols}+{c.n_cols}")
    if b.n_rows != c.n_rows:
        raise ShapeError(f"Riffled matrices differ in height: {b.n_rows} vs {c.n_rows}")
    out = np.zeros((b.n_rows, len(u)), dtype=np.int64)
    out[:, u.positions(0)] = b.data
    out[:, u.positions(1)] = c.data
    return Matrix(spec, out)


# --- GFMAT v1 text format ---

def format_field_line(spec: FieldSpec) -> str:
    line = f"field p={spec.p} k={spec.k}"
    if spec.k > 1:
        line += " modulus=" + ",".join(str(c) for c in spec.modulus)
    return line


def _parse_pairs(line: str, keyword: str) -> dict:
    parts = line.split()
    if not parts or parts[0] != keyword and keyword:
        raise FormatError(f"Expected '{keyword}' line, got '{line}'")
    pairs = {}
    for part in parts[1:] if keyword else parts:
        if "=" not in part:
            raise FormatError(f"Malformed field '{part}' in '{line}'")
        key, value = part.split("=", 1)
        pairs[key] = value
    return pairs


def format_matrix(m: Matrix) -> str:
    lines = [GFMAT_HEADER, format_field_line(m.spec), f"rows={m.n_rows} cols={m.n_cols}"]
    lines.extend(" ".join(str(x) for x in row) for row in m.data.tolist())
    return "\n".join(lines) + "\n"


def parse_field_line(line: str) -> FieldSpec:
    pairs = _parse_pairs(line, "field")
    try:
        p = int(pairs["p"])
        k = int(pairs.get("k", 1))
        modulus = tuple(int(c) for c in pairs["modulus"].split(",")) if "modulus" in pairs else ()
    except (KeyError, ValueError) as e:
        raise FormatError(f"Bad field line '{line}': {e}") from e
    if k > 1 and not modulus:
        raise FormatError(f"Field line '{line}' has k={k} but no modulus")
    try:
        return FieldSpec(p, k, modulus)
    except FieldSpecError as e:
        raise FormatError(f"Bad field line '{line}': {e}") from e


def parse_matrix(text: str) -> Matrix:
    lines = [ln.strip() for ln in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if len(lines) < 3 or lines[0] != GFMAT_HEADER:
        raise FormatError(f"Missing '{GFMAT_HEADER}' header")
    spec = parse_field_line(lines[1])
    dims = _parse_pairs(lines[2], "")
    try:
        n_rows, n_cols = int(dims["rows"]), int(dims["cols"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"Bad dimension line '{lines[2]}'") from e
    body = lines[3:]
    if n_cols == 0 and not any(body):
        # Zero-width rows are written as empty lines.
        body = [""] * n_rows
    if len(body) != n_rows:
        raise FormatError(f"Expected {n_rows} data lines, found {len(body)}")
    entries = []
    for lineno, row in enumerate(body, start=4):
        try:
            values = [int(x) for x in row.split()]
        except ValueError as e:
            raise FormatError(f"Line {lineno}: non-integer entry") from e
        if len(values) != n_cols:
            raise FormatError(f"Line {lineno}: expected {n_cols} entries, found {len(values)}")
        entries.extend(values)
    try:
        return mat_build(spec, n_rows, n_cols, entries)
    except ShapeError as e:
        raise FormatError(str(e)) from e


def read_matrix(path) -> Matrix:
    m = parse_matrix(Path(path).read_text())
    logger.info(f"Read {m.n_rows}x{m.n_cols} matrix over {m.spec} from {path}")
    return m


def write_matrix(path, m: Matrix):
    Path(path).write_text(format_matrix(m))
    logger.info(f"Wrote {m.n_rows}x{m.n_cols} matrix to {path}")


# --- seeded generators (numpy PCG64) ---

def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_matrix(spec: FieldSpec, n_rows: int, n_cols: int, seed: int = 1) -> Matrix:
    return Matrix(spec, _rng(seed).integers(0, spec.order, size=(n_rows, n_cols), dtype=np.int64))


def product_rank_matrix(spec: FieldSpec, n_rows: int, n_cols: int, rank: int, seed: int = 1) -> Matrix:
    """
    Product of a random n_rows x rank and rank x n_cols matrix.
    Rank is at most `rank` and equal to it with high probability.
    """
    rng = _rng(seed)
    left = rng.integers(0, spec.order, size=(n_rows, rank), dtype=np.int64)
    right = rng.integers(0, spec.order, size=(rank, n_cols), dtype=np.int64)
    return Matrix(spec, spec.matmul(left, right))


def well_conditioned_matrix(spec: FieldSpec, n: int, seed: int = 1) -> Matrix:
    """
    Unit lower triangular times upper triangular with nonzero diagonal, so
    every leading square submatrix has full rank.
    """
    rng = _rng(seed)
    lower = np.tril(rng.integers(0, spec.order, size=(n, n), dtype=np.int64), -1)
    np.fill_diagonal(lower, 1)
    upper = np.triu(rng.integers(0, spec.order, size=(n, n), dtype=np.int64), 1)
    np.fill_diagonal(upper, rng.integers(1, spec.order, size=n, dtype=np.int64))
    return Matrix(spec, spec.matmul(lower, upper))
