import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

MAX_PRIME = 1 << 16
MAX_ORDER = 1 << 20

# Largest integer a float64 holds exactly; bounds every BLAS partial sum.
EXACT_FLOAT_LIMIT = (1 << 53) - 1

# Moduli as little-endian coefficient tuples (c0, ..., ck), monic.
BUILTIN_MODULI = {
    (2, 2): (1, 1, 1),
    (2, 3): (1, 1, 0, 1),
    (3, 2): (1, 0, 1),
    (3, 3): (1, 2, 0, 1),
}

# Tried first for the cubic extensions; replaced by search if reducible.
PREFERRED_MODULI = {
    (11, 3): (4, 1, 0, 1),
    (37, 3): (4, 1, 0, 1),
}


class FieldError(Exception):
    """Base class for finite field errors."""


class FieldSpecError(FieldError, ValueError):
    """Invalid field parameters (non-prime p, reducible modulus, size)."""


class ZeroInverseError(FieldError, ZeroDivisionError):
    """Raised when inverting the zero element."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def _poly_rem(a: list, b: list, p: int) -> list:
    """Remainder of a modulo the monic polynomial b, coefficients little-endian."""
    a = list(a)
    db = len(b) - 1
    for d in range(len(a) - 1, db - 1, -1):
        c = a[d] % p
        if c:
            for t in range(db + 1):
                a[d - db + t] = (a[d - db + t] - c * b[t]) % p
    return [c % p for c in a[:db]]


def is_irreducible(p: int, modulus) -> bool:
    """Trial division by every monic polynomial of degree <= k/2."""
    k = len(modulus) - 1
    if k < 1 or modulus[-1] != 1:
        return False
    if k == 1:
        return True
    for d in range(1, k // 2 + 1):
        for v in range(p ** d):
            divisor = [(v // p ** t) % p for t in range(d)] + [1]
            if not any(_poly_rem(modulus, divisor, p)):
                return False
    return True


def find_modulus(p: int, k: int) -> tuple:
    """Built-in or preferred modulus for GF(p^k), else the first irreducible by encoding."""
    if (p, k) in BUILTIN_MODULI:
        return BUILTIN_MODULI[(p, k)]
    preferred = PREFERRED_MODULI.get((p, k))
    if preferred is not None and is_irreducible(p, preferred):
        return preferred
    for v in range(p ** k):
        candidate = tuple((v // p ** t) % p for t in range(k)) + (1,)
        if candidate[0] and is_irreducible(p, candidate):
            logger.debug(f"Found modulus {candidate} for GF({p}^{k})")
            return candidate
    raise FieldSpecError(f"No irreducible polynomial of degree {k} over GF({p})")


@dataclass(frozen=True)
class FieldSpec:
    """GF(p^k) with elements encoded as integers a0 + a1*p + ... (little-endian).

    Besides the scalar helpers below the class carries the vectorised kernels
    used on numpy int64 arrays of encodings. All methods are pure.
    """
    p: int
    k: int = 1
    modulus: tuple = ()

    def __post_init__(self):
        if not is_prime(self.p) or self.p >= MAX_PRIME:
            raise FieldSpecError(f"Characteristic {self.p} must be a prime below {MAX_PRIME}")
        if self.k < 1:
            raise FieldSpecError(f"Extension degree must be >= 1, got {self.k}")
        if self.p ** self.k >= MAX_ORDER:
            raise FieldSpecError(f"Field order {self.p}^{self.k} exceeds {MAX_ORDER}")
        modulus = tuple(int(c) for c in self.modulus or ())
        object.__setattr__(self, "modulus", modulus)
        if self.k == 1:
            if modulus:
                raise FieldSpecError("A prime field takes no modulus")
            return
        if len(modulus) != self.k + 1:
            raise FieldSpecError(f"Modulus needs {self.k + 1} coefficients, got {len(modulus)}")
        if any(c < 0 or c >= self.p for c in modulus):
            raise FieldSpecError(f"Modulus coefficients must lie in [0, {self.p})")
        if not is_irreducible(self.p, modulus):
            raise FieldSpecError(f"Modulus {modulus} is not monic irreducible over GF({self.p})")

    @property
    def order(self) -> int:
        return self.p ** self.k

    @cached_property
    def _powers(self) -> tuple:
        return tuple(self.p ** t for t in range(self.k))

    def __str__(self):
        if self.k == 1:
            return f"GF({self.p})"
        return f"GF({self.p}^{self.k})"

    # --- scalar helpers ---

    def digits(self, x: int) -> list:
        return [(x // q) % self.p for q in self._powers]

    def encode(self, coeffs) -> int:
        return sum(int(c) * q for c, q in zip(coeffs, self._powers))

    def _reduce(self, coeffs: list) -> list:
        p, k, mod = self.p, self.k, self.modulus
        coeffs = list(coeffs) + [0] * max(0, k - len(coeffs))
        for d in range(len(coeffs) - 1, k - 1, -1):
            c = coeffs[d] % p
            if c:
                for t in range(k):
                    coeffs[d - k + t] = (coeffs[d - k + t] - c * mod[t]) % p
        return [c % p for c in coeffs[:k]]

    # --- vectorised kernels on int64 arrays of encodings ---

    def planes(self, a) -> list:
        a = np.asarray(a, dtype=np.int64)
        return [(a // q) % self.p for q in self._powers]

    def unplanes(self, planes) -> np.ndarray:
        out = planes[0].astype(np.int64, copy=True)
        for plane, q in zip(planes[1:], self._powers[1:]):
            out = out + plane * q
        return out

    def _reduce_planes(self, planes: list) -> np.ndarray:
        p, k, mod = self.p, self.k, self.modulus
        planes = [pl % p for pl in planes]
        for d in range(len(planes) - 1, k - 1, -1):
            c = planes[d]
            for t in range(k):
                if mod[t]:
                    planes[d - k + t] = (planes[d - k + t] - c * mod[t]) % p
        return self.unplanes(planes[:k])

    def add(self, a, b) -> np.ndarray:
        if self.k == 1:
            return (np.asarray(a, dtype=np.int64) + b) % self.p
        return self.unplanes([(x + y) % self.p for x, y in zip(self.planes(a), self.planes(b))])

    def neg(self, a) -> np.ndarray:
        if self.k == 1:
            return (-np.asarray(a, dtype=np.int64)) % self.p
        return self.unplanes([(-x) % self.p for x in self.planes(a)])

    def sub(self, a, b) -> np.ndarray:
        return self.add(a, self.neg(b))

    def mul(self, a, b) -> np.ndarray:
        """Elementwise product with numpy broadcasting."""
        if self.k == 1:
            return (np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)) % self.p
        pa, pb = self.planes(a), self.planes(b)
        out = [None] * (2 * self.k - 1)
        for s, x in enumerate(pa):
            for t, y in enumerate(pb):
                term = x * y
                out[s + t] = term if out[s + t] is None else out[s + t] + term
        return self._reduce_planes(out)

    def scale(self, a, s: int) -> np.ndarray:
        return self.mul(a, np.int64(s))

    def _matmul_prime(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Exact (a @ b) mod p with entries in [0, p), via float64 BLAS."""
        m, n = a.shape
        q = b.shape[1]
        out = np.zeros((m, q), dtype=np.int64)
        if n == 0 or m == 0 or q == 0:
            return out
        bound = (self.p - 1) ** 2
        chunk = n if bound == 0 else max(1, min(n, EXACT_FLOAT_LIMIT // bound))
        af = a.astype(np.float64)
        bf = b.astype(np.float64)
        for s in range(0, n, chunk):
            part = af[:, s:s + chunk] @ bf[s:s + chunk]
            out = (out + np.rint(part).astype(np.int64)) % self.p
        return out

    def matmul(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if self.k == 1:
            return self._matmul_prime(a, b)
        pa, pb = self.planes(a), self.planes(b)
        out = [None] * (2 * self.k - 1)
        for s, x in enumerate(pa):
            for t, y in enumerate(pb):
                term = self._matmul_prime(x, y)
                out[s + t] = term if out[s + t] is None else out[s + t] + term
        return self._reduce_planes(out)


def ff_add(spec: FieldSpec, x: int, y: int) -> int:
    if spec.k == 1:
        return (x + y) % spec.p
    return spec.encode((a + b) % spec.p for a, b in zip(spec.digits(x), spec.digits(y)))


def ff_neg(spec: FieldSpec, x: int) -> int:
    if spec.k == 1:
        return (-x) % spec.p
    return spec.encode((-a) % spec.p for a in spec.digits(x))


def ff_sub(spec: FieldSpec, x: int, y: int) -> int:
    return ff_add(spec, x, ff_neg(spec, y))


def ff_mul(spec: FieldSpec, x: int, y: int) -> int:
    if spec.k == 1:
        return (x * y) % spec.p
    dx, dy = spec.digits(x), spec.digits(y)
    prod = [0] * (2 * spec.k - 1)
    for s, a in enumerate(dx):
        if a:
            for t, b in enumerate(dy):
                prod[s + t] += a * b
    return spec.encode(spec._reduce(prod))


def ff_pow(spec: FieldSpec, x: int, e: int) -> int:
    if spec.k == 1:
        return pow(x, e, spec.p)
    result, base = 1, x
    while e:
        if e & 1:
            result = ff_mul(spec, result, base)
        base = ff_mul(spec, base, base)
        e >>= 1
    return result


def ff_inv(spec: FieldSpec, x: int) -> int:
    if x % spec.order == 0:
        raise ZeroInverseError(f"Zero has no inverse in {spec}")
    return ff_pow(spec, x, spec.order - 2)


def _prime_power(q: int) -> tuple:
    for p in range(2, q + 1):
        if q % p == 0:
            k, rest = 0, q
            while rest % p == 0:
                rest //= p
                k += 1
            if rest != 1:
                raise FieldSpecError(f"{q} is not a prime power")
            return p, k
    raise FieldSpecError(f"{q} is not a prime power")


def field_spec(p: int, k: int = 1, modulus=None) -> FieldSpec:
    """FieldSpec for GF(p^k), taking the modulus from the table when none is given."""
    if k > 1 and not modulus:
        if not is_prime(p):
            raise FieldSpecError(f"Characteristic {p} is not prime")
        if p ** k >= MAX_ORDER:
            raise FieldSpecError(f"Field order {p}^{k} exceeds {MAX_ORDER}")
        modulus = find_modulus(p, k)
    return FieldSpec(p, k, tuple(modulus or ()))


def parse_field(text: str, modulus=None) -> FieldSpec:
    """Parse "p", "p^k" or a prime power order such as "9"."""
    text = str(text).strip()
    try:
        if "^" in text:
            p_text, k_text = text.split("^", 1)
            p, k = int(p_text), int(k_text)
        else:
            p, k = _prime_power(int(text))
    except ValueError as e:
        raise FieldSpecError(f"Cannot parse field '{text}': {e}") from e
    if isinstance(modulus, str):
        modulus = tuple(int(c) for c in modulus.split(","))
    return field_spec(p, k, modulus)
