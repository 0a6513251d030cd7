"""Pauli strings and sums in the two-bitmask (symplectic) encoding.

Qubit ``q`` lives in bit ``q`` of both masks; text labels are little-endian,
so the leftmost letter belongs to qubit 0.  A letter with bits ``(x, z)`` is
the operator ``i**(x*z) X**x Z**z``, which makes ``(1, 1)`` equal to ``Y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

PRUNE_TOL = 1e-12
HERMITICITY_TOL = 1e-12

_LETTERS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_PHASES = (1, 1j, -1, -1j)


def _popcount(v: int) -> int:
    return bin(v).count("1")


@dataclass(frozen=True, slots=True, order=False)
class PauliString:
    """A phase-free N-qubit Pauli string."""

    n_qubits: int
    x: int = 0
    z: int = 0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        full = (1 << self.n_qubits) - 1
        if self.x & ~full or self.z & ~full:
            raise ValueError("mask has bits beyond n_qubits")

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        x = z = 0
        for q, ch in enumerate(label.upper()):
            try:
                xb, zb = _LETTERS[ch]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {ch!r} in {label!r}") from None
            x |= xb << q
            z |= zb << q
        return cls(len(label), x, z)

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls(n_qubits)

    @classmethod
    def single(cls, n_qubits: int, qubit: int, letter: str) -> "PauliString":
        xb, zb = _LETTERS[letter]
        return cls(n_qubits, xb << qubit, zb << qubit)

    @property
    def label(self) -> str:
        out = []
        for q in range(self.n_qubits):
            xb, zb = (self.x >> q) & 1, (self.z >> q) & 1
            out.append("IZXY"[xb * 2 + zb])
        return "".join(out)

    def letter(self, qubit: int) -> str:
        return self.label[qubit]

    @property
    def weight(self) -> int:
        return _popcount(self.x | self.z)

    @property
    def support(self) -> tuple[int, ...]:
        m = self.x | self.z
        return tuple(q for q in range(self.n_qubits) if (m >> q) & 1)

    def is_identity(self) -> bool:
        return not (self.x or self.z)

    def commutes_with(self, other: "PauliString") -> bool:
        return _popcount((self.x & other.z) ^ (self.z & other.x)) % 2 == 0

    def sort_key(self) -> str:
        return self.label

    def __str__(self):
        return self.label

    def __repr__(self):
        return f"PauliString({self.label!r})"


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Return ``(phase, product)`` with ``phase * product == a @ b``."""
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"length mismatch: {a.n_qubits} vs {b.n_qubits}")
    x, z = a.x ^ b.x, a.z ^ b.z
    k = (_popcount(a.x & a.z) + _popcount(b.x & b.z)
         + 2 * _popcount(a.z & b.x) - _popcount(x & z)) % 4
    return _PHASES[k], PauliString(a.n_qubits, x, z)


class PauliSum:
    """Complex linear combination of Pauli strings on a fixed number of qubits.

    Treated as immutable: every operation returns a new sum.  Terms with
    magnitude below ``PRUNE_TOL`` are dropped after each combination.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: Mapping[PauliString, complex] | None = None,
                 tol: float = PRUNE_TOL):
        self.n_qubits = n_qubits
        clean = {}
        for s, c in (terms or {}).items():
            if s.n_qubits != n_qubits:
                raise ValueError("string length does not match n_qubits")
            c = complex(c)
            if abs(c) >= tol and abs(c) > 0:
                clean[s] = c
        self._terms = clean

    @classmethod
    def from_string(cls, s: PauliString, coeff: complex = 1.0) -> "PauliSum":
        return cls(s.n_qubits, {s: coeff})

    @classmethod
    def from_label(cls, label: str, coeff: complex = 1.0) -> "PauliSum":
        return cls.from_string(PauliString.from_label(label), coeff)

    @classmethod
    def from_labels(cls, pairs: Iterable[tuple[complex, str]], tol: float = PRUNE_TOL) -> "PauliSum":
        pairs = list(pairs)
        n = len(pairs[0][1])
        acc: dict[PauliString, complex] = {}
        for c, lab in pairs:
            s = PauliString.from_label(lab)
            acc[s] = acc.get(s, 0) + c
        return cls(n, acc, tol)

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "PauliSum":
        return cls(n_qubits, {PauliString.identity(n_qubits): coeff})

    @classmethod
    def zero(cls, n_qubits: int) -> "PauliSum":
        return cls(n_qubits)

    @property
    def terms(self) -> dict[PauliString, complex]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[PauliString, complex]]:
        """Terms in canonical (lexicographic label) order."""
        for s in sorted(self._terms, key=PauliString.sort_key):
            yield s, self._terms[s]

    def strings(self) -> list[PauliString]:
        return [s for s, _ in self.items()]

    def coefficient(self, s: PauliString | str) -> complex:
        if isinstance(s, str):
            s = PauliString.from_label(s)
        return self._terms.get(s, 0j)

    def __len__(self):
        return len(self._terms)

    def __bool__(self):
        return bool(self._terms)

    def _check(self, other: "PauliSum"):
        if self.n_qubits != other.n_qubits:
            raise ValueError(f"length mismatch: {self.n_qubits} vs {other.n_qubits}")

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if isinstance(other, (int, float, complex)):
            other = PauliSum.identity(self.n_qubits, other)
        self._check(other)
        acc = dict(self._terms)
        for s, c in other._terms.items():
            acc[s] = acc.get(s, 0) + c
        return PauliSum(self.n_qubits, acc)

    __radd__ = __add__

    def __neg__(self) -> "PauliSum":
        return self * -1

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-other)

    def __mul__(self, scalar: complex) -> "PauliSum":
        if isinstance(scalar, PauliSum):
            return self @ scalar
        return PauliSum(self.n_qubits, {s: c * scalar for s, c in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> "PauliSum":
        return self * (1 / scalar)

    def __matmul__(self, other: "PauliSum") -> "PauliSum":
        self._check(other)
        acc: dict[PauliString, complex] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                ph, s = multiply(a, b)
                acc[s] = acc.get(s, 0) + ph * ca * cb
        return PauliSum(self.n_qubits, acc)

    def __eq__(self, other):
        if not isinstance(other, PauliSum):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self._terms == other._terms

    __hash__ = None

    def allclose(self, other: "PauliSum", atol: float = 1e-10) -> bool:
        diff = self - other
        return all(abs(c) < atol for c in diff._terms.values())

    def dagger(self) -> "PauliSum":
        return PauliSum(self.n_qubits, {s: c.conjugate() for s, c in self._terms.items()})

    def max_weight(self) -> int:
        return max((s.weight for s in self._terms), default=0)

    def norm1(self) -> float:
        return sum(abs(c) for c in self._terms.values())

    def to_text(self) -> str:
        """One ``c * LABEL`` line per term, canonical order."""
        return "\n".join(f"{_fmt(c)} * {s.label}" for s, c in self.items())

    @classmethod
    def from_text(cls, text: str) -> "PauliSum":
        pairs = []
        for line in text.strip().splitlines():
            coeff, label = line.split("*")
            pairs.append((complex(coeff.strip().replace(" ", "")), label.strip()))
        return cls.from_labels(pairs)

    def __repr__(self):
        body = " + ".join(f"{_fmt(c)}*{s.label}" for s, c in self.items())
        return f"PauliSum({body or '0'})"

    def to_matrix(self) -> np.ndarray:
        """Dense matrix; basis index bit ``N-1-q`` holds qubit ``q``."""
        return to_sparse(self).toarray()


def _fmt(c: complex) -> str:
    if abs(c.imag) < 1e-15:
        return repr(c.real)
    return repr(c)


def commutator(a: PauliSum, b: PauliSum, tol: float = PRUNE_TOL) -> PauliSum:
    """``a b - b a``, keeping only anticommuting string pairs (each contributes twice)."""
    a._check(b)
    acc: dict[PauliString, complex] = {}
    for sa, ca in a._terms.items():
        for sb, cb in b._terms.items():
            if sa.commutes_with(sb):
                continue
            ph, s = multiply(sa, sb)
            acc[s] = acc.get(s, 0) + 2 * ph * ca * cb
    return PauliSum(a.n_qubits, acc, tol=tol)


def anticommutator(a: PauliSum, b: PauliSum, tol: float = PRUNE_TOL) -> PauliSum:
    a._check(b)
    acc: dict[PauliString, complex] = {}
    for sa, ca in a._terms.items():
        for sb, cb in b._terms.items():
            if not sa.commutes_with(sb):
                continue
            ph, s = multiply(sa, sb)
            acc[s] = acc.get(s, 0) + 2 * ph * ca * cb
    return PauliSum(a.n_qubits, acc, tol=tol)


def prune(a: PauliSum, tol: float = PRUNE_TOL) -> PauliSum:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if tol == 0:
        return a
    return PauliSum(a.n_qubits, a._terms, tol=tol)


def is_hermitian(a: PauliSum, tol: float = HERMITICITY_TOL) -> bool:
    return all(abs(c.imag) <= tol for c in a._terms.values())


def is_antihermitian(a: PauliSum, tol: float = HERMITICITY_TOL) -> bool:
    return all(abs(c.real) <= tol for c in a._terms.values())


# Dense / sparse conversion ------------------------------------------------

def basis_masks(s: PauliString) -> tuple[int, int]:
    """Flip and sign masks of ``s`` expressed on basis-state indices."""
    n = s.n_qubits
    fx = fz = 0
    for q in range(n):
        if (s.x >> q) & 1:
            fx |= 1 << (n - 1 - q)
        if (s.z >> q) & 1:
            fz |= 1 << (n - 1 - q)
    return fx, fz


_PARITY_CACHE: dict[int, np.ndarray] = {}


def parity_table(n_qubits: int) -> np.ndarray:
    """``parity_table(n)[b] = popcount(b) % 2`` for all ``b < 2**n``."""
    tab = _PARITY_CACHE.get(n_qubits)
    if tab is None:
        tab = np.zeros(1 << n_qubits, dtype=np.int8)
        for k in range(n_qubits):
            block = 1 << k
            tab[block:2 * block] = 1 - tab[:block]
        _PARITY_CACHE[n_qubits] = tab
    return tab


def string_action(s: PauliString) -> tuple[np.ndarray, np.ndarray]:
    """``(perm, factor)`` with ``(S psi)[c] = factor[c] * psi[perm[c]]``."""
    n = s.n_qubits
    fx, fz = basis_masks(s)
    idx = np.arange(1 << n)
    perm = idx ^ fx
    sign = 1 - 2 * parity_table(n)[perm & fz].astype(np.float64)
    factor = _PHASES[_popcount(s.x & s.z) % 4] * sign
    return perm, factor


def to_sparse(a: PauliSum):
    import scipy.sparse as sp

    dim = 1 << a.n_qubits
    rows, cols, vals = [], [], []
    idx = np.arange(dim)
    for s, c in a._terms.items():
        perm, factor = string_action(s)
        rows.append(idx)
        cols.append(perm)
        vals.append(c * factor)
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dim, dim), dtype=complex)
    return m.tocsr()
