"""Molecular integrals, second-quantised operators and fermion-to-qubit mappings.

Spin orbitals are interleaved: spatial orbital ``i`` gives ``2i`` (alpha) and
``2i + 1`` (beta).  Every mapping is expressed through Majorana strings
``gamma_{2p}``, ``gamma_{2p+1}`` with ``a_p = (gamma_{2p} + i gamma_{2p+1}) / 2``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .pauli import PauliString, PauliSum, multiply

DATA_DIR = Path(__file__).resolve().parent / "data"


class MappingScheme(str, enum.Enum):
    JW = "JW"
    BK = "BK"
    JKMN = "JKMN"

    @classmethod
    def parse(cls, value) -> "MappingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown mapping scheme {value!r}") from None


class FCIDumpError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class IntegralSet:
    """Spin-orbital integrals in Hartree.

    ``two_body[p, q, r, s]`` is the chemists' ``(pq|rs)`` integral over spin
    orbitals (zero unless spins of ``p, q`` and of ``r, s`` agree).
    """

    n_spin_orbitals: int
    one_body: np.ndarray
    two_body: np.ndarray
    core_energy: float = 0.0
    n_electrons: int | None = None
    ms2: int = 0
    spatial_one_body: np.ndarray | None = field(default=None, repr=False)
    spatial_two_body: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_spatial(self) -> int:
        return self.n_spin_orbitals // 2


def _header_int(header: str, key: str, default=None):
    m = re.search(rf"\b{key}\s*=\s*(-?\d+)", header, flags=re.IGNORECASE)
    if m is None:
        if default is None:
            raise FCIDumpError(f"malformed header: missing {key}", 1)
        return default
    return int(m.group(1))


def parse_fcidump(source) -> IntegralSet:
    """Parse FCIDUMP text (str, bytes, path or file object).

    Indices are 1-based spatial orbitals in chemists' order; ``i j 0 0`` lines
    are one-body integrals and ``0 0 0 0`` is the core energy.
    """
    if isinstance(source, Path):
        text = source.read_text()
    elif isinstance(source, bytes):
        text = source.decode()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode()

    lines = text.splitlines()
    header_lines = []
    body_start = None
    for i, line in enumerate(lines):
        header_lines.append(line)
        if re.search(r"&END|^\s*/\s*$", line, flags=re.IGNORECASE):
            body_start = i + 1
            break
    if body_start is None or not header_lines or "&FCI" not in header_lines[0].upper():
        raise FCIDumpError("malformed header: expected '&FCI ... &END'", 1)
    header = " ".join(header_lines)
    norb = _header_int(header, "NORB")
    nelec = _header_int(header, "NELEC", -1)
    nelec = None if nelec < 0 else nelec
    ms2 = _header_int(header, "MS2", 0)
    if norb < 1:
        raise FCIDumpError("NORB must be positive", 1)

    h1 = np.zeros((norb, norb))
    h2 = np.zeros((norb,) * 4)
    core = 0.0
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FCIDumpError(f"expected 'value i j k l', got {line.strip()!r}", lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(p) for p in parts[1:])
        except ValueError:
            raise FCIDumpError(f"non-numeric entry {line.strip()!r}", lineno) from None
        if min(i, j, k, l) < 0 or max(i, j, k, l) > norb:
            raise FCIDumpError(f"index out of range 1..{norb}", lineno)
        if i == j == k == l == 0:
            core += value
        elif k == 0 and l == 0:
            if i == 0 or j == 0:
                raise FCIDumpError("one-body entry needs two nonzero indices", lineno)
            h1[i - 1, j - 1] = h1[j - 1, i - 1] = value
        elif 0 in (i, j, k, l):
            # orbital energies ("e i 0 0 0") are informational only
            if j == k == l == 0:
                continue
            raise FCIDumpError("mixed zero/nonzero indices", lineno)
        else:
            p, q, r, s = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in ((p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
                               (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p)):
                h2[a, b, c, d] = value
    return integrals_from_spatial(h1, h2, core, nelec, ms2)


def integrals_from_spatial(h1: np.ndarray, h2: np.ndarray, core: float = 0.0,
                           n_electrons: int | None = None, ms2: int = 0) -> IntegralSet:
    norb = h1.shape[0]
    n = 2 * norb
    one = np.zeros((n, n))
    two = np.zeros((n,) * 4)
    for sigma in (0, 1):
        one[sigma::2, sigma::2] = h1
        for tau in (0, 1):
            two[sigma::2, sigma::2, tau::2, tau::2] = h2
    return IntegralSet(n, one, two, float(core), n_electrons, ms2, h1.copy(), h2.copy())


FIXTURES = {"h2": "h2_sto3g_0.74.fcidump", "h4": "h4_chain_sto3g_1.5.fcidump"}


def fixture_path(name: str) -> Path:
    return DATA_DIR.joinpath(FIXTURES.get(name, name))


def load_fixture(name: str) -> IntegralSet:
    """Load a bundled FCIDUMP: ``"h2"`` or ``"h4"``, or a file name in the data dir."""
    return parse_fcidump(fixture_path(name))


# Fermionic operators ------------------------------------------------------

@dataclass(frozen=True)
class FermionOp:
    """Sum of coefficient * product of ladder operators.

    Each product is a tuple of ``(index, dagger)`` factors applied right to left
    in the usual operator sense, i.e. stored in written order.
    """

    terms: tuple[tuple[complex, tuple[tuple[int, bool], ...]], ...]

    @classmethod
    def single(cls, *factors: tuple[int, bool], coeff: complex = 1.0) -> "FermionOp":
        return cls(((coeff, tuple(factors)),))

    def __add__(self, other: "FermionOp") -> "FermionOp":
        return FermionOp(self.terms + other.terms)

    def __mul__(self, c: complex) -> "FermionOp":
        return FermionOp(tuple((k * c, f) for k, f in self.terms))

    __rmul__ = __mul__

    def __sub__(self, other: "FermionOp") -> "FermionOp":
        return self + other * -1

    def max_index(self) -> int:
        return max((i for _, f in self.terms for i, _ in f), default=-1)


def excitation_single(p: int, q: int) -> FermionOp:
    """``a_q^dag a_p - a_p^dag a_q`` (moves an electron from p to q)."""
    return (FermionOp.single((q, True), (p, False))
            - FermionOp.single((p, True), (q, False)))


def excitation_double(p: int, q: int, r: int, s: int) -> FermionOp:
    """``a_p^dag a_q^dag a_r a_s - a_s^dag a_r^dag a_q a_p``."""
    return (FermionOp.single((p, True), (q, True), (r, False), (s, False))
            - FermionOp.single((s, True), (r, True), (q, False), (p, False)))


# Majorana strings per scheme ------------------------------------------------

def _string(n, xs=(), zs=()) -> PauliSum:
    """Product ``X_xs Z_zs`` (Z applied first) as a one-term sum with exact phase."""
    x = sum(1 << q for q in xs)
    z = sum(1 << q for q in zs)
    ph, s = multiply(PauliString(n, x, 0), PauliString(n, 0, z))
    return PauliSum(n, {s: ph})


def _fenwick_matrix(n: int) -> np.ndarray:
    """Bravyi-Kitaev encoding: qubit i stores the parity of modes ``(i & (i+1))..i``."""
    beta = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        beta[i, i & (i + 1): i + 1] = 1
    return beta


def _gf2_inverse(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    aug = np.concatenate([m % 2, np.eye(n, dtype=np.int64)], axis=1)
    for col in range(n):
        pivot = next(r for r in range(col, n) if aug[r, col])
        aug[[col, pivot]] = aug[[pivot, col]]
        for r in range(n):
            if r != col and aug[r, col]:
                aug[r] ^= aug[col]
    return aug[:, n:]


def _linear_encoding_majoranas(beta: np.ndarray) -> list[PauliSum]:
    """Majoranas of a binary linear encoding ``b = beta f (mod 2)``.

    ``c_j = X_{update(j)} Z_{parity(j)}`` and ``d_j = i c_j (-1)^{n_j}``.
    """
    n = beta.shape[0]
    inv = _gf2_inverse(beta)
    lower = np.tril(np.ones((n, n), dtype=np.int64), k=-1)
    parity_rows = (lower @ inv) % 2
    out = []
    for j in range(n):
        update = np.flatnonzero(beta[:, j])
        parity = np.flatnonzero(parity_rows[j])
        flip = np.flatnonzero(inv[j])
        c = _string(n, update, parity)
        d = (c @ _string(n, (), flip)) * 1j
        out.extend([c, d])
    return out


def ternary_tree_strings(n: int) -> list[PauliSum]:
    """All ``2n + 1`` root-to-leaf strings of the breadth-first ternary tree.

    Node ``k`` has children ``3k+1, 3k+2, 3k+3`` along edges X, Y, Z; leaves are
    the missing children, visited in breadth-first order.
    """
    paths: dict[int, list[tuple[int, str]]] = {0: []}
    leaves = []
    for k in range(n):
        for e, letter in enumerate("XYZ"):
            child = 3 * k + 1 + e
            step = paths[k] + [(k, letter)]
            if child < n:
                paths[child] = step
            else:
                leaves.append(step)
    out = []
    for path in leaves:
        label = ["I"] * n
        for q, letter in path:
            label[q] = letter
        out.append(PauliSum.from_label("".join(label)))
    return out


@lru_cache(maxsize=None)
def majoranas(scheme: MappingScheme, n_qubits: int) -> tuple[PauliSum, ...]:
    scheme = MappingScheme.parse(scheme)
    if scheme is MappingScheme.JW:
        return tuple(_linear_encoding_majoranas(np.eye(n_qubits, dtype=np.int64)))
    if scheme is MappingScheme.BK:
        return tuple(_linear_encoding_majoranas(_fenwick_matrix(n_qubits)))
    return tuple(ternary_tree_strings(n_qubits)[: 2 * n_qubits])


@lru_cache(maxsize=None)
def ladder(p: int, dagger: bool, scheme: MappingScheme, n_qubits: int) -> PauliSum:
    if not 0 <= p < n_qubits:
        raise IndexError(f"mode {p} out of range for {n_qubits} qubits")
    g = majoranas(MappingScheme.parse(scheme), n_qubits)
    sign = -1j if dagger else 1j
    return (g[2 * p] + g[2 * p + 1] * sign) * 0.5


def map_fermion_op(op: FermionOp, scheme, n_qubits: int) -> PauliSum:
    scheme = MappingScheme.parse(scheme)
    if op.max_index() >= n_qubits:
        raise IndexError(f"operator index {op.max_index()} overflows {n_qubits} qubits")
    total = PauliSum.zero(n_qubits)
    for coeff, factors in op.terms:
        term = PauliSum.identity(n_qubits, coeff)
        for idx, dag in factors:
            term = term @ ladder(idx, dag, scheme, n_qubits)
        total = total + term
    return total


def number_operator(p: int, scheme, n_qubits: int) -> PauliSum:
    return map_fermion_op(FermionOp.single((p, True), (p, False)), scheme, n_qubits)


def total_number_operator(scheme, n_qubits: int) -> PauliSum:
    total = PauliSum.zero(n_qubits)
    for p in range(n_qubits):
        total = total + number_operator(p, scheme, n_qubits)
    return total


def sz_operator(scheme, n_qubits: int) -> PauliSum:
    total = PauliSum.zero(n_qubits)
    for p in range(n_qubits):
        total = total + number_operator(p, scheme, n_qubits) * (0.5 if p % 2 == 0 else -0.5)
    return total


def hartree_fock_occupation(n_electrons: int, n_spin_orbitals: int) -> np.ndarray:
    if not 0 <= n_electrons <= n_spin_orbitals:
        raise ValueError("n_electrons must lie in 0..n_spin_orbitals")
    occ = np.zeros(n_spin_orbitals, dtype=int)
    occ[:n_electrons] = 1
    return occ


def build_hamiltonian(ints: IntegralSet, scheme, tol: float = 1e-12) -> PauliSum:
    """``core + sum h_pq a_p^dag a_q + 1/2 sum (pq|rs) a_p^dag a_r^dag a_s a_q``.

    Uses ``a_p^dag a_r^dag a_s a_q = E_pq E_rs - delta_qr E_ps`` with
    ``E_pq = a_p^dag a_q``.
    """
    scheme = MappingScheme.parse(scheme)
    n = ints.n_spin_orbitals
    E = {}

    def e(p, q):
        if (p, q) not in E:
            E[p, q] = ladder(p, True, scheme, n) @ ladder(q, False, scheme, n)
        return E[p, q]

    acc: dict[PauliString, complex] = {PauliString.identity(n): ints.core_energy}

    def add(ps: PauliSum, w: float):
        for s, c in ps.terms.items():
            acc[s] = acc.get(s, 0) + w * c

    h1, g = ints.one_body, ints.two_body
    for p in range(n):
        for q in range(n):
            if abs(h1[p, q]) > tol:
                add(e(p, q), h1[p, q])
    for p in range(n):
        for q in range(n):
            block = g[p, q]
            if not np.any(np.abs(block) > tol):
                continue
            f = PauliSum.zero(n)
            for r in range(n):
                for s in range(n):
                    if abs(block[r, s]) > tol:
                        f = f + e(r, s) * block[r, s]
            add(e(p, q) @ f, 0.5)
            for s in range(n):
                if abs(g[p, q, q, s]) > tol:
                    add(e(p, s), -0.5 * g[p, q, q, s])
    h = PauliSum(n, acc, tol=tol)
    # drop the imaginary round-off of a Hermitian operator
    return PauliSum(n, {s: c.real for s, c in h.terms.items()}, tol=tol)


def mapped_weights(scheme, n_qubits: int) -> list[int]:
    return [m.max_weight() for m in majoranas(MappingScheme.parse(scheme), n_qubits)]


def ternary_depth_bound(n_qubits: int) -> int:
    return math.ceil(math.log(2 * n_qubits + 1, 3)) + 1
