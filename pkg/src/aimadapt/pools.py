"""ADAPT operator pools: spin-dependent fermionic, QEB and qubit-ADAPT."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

from .fermion import (MappingScheme, excitation_double, excitation_single, map_fermion_op)
from .pauli import PauliString, PauliSum, is_antihermitian
from .simulator import trotter_terms


class OpKind(str, enum.Enum):
    FERMIONIC_SINGLE = "FERMIONIC_SINGLE"
    FERMIONIC_DOUBLE = "FERMIONIC_DOUBLE"
    QEB_SINGLE = "QEB_SINGLE"
    QEB_DOUBLE = "QEB_DOUBLE"
    QUBIT_STRING = "QUBIT_STRING"


class PoolKind(str, enum.Enum):
    FERMIONIC = "FERMIONIC"
    QEB = "QEB"
    QUBIT_ADAPT = "QUBIT_ADAPT"

    @classmethod
    def parse(cls, value) -> "PoolKind":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_")
        aliases = {"QUBIT": "QUBIT_ADAPT", "FERMION": "FERMIONIC"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown pool kind {value!r}") from None


@dataclass(frozen=True)
class PoolOperator:
    id: int
    generator: PauliSum
    kind: OpKind
    source_indices: tuple[int, ...] = ()
    terms: tuple[tuple[float, PauliString], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.generator:
            raise ValueError("pool generator must be nonzero")
        if not is_antihermitian(self.generator):
            raise ValueError("pool generator must be anti-Hermitian")
        if not self.terms:
            object.__setattr__(self, "terms", tuple(trotter_terms(self.generator)))

    @property
    def n_terms(self) -> int:
        return len(self.generator)

    @property
    def max_weight(self) -> int:
        return self.generator.max_weight()


@dataclass(frozen=True)
class OperatorPool:
    operators: tuple[PoolOperator, ...]
    scheme: MappingScheme
    kind: PoolKind
    n_qubits: int

    def __post_init__(self):
        ids = [op.id for op in self.operators]
        if ids != list(range(len(ids))):
            raise ValueError("pool ids must be dense 0..M-1 in order")
        seen = set()
        for op in self.operators:
            key = _generator_key(op.generator)
            if key in seen:
                raise ValueError(f"duplicate generator at id {op.id}")
            seen.add(key)

    def __len__(self):
        return len(self.operators)

    def __getitem__(self, i) -> PoolOperator:
        return self.operators[i]

    def __iter__(self):
        return iter(self.operators)

    def manifest(self) -> str:
        """Tab-separated: id, kind, source indices, term count, max weight."""
        rows = ["id\tkind\tsource\tterms\tmax_weight"]
        for op in self.operators:
            src = ",".join(map(str, op.source_indices))
            rows.append(f"{op.id}\t{op.kind.value}\t{src}\t{op.n_terms}\t{op.max_weight}")
        return "\n".join(rows) + "\n"


def _generator_key(g: PauliSum):
    """Generator identity up to overall sign."""
    items = [(s.x, s.z, round(c.real, 10), round(c.imag, 10)) for s, c in g.items()]
    neg = [(x, z, -a if a else 0.0, -b if b else 0.0) for x, z, a, b in items]
    return min(tuple(items), tuple(neg))


def excitation_indices(n_spatial: int) -> list[tuple[int, ...]]:
    """Spin-conserving singles ``(p, q)`` then doubles ``(r, s, p, q)``.

    Singles move an electron from ``p`` to ``q > p`` within one spin.  Doubles
    annihilate ``r < s`` and create ``p < q`` on four distinct spin orbitals with
    equal S_z; the annihilated pair is the lexicographically smaller one so
    each operator appears once up to sign.
    """
    n = 2 * n_spatial
    singles = []
    for sigma in (0, 1):
        for i, j in itertools.combinations(range(n_spatial), 2):
            singles.append((2 * i + sigma, 2 * j + sigma))
    singles.sort()
    doubles = []
    pairs = list(itertools.combinations(range(n), 2))

    def sz(pair):
        return sum(1 if p % 2 == 0 else -1 for p in pair)

    for low, high in itertools.combinations(pairs, 2):
        if set(low) & set(high) or sz(low) != sz(high):
            continue
        doubles.append(low + high)
    return singles + doubles


def _fermionic_generator(idx: tuple[int, ...]):
    if len(idx) == 2:
        p, q = idx
        return excitation_single(p, q)
    r, s, p, q = idx
    return excitation_double(p, q, r, s)


def build_fermionic_pool(n_spatial: int, scheme) -> OperatorPool:
    scheme = MappingScheme.parse(scheme)
    n = 2 * n_spatial
    ops = []
    for idx in excitation_indices(n_spatial):
        gen = map_fermion_op(_fermionic_generator(idx), scheme, n)
        kind = OpKind.FERMIONIC_SINGLE if len(idx) == 2 else OpKind.FERMIONIC_DOUBLE
        ops.append(PoolOperator(len(ops), gen, kind, idx))
    return OperatorPool(tuple(ops), scheme, PoolKind.FERMIONIC, n)


def strip_z_chain(gen: PauliSum, keep: tuple[int, ...]) -> PauliSum:
    """Delete Z letters on qubits outside ``keep``; coefficients untouched."""
    mask = sum(1 << q for q in keep)
    acc: dict[PauliString, complex] = {}
    for s, c in gen.items():
        outside_z = s.z & ~s.x & ~mask
        t = PauliString(s.n_qubits, s.x, s.z & ~outside_z)
        acc[t] = acc.get(t, 0) + c
    return PauliSum(gen.n_qubits, acc)


def build_qeb_pool(n_spatial: int) -> OperatorPool:
    """Qubit-excitation pool; defined only on top of the JW mapping."""
    base = build_fermionic_pool(n_spatial, MappingScheme.JW)
    ops = []
    for op in base:
        gen = strip_z_chain(op.generator, op.source_indices)
        kind = OpKind.QEB_SINGLE if op.kind is OpKind.FERMIONIC_SINGLE else OpKind.QEB_DOUBLE
        ops.append(PoolOperator(op.id, gen, kind, op.source_indices))
    return OperatorPool(tuple(ops), MappingScheme.JW, PoolKind.QEB, base.n_qubits)


def build_qubit_adapt_pool(base: OperatorPool) -> OperatorPool:
    """One generator ``i S`` per distinct non-identity string of the base pool."""
    if base.kind is PoolKind.QUBIT_ADAPT:
        raise ValueError("base pool must be fermionic or QEB")
    seen = set()
    ops = []
    for op in base:
        for s, _ in op.generator.items():
            if s.is_identity() or s in seen:
                continue
            seen.add(s)
            ops.append(PoolOperator(len(ops), PauliSum.from_string(s, 1j),
                                    OpKind.QUBIT_STRING, op.source_indices))
    return OperatorPool(tuple(ops), base.scheme, PoolKind.QUBIT_ADAPT, base.n_qubits)


def build_pool(kind, scheme, n_spatial: int) -> OperatorPool:
    """Pool as used in the experiments: qubit-ADAPT splits QEB under JW, fermionic otherwise."""
    kind = PoolKind.parse(kind)
    scheme = MappingScheme.parse(scheme)
    if kind is PoolKind.FERMIONIC:
        return build_fermionic_pool(n_spatial, scheme)
    if kind is PoolKind.QEB:
        if scheme is not MappingScheme.JW:
            raise ValueError("the QEB pool is only defined for the JW mapping")
        return build_qeb_pool(n_spatial)
    base = build_qeb_pool(n_spatial) if scheme is MappingScheme.JW else build_fermionic_pool(n_spatial, scheme)
    return build_qubit_adapt_pool(base)
