import itertools

import pytest

from aimadapt.fermion import (MappingScheme, excitation_single, map_fermion_op, sz_operator,
                              total_number_operator)
from aimadapt.pauli import PauliSum, commutator, is_antihermitian
from aimadapt.pools import (OperatorPool, OpKind, PoolKind, PoolOperator, build_fermionic_pool,
                            build_pool, build_qeb_pool, build_qubit_adapt_pool, excitation_indices)

# enumeration fixtures (n_spatial = 4): independent count of same-spin singles and
# unordered pairs of disjoint, equal-S_z index pairs
N_SINGLES, N_DOUBLES = 12, 78
QUBIT_ADAPT_H4_JW = 328


def independent_counts(n_spatial):
    n = 2 * n_spatial
    singles = sum(1 for p, q in itertools.combinations(range(n), 2) if p % 2 == q % 2)
    pairs = list(itertools.combinations(range(n), 2))

    def sz(pair):
        return sum(1 if x % 2 == 0 else -1 for x in pair)

    doubles = sum(1 for a, b in itertools.combinations(pairs, 2) if not set(a) & set(b) and sz(a) == sz(b))
    return singles, doubles


def test_small_pools():
    assert len(build_fermionic_pool(1, "JW")) == 0
    pool = build_fermionic_pool(2, "JW")
    assert sum(op.kind is OpKind.FERMIONIC_SINGLE for op in pool) == 2


def test_enumeration_counts():
    assert independent_counts(4) == (N_SINGLES, N_DOUBLES)
    idx = excitation_indices(4)
    assert sum(len(i) == 2 for i in idx) == N_SINGLES
    assert sum(len(i) == 4 for i in idx) == N_DOUBLES


@pytest.mark.parametrize("scheme", list(MappingScheme))
def test_fermionic_pool_symmetries(scheme):
    pool = build_fermionic_pool(4, scheme)
    n_op, sz = total_number_operator(scheme, 8), sz_operator(scheme, 8)
    assert len(pool) == N_SINGLES + N_DOUBLES
    for op in pool:
        assert is_antihermitian(op.generator)
        assert len(commutator(op.generator, n_op, tol=1e-10)) == 0
        assert len(commutator(op.generator, sz, tol=1e-10)) == 0


def test_qeb_strips_z_chain():
    jw = map_fermion_op(excitation_single(0, 2), MappingScheme.JW, 4)
    assert any(s.letter(1) == "Z" for s in jw.strings())
    qeb = build_qeb_pool(2)
    op = next(o for o in qeb if o.source_indices == (0, 2))
    assert all(s.letter(1) == "I" for s in op.generator.strings())
    assert {s.label for s in op.generator.strings()} == {"XIYI", "YIXI"}
    assert sorted(abs(c) for _, c in op.generator.items()) == [0.5, 0.5]


def test_qeb_supports_and_size():
    qeb = build_qeb_pool(4)
    assert len(qeb) == len(build_fermionic_pool(4, "JW"))
    for op in qeb:
        for s in op.generator.strings():
            assert set(s.support) <= set(op.source_indices)


def test_qubit_adapt_pool():
    single = build_qeb_pool(2)
    first = OperatorPool((single[0],), MappingScheme.JW, PoolKind.QEB, 4)
    assert len(build_qubit_adapt_pool(first)) == 2
    pool = build_pool("QUBIT_ADAPT", "JW", 4)
    assert len(pool) == QUBIT_ADAPT_H4_JW
    strings = [op.generator.strings()[0] for op in pool]
    assert len(set(strings)) == len(strings)
    assert not any(s.is_identity() for s in strings)
    for op in pool:
        assert len(op.generator) == 1 and op.generator.coefficient(strings[op.id]) == 1j
    with pytest.raises(ValueError):
        build_qubit_adapt_pool(pool)


def test_pool_rules():
    with pytest.raises(ValueError):
        build_pool("QEB", "BK", 4)
    with pytest.raises(ValueError):
        PoolKind.parse("nonsense")
    assert PoolKind.parse("qubit-adapt") is PoolKind.QUBIT_ADAPT
    with pytest.raises(ValueError):
        PoolOperator(0, PauliSum.from_label("XY", 1.0), OpKind.QUBIT_STRING)
    with pytest.raises(ValueError):
        PoolOperator(0, PauliSum.zero(2), OpKind.QUBIT_STRING)
    g = PauliSum.from_label("XY", 1j)
    a = PoolOperator(0, g, OpKind.QUBIT_STRING)
    b = PoolOperator(1, g * -1, OpKind.QUBIT_STRING)
    with pytest.raises(ValueError):
        OperatorPool((a, b), MappingScheme.JW, PoolKind.QUBIT_ADAPT, 2)


def test_deterministic_and_manifest():
    a, b = build_pool("FERMIONIC", "JKMN", 4), build_pool("FERMIONIC", "JKMN", 4)
    assert a.manifest() == b.manifest()
    lines = a.manifest().splitlines()
    assert lines[0] == "id\tkind\tsource\tterms\tmax_weight"
    assert lines[1].startswith("0\tFERMIONIC_SINGLE\t0,2\t")
