import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aimadapt.pauli import (PauliString, PauliSum, anticommutator, commutator, is_antihermitian,
                            is_hermitian, multiply, prune)

MATS = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
        "Z": np.diag([1.0, -1.0])}


def dense(label: str) -> np.ndarray:
    """Kronecker product with qubit 0 as the most significant factor."""
    out = np.eye(1)
    for ch in label:
        out = np.kron(out, MATS[ch])
    return out


def labels(n):
    return st.text(alphabet="IXYZ", min_size=n, max_size=n)


def sums(n, max_terms=5):
    coeff = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
    return st.lists(st.tuples(coeff, labels(n)), min_size=1, max_size=max_terms).map(PauliSum.from_labels)


# examples -----------------------------------------------------------------------

def test_multiply_examples():
    assert multiply(PauliString.from_label("X"), PauliString.from_label("Y")) == (1j, PauliString.from_label("Z"))
    assert multiply(PauliString.from_label("Z"), PauliString.from_label("Z")) == (1, PauliString.from_label("I"))
    phase, s = multiply(PauliString.from_label("XY"), PauliString.from_label("YY"))
    assert (phase, s.label) == (1j, "ZI")
    assert np.allclose(phase * dense(s.label), dense("XY") @ dense("YY"))


def test_multiply_length_mismatch():
    with pytest.raises(ValueError):
        multiply(PauliString.from_label("X"), PauliString.from_label("XX"))


def test_commutator_examples():
    c = commutator(PauliSum.from_label("Z"), PauliSum.from_label("X"))
    assert c == PauliSum.from_label("Y", 2j)
    h = PauliSum.from_labels([(0.3, "XZ"), (1.1, "YY"), (-0.2, "IZ")])
    assert len(commutator(h, h)) == 0
    zz = PauliSum.from_labels([(1, "ZI"), (1, "IZ")])
    got = commutator(zz, PauliSum.from_label("XX"))
    assert got == PauliSum.from_labels([(2j, "YX"), (2j, "XY")])
    assert np.allclose(got.to_matrix(), zz.to_matrix() @ dense("XX") - dense("XX") @ zz.to_matrix())


def test_commutator_length_mismatch():
    with pytest.raises(ValueError):
        commutator(PauliSum.from_label("X"), PauliSum.from_label("XX"))


def test_prune_examples(rng):
    a = PauliSum.from_labels([(1e-14, "X"), (1.0, "Z")], tol=0)
    assert len(a) == 2
    assert prune(a, 1e-12) == PauliSum.from_label("Z")
    assert prune(a, 0) is a
    labs = ["".join(rng.choice(list("IXYZ"), 3)) for _ in range(6)]
    r = PauliSum.from_labels(zip(rng.normal(size=6), labs))
    assert len(prune(r - r, 1e-12)) == 0


def test_hermiticity_flags():
    assert is_hermitian(PauliSum.from_label("Z"))
    assert is_antihermitian(PauliSum.from_label("Y", 0.5j))
    assert not is_hermitian(PauliSum.from_label("Y", 0.5j))


def test_weight_and_label_roundtrip():
    s = PauliString.from_label("XIYZ")
    assert s.weight == 3 and s.label == "XIYZ" and s.support == (0, 2, 3)
    assert s.letter(0) == "X" and s.letter(3) == "Z"


def test_text_roundtrip():
    a = PauliSum.from_labels([(0.25, "XXYY"), (-1j, "ZIIZ"), (1 + 2j, "IIII")])
    assert PauliSum.from_text(a.to_text()) == a


def test_term_order_does_not_matter():
    pairs = [(0.5, "XZ"), (-0.25, "YI"), (1.5, "ZZ")]
    assert PauliSum.from_labels(pairs) == PauliSum.from_labels(pairs[::-1])
    assert PauliSum.from_labels(pairs).to_text() == PauliSum.from_labels(pairs[::-1]).to_text()


# properties ---------------------------------------------------------------------

@given(labels(3), labels(3))
def test_multiply_matches_dense(a, b):
    phase, s = multiply(PauliString.from_label(a), PauliString.from_label(b))
    assert phase in (1, -1, 1j, -1j)
    assert np.allclose(phase * dense(s.label), dense(a) @ dense(b), atol=1e-12)


def test_multiply_all_pairs_n2():
    import itertools

    for a, b in itertools.product(("".join(p) for p in itertools.product("IXYZ", repeat=2)), repeat=2):
        phase, s = multiply(PauliString.from_label(a), PauliString.from_label(b))
        assert np.allclose(phase * dense(s.label), dense(a) @ dense(b))


@given(labels(3), labels(3), labels(3))
def test_multiply_associative(a, b, c):
    A, B, C = (PauliString.from_label(x) for x in (a, b, c))
    p1, ab = multiply(A, B)
    p2, left = multiply(ab, C)
    q1, bc = multiply(B, C)
    q2, right = multiply(A, bc)
    assert left == right and np.isclose(p1 * p2, q1 * q2)


@given(labels(4), labels(4))
def test_product_weight_bound(a, b):
    A, B = PauliString.from_label(a), PauliString.from_label(b)
    assert multiply(A, B)[1].weight <= A.weight + B.weight


@given(sums(3), sums(3))
def test_commutator_antisymmetric(a, b):
    assert commutator(a, b) == -commutator(b, a)


@given(sums(3), sums(3), st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False))
def test_arithmetic_matches_dense(a, b, z):
    A, B = a.to_matrix(), b.to_matrix()
    assert np.allclose((a + b).to_matrix(), A + B, atol=1e-12)
    assert np.allclose((a * z).to_matrix(), A * z, atol=1e-12)
    assert np.allclose((a @ b).to_matrix(), A @ B, atol=1e-12)
    assert np.allclose(commutator(a, b).to_matrix(), A @ B - B @ A, atol=1e-12)
    assert np.allclose(anticommutator(a, b).to_matrix(), A @ B + B @ A, atol=1e-12)


@given(sums(2), sums(2))
def test_commutator_hermiticity_rule(a, b):
    h = PauliSum(2, {s: c.real for s, c in a.items()})
    p = PauliSum(2, {s: 1j * c.imag for s, c in b.items()})
    assert is_antihermitian(commutator(h, h @ h))  # trivially empty
    assert is_hermitian(commutator(h, p), tol=1e-10)
