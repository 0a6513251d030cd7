"""Dense statevector engine.

Basis index bit ``N-1-q`` holds qubit ``q``, so ``|1100>`` (qubit 0 leftmost)
is index ``0b1100``.  States are plain complex numpy vectors.
"""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .fermion import IntegralSet, hartree_fock_occupation, number_operator
from .pauli import PauliString, PauliSum, is_hermitian, string_action, to_sparse

log = logging.getLogger(__name__)

MAX_QUBITS = 13
MAX_JOINT_QUBITS = 10


class ReferenceStateError(RuntimeError):
    pass


def basis_state(n_qubits: int, bits) -> np.ndarray:
    """Computational basis state; ``bits[q]`` is the value of qubit ``q``."""
    index = 0
    for b in bits:
        index = (index << 1) | int(b)
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[index] = 1.0
    return psi


def random_state(n_qubits: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    v = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return v / np.linalg.norm(v)


@lru_cache(maxsize=65536)
def _action(s: PauliString):
    return string_action(s)


def apply_string(state: np.ndarray, s: PauliString) -> np.ndarray:
    perm, factor = _action(s)
    return factor * state[perm]


def apply_pauli_sum(state: np.ndarray, op: PauliSum) -> np.ndarray:
    out = np.zeros(state.shape, dtype=complex)
    for s, c in op.items():
        out += c * apply_string(state, s)
    return out


def apply_string_exponential(state: np.ndarray, s: PauliString, theta: float) -> np.ndarray:
    """``exp(i theta S) |psi> = cos(theta) |psi> + i sin(theta) S |psi>``."""
    if theta == 0.0:
        return state.copy()
    return np.cos(theta) * state + (1j * np.sin(theta)) * apply_string(state, s)


def trotter_terms(generator: PauliSum) -> list[tuple[float, PauliString]]:
    """Split ``sum_k i w_k S_k`` into ``[(w_k, S_k)]`` in canonical order."""
    out = []
    for s, c in generator.items():
        if abs(c.real) > 1e-12:
            raise ValueError("gate generator must be anti-Hermitian")
        out.append((c.imag, s))
    return out


def apply_generator(state: np.ndarray, terms, theta: float, inverse: bool = False) -> np.ndarray:
    """One Trotter step ``prod_k exp(i theta w_k S_k)``; ``inverse`` applies its adjoint."""
    if theta == 0.0:
        return state.copy()
    seq = reversed(terms) if inverse else terms
    sign = -1.0 if inverse else 1.0
    for w, s in seq:
        state = apply_string_exponential(state, s, sign * theta * w)
    return state


def apply_pool_gate(state: np.ndarray, op, theta: float) -> np.ndarray:
    return apply_generator(state, op.terms, theta)


def expectation(state: np.ndarray, op) -> complex:
    """``<psi|O|psi>`` for a PauliSum or a (sparse) matrix."""
    if isinstance(op, PauliSum):
        if len(op) > 32:
            op = operator_matrix(op)
        else:
            return complex(np.vdot(state, apply_pauli_sum(state, op)))
    return complex(np.vdot(state, op @ state))


_MATRIX_CACHE: dict[int, tuple[PauliSum, sp.csr_matrix]] = {}


def operator_matrix(op: PauliSum) -> sp.csr_matrix:
    """Sparse matrix of ``op``, memoised on object identity."""
    hit = _MATRIX_CACHE.get(id(op))
    if hit is not None and hit[0] is op:
        return hit[1]
    m = to_sparse(op)
    if len(_MATRIX_CACHE) > 4096:
        _MATRIX_CACHE.clear()
    _MATRIX_CACHE[id(op)] = (op, m)
    return m


def exact_ground_energy(h: PauliSum) -> tuple[float, np.ndarray]:
    if h.n_qubits > MAX_QUBITS:
        raise ValueError(f"dense diagonalisation is capped at {MAX_QUBITS} qubits")
    if not is_hermitian(h, tol=1e-10):
        raise ValueError("Hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(to_sparse(h).toarray())
    return float(w[0]), v[:, 0]


def occupation_projector_ground_state(scheme, occupation) -> np.ndarray:
    """Unique ground state of ``sum_p (n_p - occ_p)^2``.

    Found by projecting basis states (lowest index first) with
    ``prod_p (occ_p ? n_p : 1 - n_p)``; the first nonzero projection is the state.
    """
    n = len(occupation)
    dim = 1 << n
    projs = []
    diagonal = True
    for p, o in enumerate(occupation):
        num = number_operator(p, scheme, n)
        diagonal &= all(s.x == 0 for s in num.strings())
        proj = num if o else PauliSum.identity(n) - num
        projs.append(to_sparse(proj))
    if diagonal:
        d = np.ones(dim)
        for m in projs:
            d = d * m.diagonal().real
        hits = np.flatnonzero(d > 0.5)
        if len(hits) != 1:
            raise ReferenceStateError("occupation constraints do not single out a basis state")
        psi = np.zeros(dim, dtype=complex)
        psi[hits[0]] = 1.0
        return psi
    for index in range(dim):
        v = np.zeros(dim, dtype=complex)
        v[index] = 1.0
        for m in projs:
            v = m @ v
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            v = v / norm
            k = np.argmax(np.abs(v))
            v = v * (abs(v[k]) / v[k])
            if np.count_nonzero(np.abs(v) > 1e-12) > 1:
                log.info("reference state for %s is not a computational basis state", scheme)
            return v
    raise ReferenceStateError("no state satisfies the occupation constraints")


def prepare_reference(ints: IntegralSet | int, scheme, n_electrons: int | None = None) -> np.ndarray:
    """Hartree-Fock reference: aufbau filling of the ingested orbital order."""
    n = ints if isinstance(ints, int) else ints.n_spin_orbitals
    if n_electrons is None:
        n_electrons = ints.n_electrons
    occ = hartree_fock_occupation(n_electrons, n)
    return occupation_projector_ground_state(scheme, occ)


# POVM sampling ---------------------------------------------------------------

def joint_distribution(state: np.ndarray, effects) -> np.ndarray:
    """Outcome probabilities ``p[m_0, ..., m_{N-1}]`` for per-qubit effect stacks.

    ``effects[q]`` has shape ``(4, 2, 2)``.
    """
    n = len(effects)
    psi = state.reshape((2,) * n)
    rho = np.multiply.outer(psi, psi.conj())  # axes: a_0..a_{n-1}, b_0..b_{n-1}
    order = [ax for q in range(n) for ax in (q, q + n)]
    rho = rho.transpose(order).reshape((4,) * n)
    t = rho
    for q in range(n):
        # Tr[rho Pi] = sum_ab rho_ab Pi_ba
        m = effects[q].transpose(0, 2, 1).reshape(4, 4)
        t = _apply_axis(t, m, q)
    p = t.real
    p[p < 0] = 0.0
    return p / p.sum()


def _apply_axis(t: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    shape = t.shape
    left = int(np.prod(shape[:axis], dtype=np.int64))
    out = np.matmul(m, t.reshape(left, shape[axis], -1))
    return out.reshape(shape[:axis] + (m.shape[0],) + shape[axis + 1:])


def sample_joint(state: np.ndarray, effects, n_shots: int, rng) -> np.ndarray:
    """Flat outcome indices ``sum_q m_q 4**(N-1-q)`` from the full joint table."""
    p = joint_distribution(state, effects).ravel()
    # multinomial counts in uniformly random order: an i.i.d. sequence, ~7x faster than choice
    counts = rng.multinomial(n_shots, p)
    return rng.permutation(np.repeat(np.arange(p.size, dtype=np.int64), counts))


def sample_sequential(state: np.ndarray, effects, n_shots: int, rng) -> np.ndarray:
    """Qubit-by-qubit sampling with Kraus operators ``sqrt(Pi_m)``.

    Shots sharing an outcome prefix are carried together: the branch count is
    split multinomially at every qubit.
    """
    from scipy.linalg import sqrtm

    n = len(effects)
    kraus = [[np.asarray(sqrtm(e[m]), dtype=complex) for m in range(4)] for e in effects]
    out: list[np.ndarray] = []

    def descend(psi, q, prefix, count):
        if q == n:
            out.append(np.full(count, prefix, dtype=np.int64))
            return
        t = psi.reshape(1 << q, 2, -1)
        branches = [np.matmul(kraus[q][m], t) for m in range(4)]
        probs = np.array([np.vdot(b, b).real for b in branches])
        probs = np.clip(probs, 0, None)
        counts = rng.multinomial(count, probs / probs.sum())
        for m in range(4):
            if counts[m]:
                nxt = branches[m].reshape(-1)
                descend(nxt / np.linalg.norm(nxt), q + 1, prefix * 4 + m, int(counts[m]))

    descend(np.asarray(state, dtype=complex), 0, 0, n_shots)
    flat = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
    return rng.permutation(flat)


def sample_povm(state: np.ndarray, povm, n_shots: int, rng_seed=None, method: str = "auto"):
    """Draw ``n_shots`` i.i.d. outcomes of the product POVM on ``state``."""
    from .povm import ShotRecord

    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    povm.validate()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = povm.n_qubits
    if method == "auto":
        method = "joint" if n <= MAX_JOINT_QUBITS else "sequential"
    effects = povm.effect_stack()
    if method == "joint":
        flat = sample_joint(state, effects, n_shots, rng)
    elif method == "sequential":
        flat = sample_sequential(state, effects, n_shots, rng)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else None
    return ShotRecord(flat, n, povm.fingerprint, seed)
