"""Informationally complete product POVMs and Monte-Carlo estimation from shared shots.

A single-qubit POVM comes from a qubit+ancilla dilation ``U``: the qubit is
coupled to an ancilla in ``|0>`` and both are read out, giving four rank-one
effects ``Pi_m = v_m^dag v_m`` with ``v_m = U[m, [0, 2]]``.  ``U`` is
``expm(A(params)) @ U_sic`` where ``A`` is the anti-Hermitian matrix built
from 16 real parameters, so ``params = 0`` is the tetrahedral SIC POVM.

Dual tables ``b[sigma][m]`` (sigma in I, X, Y, Z) solve
``sigma = sum_m b[sigma][m] Pi_m``.  For an observable ``O = sum_k c_k S_k`` the
per-outcome weight is ``omega_m = sum_k c_k prod_i b_i[S_k[i]][m_i]``.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm, null_space

from .pauli import PauliSum, is_hermitian
from .simulator import MAX_JOINT_QUBITS, _apply_axis, joint_distribution

log = logging.getLogger(__name__)

PAULI_MATRICES = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

IC_COND_LIMIT = 1e8
SIC_VECTORS = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / math.sqrt(3)


class NotInformationallyComplete(ValueError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"POVM is not informationally complete (condition number {cond:.3g})")


class StaleShotsError(ValueError):
    pass


# Single-qubit POVMs ----------------------------------------------------------

def _bloch_ket(r) -> np.ndarray:
    rho = 0.5 * (PAULI_MATRICES[0] + np.tensordot(r, PAULI_MATRICES[1:], axes=1))
    w, v = np.linalg.eigh(rho)
    return v[:, -1]


def _sic_dilation() -> np.ndarray:
    v = np.array([_bloch_ket(r).conj() / math.sqrt(2) for r in SIC_VECTORS])
    w = null_space(v.conj().T)
    u = np.zeros((4, 4), dtype=complex)
    u[:, [0, 2]] = v
    u[:, [1, 3]] = w
    return u


U_SIC = _sic_dilation()
N_PARAMS = 16


def antihermitian(params: np.ndarray) -> np.ndarray:
    """4x4 anti-Hermitian matrix from 16 reals (4 diagonal, 6 complex off-diagonal)."""
    a = np.zeros((4, 4), dtype=complex)
    a[np.diag_indices(4)] = 1j * params[:4]
    k = 4
    for i in range(4):
        for j in range(i + 1, 4):
            z = params[k] + 1j * params[k + 1]
            a[i, j] = z
            a[j, i] = -np.conj(z)
            k += 2
    return a


def effects_from_params(params) -> np.ndarray:
    u = expm(antihermitian(np.asarray(params, dtype=float))) @ U_SIC
    v = u[:, [0, 2]]
    return np.einsum("mi,mj->mij", v.conj(), v)


def frame_matrix(effects: np.ndarray) -> np.ndarray:
    """``A[m][sigma] = Tr(Pi_m sigma) / 2`` so ``Pi_m = sum_sigma A[m][sigma] sigma``."""
    return np.einsum("mij,sji->ms", effects, PAULI_MATRICES).real / 2


@dataclass(frozen=True, eq=False)
class SingleQubitPOVM:
    effects: np.ndarray
    params: np.ndarray | None = None

    @classmethod
    def from_params(cls, params) -> "SingleQubitPOVM":
        params = np.asarray(params, dtype=float).copy()
        return cls(effects_from_params(params), params)

    @classmethod
    def from_effects(cls, effects) -> "SingleQubitPOVM":
        return cls(np.asarray(effects, dtype=complex))

    def validate(self, tol: float = 1e-10):
        e = self.effects
        if e.shape != (4, 2, 2):
            raise ValueError("a single-qubit POVM needs four 2x2 effects")
        if not np.allclose(e, e.conj().transpose(0, 2, 1), atol=tol):
            raise ValueError("POVM effects must be Hermitian")
        if np.linalg.norm(e.sum(axis=0) - np.eye(2)) > tol:
            raise ValueError("POVM effects must sum to the identity")
        if min(np.linalg.eigvalsh(m).min() for m in e) < -1e-12:
            raise ValueError("POVM effects must be positive semidefinite")

    @property
    def frame(self) -> np.ndarray:
        return frame_matrix(self.effects)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.frame))

    @property
    def is_ic(self) -> bool:
        return self.condition_number < IC_COND_LIMIT


def default_sic() -> SingleQubitPOVM:
    """Tetrahedral SIC: ``Pi_m = (I + r_m . sigma) / 4``."""
    return SingleQubitPOVM.from_params(np.zeros(N_PARAMS))


def computational_refinement() -> SingleQubitPOVM:
    """``{|0><0|/2, |0><0|/2, |1><1|/2, |1><1|/2}``: valid but not IC."""
    p0 = np.diag([0.5, 0]).astype(complex)
    p1 = np.diag([0, 0.5]).astype(complex)
    return SingleQubitPOVM.from_effects([p0, p0, p1, p1])


def compute_duals(p: SingleQubitPOVM) -> np.ndarray:
    """Dual table ``b[sigma][m]`` with ``sigma = sum_m b[sigma][m] Pi_m``."""
    a = p.frame
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond >= IC_COND_LIMIT:
        raise NotInformationallyComplete(cond)
    # sum_m b[s][m] A[m][t] = delta_st
    return np.linalg.inv(a)


def reconstruction_residual(p: SingleQubitPOVM, duals: np.ndarray) -> float:
    rec = np.einsum("sm,mij->sij", duals, p.effects)
    return float(np.abs(rec - PAULI_MATRICES).max())


class ProductPOVM:
    """Per-qubit POVMs with cached dual tables and a content fingerprint."""

    def __init__(self, qubits: Sequence[SingleQubitPOVM]):
        self.qubits = tuple(qubits)
        self.n_qubits = len(self.qubits)
        stack = np.stack([q.effects for q in self.qubits])
        self._effects = stack
        digest = hashlib.sha256(np.round(stack, 12).tobytes()).hexdigest()
        self.fingerprint = digest[:16]
        self._duals = None

    @classmethod
    def sic(cls, n_qubits: int) -> "ProductPOVM":
        return cls([default_sic()] * n_qubits)

    @classmethod
    def from_params(cls, params: np.ndarray) -> "ProductPOVM":
        params = np.asarray(params, dtype=float).reshape(-1, N_PARAMS)
        return cls([SingleQubitPOVM.from_params(p) for p in params])

    @property
    def params(self) -> np.ndarray:
        if any(q.params is None for q in self.qubits):
            raise ValueError("POVM was not built from dilation parameters")
        return np.stack([q.params for q in self.qubits])

    def effect_stack(self) -> np.ndarray:
        return self._effects

    def validate(self):
        for q in self.qubits:
            q.validate()

    @property
    def is_ic(self) -> bool:
        return all(q.is_ic for q in self.qubits)

    @property
    def duals(self) -> np.ndarray:
        """Shape ``(N, 4, 4)``; raises for non-IC POVMs."""
        if self._duals is None:
            self._duals = np.stack([compute_duals(q) for q in self.qubits])
        return self._duals

    @property
    def frames(self) -> np.ndarray:
        return np.stack([q.frame for q in self.qubits])

    def max_residual(self) -> float:
        return max(reconstruction_residual(q, d) for q, d in zip(self.qubits, self.duals))

    def __eq__(self, other):
        return isinstance(other, ProductPOVM) and other.fingerprint == self.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return f"ProductPOVM(n_qubits={self.n_qubits}, fingerprint={self.fingerprint})"


# Shots -------------------------------------------------------------------------

class ShotRecord:
    """Outcomes of one batch; ``flat[s] = sum_q m_q 4**(N-1-q)``."""

    def __init__(self, flat, n_qubits: int, povm_fingerprint: str, seed=None):
        self.flat = np.asarray(flat, dtype=np.int64)
        self.flat.setflags(write=False)
        self.n_qubits = n_qubits
        self.povm_fingerprint = povm_fingerprint
        self.seed = seed
        self._counts = None

    @classmethod
    def from_outcomes(cls, outcomes, povm_fingerprint: str, seed=None) -> "ShotRecord":
        arr = np.asarray(outcomes, dtype=np.int64)
        n = arr.shape[1]
        weights = 4 ** np.arange(n - 1, -1, -1)
        return cls(arr @ weights, n, povm_fingerprint, seed)

    def __len__(self):
        return len(self.flat)

    @property
    def outcomes(self) -> np.ndarray:
        """``(S, N)`` array of per-qubit outcomes in ``0..3``."""
        n = self.n_qubits
        return (self.flat[:, None] // (4 ** np.arange(n - 1, -1, -1))) % 4

    def counts(self) -> np.ndarray:
        if self._counts is None:
            self._counts = np.bincount(self.flat, minlength=4 ** self.n_qubits).astype(float)
        return self._counts

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# povm {self.povm_fingerprint} qubits {self.n_qubits} seed {self.seed}\n")
        for row in self.outcomes:
            buf.write("".join(map(str, row)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ShotRecord":
        lines = text.strip().splitlines()
        head = lines[0].split()
        fp, n, seed = head[2], int(head[4]), head[6]
        rows = [[int(ch) for ch in line.strip()] for line in lines[1:] if line.strip()]
        rec = cls.from_outcomes(np.array(rows).reshape(-1, n), fp, None if seed == "None" else int(seed))
        return rec


# Weight tensors -----------------------------------------------------------------

_LETTER_CODE = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}


def letter_codes(op: PauliSum) -> tuple[np.ndarray, np.ndarray]:
    """``(codes, coeffs)``: per-term letter indices (K, N) in I, X, Y, Z order."""
    n = op.n_qubits
    rows, coeffs = [], []
    for s, c in op.items():
        rows.append([_LETTER_CODE[((s.x >> q) & 1, (s.z >> q) & 1)] for q in range(n)])
        coeffs.append(c)
    return np.array(rows, dtype=np.int64).reshape(-1, n), np.array(coeffs, dtype=complex)


def coefficient_tensor(op: PauliSum) -> np.ndarray:
    """Real Pauli coefficients of a Hermitian operator as a ``(4,)*N`` tensor."""
    n = op.n_qubits
    codes, coeffs = letter_codes(op)
    t = np.zeros(4 ** n)
    if len(coeffs):
        flat = codes @ (4 ** np.arange(n - 1, -1, -1))
        np.add.at(t, flat, coeffs.real)
    return t.reshape((4,) * n)


def transform(t: np.ndarray, mats) -> np.ndarray:
    """Apply ``mats[q]`` along axis ``q`` of ``t`` for every qubit."""
    for q, m in enumerate(mats):
        t = _apply_axis(t, m, q)
    return t


def weight_tensor(op_tensor: np.ndarray, duals: np.ndarray) -> np.ndarray:
    """``omega[m] = sum_sigma C[sigma] prod_q b_q[sigma_q][m_q]``."""
    return transform(op_tensor, [d.T for d in duals])


def per_shot_weights(op: PauliSum, povm: ProductPOVM, record: ShotRecord) -> np.ndarray:
    """Reference path: per-shot lookups ``b_q[S_k[q]][m_{s,q}]`` multiplied term by term."""
    _check_hermitian(op)
    duals = povm.duals
    out = record.outcomes
    lookups = [duals[q][:, out[:, q]] for q in range(record.n_qubits)]  # each (4, S)
    codes, coeffs = letter_codes(op)
    w = np.zeros(len(record))
    for row, c in zip(codes, coeffs.real):
        term = np.full(len(record), c)
        for q, code in enumerate(row):
            if code:
                term = term * lookups[q][code]
        w += term
    return w


def _check_hermitian(op: PauliSum):
    if not is_hermitian(op, tol=1e-10):
        raise ValueError("estimation needs a Hermitian observable")


# Pooled estimation over batches --------------------------------------------------

@dataclass
class Estimate:
    mean: float
    std_error: float
    n_shots: int

    def __iter__(self):
        return iter((self.mean, self.std_error))


class MeasurementData:
    """Ordered batches ``(povm, record)``; mixed POVMs are pooled shot by shot."""

    def __init__(self, n_qubits: int):
        self.n_qubits = n_qubits
        self.batches: list[tuple[ProductPOVM, ShotRecord]] = []
        self._shadow = None
        self._shadow_upto = 0

    @classmethod
    def single(cls, povm: ProductPOVM, record: ShotRecord) -> "MeasurementData":
        data = cls(record.n_qubits)
        data.add(povm, record)
        return data

    def add(self, povm: ProductPOVM, record: ShotRecord):
        if record.povm_fingerprint != povm.fingerprint:
            raise StaleShotsError("shot record was produced by a different POVM")
        if record.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        povm.duals  # refuse non-IC data up front
        self.batches.append((povm, record))

    @property
    def n_shots(self) -> int:
        return sum(len(r) for _, r in self.batches)

    def shadow(self) -> np.ndarray:
        """Pauli-space sums ``T[sigma] = sum_s prod_q b_q[sigma_q][m_{s,q}]``."""
        if self._shadow is None:
            self._shadow = np.zeros((4,) * self.n_qubits)
        for povm, rec in self.batches[self._shadow_upto:]:
            counts = rec.counts().reshape((4,) * self.n_qubits)
            self._shadow = self._shadow + transform(counts, list(povm.duals))
        self._shadow_upto = len(self.batches)
        return self._shadow


def _as_data(povm: ProductPOVM | None, shots) -> MeasurementData:
    if isinstance(shots, MeasurementData):
        return shots
    if povm is None:
        raise ValueError("a POVM is needed to interpret a bare shot record")
    if shots.povm_fingerprint != povm.fingerprint:
        raise StaleShotsError("shot record fingerprint does not match the POVM")
    return MeasurementData.single(povm, shots)


class RunningEstimates:
    """Incremental first/second moments of ``omega`` for a fixed observable list.

    Weight tensors are cached for the most recent POVM, so consecutive batches
    under one POVM cost a dot product per observable.
    """

    def __init__(self, observables: Sequence[PauliSum], n_qubits: int):
        for o in observables:
            _check_hermitian(o)
        self.observables = list(observables)
        self.n_qubits = n_qubits
        self._tensors = None
        self.s1 = np.zeros(len(self.observables))
        self.s2 = np.zeros(len(self.observables))
        self.n = 0
        self._seen = 0
        self._cache_fp = None
        self._cache = None
        self.use_joint = n_qubits <= MAX_JOINT_QUBITS

    def _weights(self, povm: ProductPOVM):
        if povm.fingerprint != self._cache_fp:
            if self._tensors is None:
                self._tensors = [coefficient_tensor(o) for o in self.observables]
            duals = povm.duals
            self._cache = [weight_tensor(t, duals).ravel() for t in self._tensors]
            self._cache_fp = povm.fingerprint
        return self._cache

    def update(self, data: MeasurementData):
        for povm, rec in data.batches[self._seen:]:
            if self.use_joint:
                counts = rec.counts()
                for k, w in enumerate(self._weights(povm)):
                    cw = counts * w
                    self.s1[k] += cw.sum()
                    self.s2[k] += (cw * w).sum()
            else:
                for k, o in enumerate(self.observables):
                    w = per_shot_weights(o, povm, rec)
                    self.s1[k] += w.sum()
                    self.s2[k] += (w * w).sum()
            self.n += len(rec)
        self._seen = len(data.batches)
        return self

    def variances(self) -> np.ndarray:
        """Per-shot ``<omega^2> - <omega>^2`` for every observable."""
        mean = self.s1 / self.n
        return np.maximum(self.s2 / self.n - mean * mean, 0.0)

    def results(self) -> list[Estimate]:
        if self.n == 0:
            raise ValueError("no shots")
        mean = self.s1 / self.n
        se = np.sqrt(self.variances() / self.n)
        return [Estimate(float(m), float(e), self.n) for m, e in zip(mean, se)]


def estimate_many(observables: Sequence[PauliSum], povm: ProductPOVM | None, shots) -> list[Estimate]:
    """``(mean, std_error)`` per observable from one shared set of shots."""
    data = _as_data(povm, shots)
    return RunningEstimates(observables, data.n_qubits).update(data).results()


def estimate(op: PauliSum, povm: ProductPOVM | None, shots) -> Estimate:
    return estimate_many([op], povm, shots)[0]


def epsilon_E(h: PauliSum, povm: ProductPOVM | None, shots) -> float:
    """Per-shot standard deviation of the energy estimator (not divided by sqrt(S))."""
    data = _as_data(povm, shots)
    return float(np.sqrt(RunningEstimates([h], data.n_qubits).update(data).variances()[0]))


def candidate_variance(h: PauliSum, candidate: ProductPOVM, current: ProductPOVM | None,
                       shots, h_tensor: np.ndarray | None = None) -> float:
    """Data-driven estimate of ``<omega'^2> - E^2`` had ``candidate`` been used.

    The candidate's outcome probabilities are linear functionals of the state,
    ``p'_m = sum_sigma A'[m][sigma] <sigma>``, and the Pauli expectations are
    estimated from the recorded shots through their own POVMs' duals.
    """
    data = _as_data(current, shots)
    if all(p.fingerprint == candidate.fingerprint for p, _ in data.batches):
        return float(RunningEstimates([h], data.n_qubits).update(data).variances()[0])
    if data.n_qubits > MAX_JOINT_QUBITS:
        raise NotImplementedError("candidate variances need the joint-table path (N <= 10)")
    candidate.duals  # raises for non-IC candidates
    if h_tensor is None:
        h_tensor = coefficient_tensor(h)
    t = data.shadow() / data.n_shots
    return _second_moment(h_tensor, t, candidate.duals, candidate.frames)


def _second_moment(h_tensor, t, duals, frames) -> float:
    omega = weight_tensor(h_tensor, duals)
    p = transform(t, list(frames))
    e = float((omega * p).sum())
    return float((omega * omega * p).sum()) - e * e


def exact_moments(h: PauliSum, povm: ProductPOVM, state: np.ndarray) -> tuple[float, float]:
    """Exact ``(<omega>, epsilon_E)`` from the full outcome distribution."""
    _check_hermitian(h)
    p = joint_distribution(state, povm.effect_stack())
    w = weight_tensor(coefficient_tensor(h), povm.duals)
    mean = float((p * w).sum())
    var = float((p * w * w).sum()) - mean * mean
    return mean, math.sqrt(max(var, 0.0))


# Adaptive optimisation -----------------------------------------------------------

@dataclass
class MeasurementSchedule:
    initial_batch: int = 512
    growth_factor: float = 1.5
    max_shots: int = 200_000

    def __post_init__(self):
        if self.initial_batch < 1 or self.growth_factor < 1 or self.max_shots < self.initial_batch:
            raise ValueError("invalid measurement schedule")

    def batches(self):
        """Nondecreasing batch sizes whose total never exceeds ``max_shots``."""
        total, k = 0, 0
        while total < self.max_shots:
            size = int(round(self.initial_batch * self.growth_factor ** k))
            size = min(size, self.max_shots - total)
            yield size
            total += size
            k += 1


@dataclass
class EnergyStop:
    """Stop once the energy standard error reaches ``threshold`` (Hartree)."""

    threshold: float
    needs_observables = False

    def __call__(self, energy: Estimate, observables) -> bool:
        return energy.std_error <= self.threshold


@dataclass
class POVMOptimiserSettings:
    fd_step: float = 1e-3
    step0: float = 1.0
    halvings: int = 12
    max_increases: int = 10
    optimise: bool = True


@dataclass
class TraceRow:
    batch: int
    shots: int
    energy: float
    std_error: float
    eps_E: float
    step: float
    events: str = ""


@dataclass
class MeasurementResult:
    best_povm: ProductPOVM
    last_povm: ProductPOVM
    data: MeasurementData
    energy: Estimate
    observables: list[Estimate] | None
    eps_E: float
    trace: list[TraceRow] = field(default_factory=list)
    exhausted: bool = False

    @property
    def n_shots(self) -> int:
        return self.data.n_shots


class _VarianceModel:
    """Candidate second moments with per-qubit factorisation for cheap gradients."""

    def __init__(self, h_tensor: np.ndarray, t: np.ndarray):
        self.h = h_tensor
        self.t = t
        self.n = h_tensor.ndim

    def value(self, params: np.ndarray) -> float:
        povm = ProductPOVM.from_params(params)
        try:
            duals = povm.duals
        except NotInformationallyComplete:
            return math.inf
        return _second_moment(self.h, self.t, duals, povm.frames)

    def gradient(self, params: np.ndarray, h: float) -> np.ndarray:
        n = self.n
        qubits = [SingleQubitPOVM.from_params(p) for p in params]
        duals = [compute_duals(q) for q in qubits]
        frames = [q.frame for q in qubits]
        grad = np.zeros_like(params)
        for j in range(n):
            w, p = self.h, self.t
            for q in range(n):
                if q != j:
                    w = _apply_axis(w, duals[q].T, q)
                    p = _apply_axis(p, frames[q], q)
            w = np.moveaxis(w, j, 0).reshape(4, -1)
            p = np.moveaxis(p, j, 0).reshape(4, -1)
            k = np.einsum("ar,br,cr->abc", w, w, p, optimize=True)
            e_vec = w @ p.T  # for the invariant mean term

            def local(x):
                qp = SingleQubitPOVM.from_params(x)
                b = compute_duals(qp)
                a = qp.frame
                f = np.einsum("sm,um,mt,sut->", b, b, a, k)
                e = np.einsum("sm,mt,st->", b, a, e_vec)
                return f - e * e

            base = params[j].copy()
            for i in range(N_PARAMS):
                x = base.copy()
                x[i] += h
                up = local(x)
                x[i] -= 2 * h
                down = local(x)
                grad[j, i] = (up - down) / (2 * h)
        return grad


def _povm_step(h_tensor, data: MeasurementData, povm: ProductPOVM, current_var: float,
               settings: POVMOptimiserSettings) -> tuple[ProductPOVM, float, float]:
    """One gradient + line-search update; returns ``(povm, variance, step)``."""
    params = povm.params
    t = data.shadow() / data.n_shots
    model = _VarianceModel(h_tensor, t)
    try:
        grad = model.gradient(params, settings.fd_step)
    except NotInformationallyComplete:
        return povm, current_var, 0.0
    norm = np.linalg.norm(grad)
    if not np.isfinite(norm) or norm == 0:
        return povm, current_var, 0.0
    direction = -grad / norm
    best = (current_var, 0.0, params)
    for j in range(settings.halvings + 1):
        step = settings.step0 * 2.0 ** -j
        cand = params + step * direction
        v = model.value(cand)
        if 0 < v < best[0]:
            best = (v, step, cand)
    if best[1] == 0.0:
        return povm, current_var, 0.0
    return ProductPOVM.from_params(best[2]), best[0], best[1]


def optimise_povm(h: PauliSum, sampler: Callable, schedule: MeasurementSchedule, stop,
                  prior: ProductPOVM | None = None, rng=None,
                  observables: Sequence[PauliSum] = (),
                  settings: POVMOptimiserSettings | None = None) -> MeasurementResult:
    """Measure in batches, re-optimising the POVM between batches.

    ``sampler(povm, n_shots, rng)`` returns a ShotRecord of the current state.
    ``stop(energy_estimate, observable_estimates)`` ends the loop; observable
    estimates are only computed each batch if ``stop.needs_observables``.
    """
    settings = settings or POVMOptimiserSettings()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = h.n_qubits
    sic = ProductPOVM.sic(n)
    povm = prior if prior is not None else sic
    h_tensor = coefficient_tensor(h) if n <= MAX_JOINT_QUBITS else None
    can_optimise = settings.optimise and n <= MAX_JOINT_QUBITS
    data = MeasurementData(n)
    energy_acc = RunningEstimates([h], n)
    obs_acc = RunningEstimates(observables, n) if observables else None
    live_obs = bool(getattr(stop, "needs_observables", False)) and obs_acc is not None

    history = [povm]
    best_eps, best_povm = math.inf, povm
    prev_eps = None
    streak = increases = 0
    frozen = not can_optimise
    trace: list[TraceRow] = []
    exhausted = True
    obs_results = None
    energy = None
    eps = math.nan

    for b, size in enumerate(schedule.batches()):
        events = []
        record = sampler(povm, size, rng)
        data.add(povm, record)
        energy = energy_acc.update(data).results()[0]
        if live_obs:
            obs_results = obs_acc.update(data).results()

        eps = math.sqrt(max(candidate_variance(h, povm, None, data, h_tensor), 0.0))
        if b == 0 and prior is not None and prior != sic:
            eps_sic = math.sqrt(max(candidate_variance(h, sic, None, data, h_tensor), 0.0))
            if eps > eps_sic:
                events.append("prior_reset_to_sic")
                povm, eps = sic, eps_sic
                history = [sic]
        if eps < best_eps:
            best_eps, best_povm = eps, povm

        if stop(energy, obs_results):
            trace.append(TraceRow(b, data.n_shots, energy.mean, energy.std_error, eps, 0.0, ";".join(events)))
            exhausted = False
            break

        if prev_eps is not None and eps > prev_eps and not frozen:
            increases += 1
            streak += 1
            if increases >= settings.max_increases:
                frozen = True
                povm = best_povm
                events.append("frozen")
            elif streak >= 2:
                back = max(len(history) - 3, 0)
                history = history[: back + 1]
                povm = history[-1]
                streak = 0
                events.append("reset_back_two")
        else:
            streak = 0
        prev_eps = eps

        step = 0.0
        if not frozen and "reset_back_two" not in events:
            cur_var = candidate_variance(h, povm, None, data, h_tensor)
            if povm.qubits[0].params is not None:
                new, _, step = _povm_step(h_tensor, data, povm, cur_var, settings)
                if step > 0:
                    povm = new
                    history.append(new)
        trace.append(TraceRow(b, data.n_shots, energy.mean, energy.std_error, eps, step, ";".join(events)))

    if obs_acc is not None:
        obs_results = obs_acc.update(data).results()
    return MeasurementResult(best_povm, povm, data, energy, obs_results, eps, trace, exhausted)


def trace_csv(trace: Sequence[TraceRow]) -> str:
    lines = ["# schema: aimadapt-povm-trace v1",
             "batch,shots,energy,std_error,eps_E,step,events"]
    for r in trace:
        lines.append(f"{r.batch},{r.shots},{r.energy:.12g},{r.std_error:.12g},{r.eps_E:.12g},{r.step:.6g},{r.events}")
    return "\n".join(lines) + "\n"
