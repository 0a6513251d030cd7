"""ADAPT-VQE driver with operator screening from reusable IC measurement data.

Ansatz optimisation and Rotosolve run on the exact statevector; only the
operator selection (gradients and stopping) consumes simulated shots.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .fermion import IntegralSet, MappingScheme, build_hamiltonian
from .pauli import PauliSum, commutator, is_hermitian
from .pools import OperatorPool, OpKind, PoolKind, PoolOperator, build_pool
from .povm import (EnergyStop, Estimate, MeasurementSchedule, POVMOptimiserSettings,
                   ProductPOVM, optimise_povm)
from .simulator import (apply_generator, apply_string, exact_ground_energy, expectation,
                        operator_matrix, prepare_reference, sample_povm)

log = logging.getLogger(__name__)

CHEMICAL_PRECISION = 1.6e-3


# Ansatz ------------------------------------------------------------------------

@dataclass
class AnsatzState:
    reference: np.ndarray
    gates: list[tuple[int, float]] = field(default_factory=list)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.gates]

    @property
    def thetas(self) -> np.ndarray:
        return np.array([t for _, t in self.gates], dtype=float)

    def with_thetas(self, thetas) -> "AnsatzState":
        return AnsatzState(self.reference, [(i, float(t)) for (i, _), t in zip(self.gates, thetas)])

    def append(self, op_id: int, theta: float) -> "AnsatzState":
        return AnsatzState(self.reference, self.gates + [(op_id, float(theta))])

    def state(self, pool: OperatorPool, thetas=None) -> np.ndarray:
        thetas = self.thetas if thetas is None else thetas
        psi = self.reference
        for (i, _), t in zip(self.gates, thetas):
            psi = apply_generator(psi, pool[i].terms, t)
        return psi

    def manifest(self, pool: OperatorPool, costs: "CnotCosts | None" = None) -> str:
        lines = ["# schema: aimadapt-ansatz v1", "position,pool_id,kind,theta"]
        for k, (i, t) in enumerate(self.gates):
            lines.append(f"{k},{i},{pool[i].kind.value},{t:.15g}")
        lines.append(f"# cnot_count {cnot_count(self, pool, costs)}")
        return "\n".join(lines) + "\n"


def _energy(h, psi) -> float:
    m = operator_matrix(h) if isinstance(h, PauliSum) else h
    return float(np.vdot(psi, m @ psi).real)


def energy_and_gradient(h, pool: OperatorPool, ansatz: AnsatzState, thetas) -> tuple[float, np.ndarray]:
    """Energy and all ``dE/dtheta_i`` by one forward and one adjoint sweep."""
    m = operator_matrix(h) if isinstance(h, PauliSum) else h
    ops = [pool[i] for i in ansatz.ids]
    psi = ansatz.reference
    for op, t in zip(ops, thetas):
        psi = apply_generator(psi, op.terms, t)
    lam = m @ psi
    e = float(np.vdot(psi, lam).real)
    grad = np.zeros(len(ops))
    phi = psi
    for i in range(len(ops) - 1, -1, -1):
        op, t = ops[i], thetas[i]
        p_phi = np.zeros_like(phi)
        for w, s in op.terms:
            p_phi += (1j * w) * apply_string(phi, s)
        grad[i] = 2 * np.vdot(lam, p_phi).real
        phi = apply_generator(phi, op.terms, t, inverse=True)
        lam = apply_generator(lam, op.terms, t, inverse=True)
    return e, grad


def ansatz_gradient(h, pool: OperatorPool, ansatz: AnsatzState, thetas=None) -> np.ndarray:
    thetas = ansatz.thetas if thetas is None else np.asarray(thetas, dtype=float)
    return energy_and_gradient(h, pool, ansatz, thetas)[1]


def optimise_ansatz(h, pool: OperatorPool, ansatz: AnsatzState, theta0=None,
                    gtol: float = 1e-7, maxiter: int = 500) -> tuple[np.ndarray, float]:
    """L-BFGS-B on all parameters; returns the best parameters seen and their energy."""
    theta0 = ansatz.thetas if theta0 is None else np.asarray(theta0, dtype=float)
    if len(theta0) == 0:
        return theta0, _energy(h, ansatz.reference)
    best = [math.inf, theta0.copy()]

    def fun(x):
        e, g = energy_and_gradient(h, pool, ansatz, x)
        if not math.isfinite(e):
            raise FloatingPointError("non-finite energy during ansatz optimisation")
        if e < best[0]:
            best[0], best[1] = e, x.copy()
        return e, g

    e0, g0 = fun(theta0)
    if np.max(np.abs(g0)) < gtol:
        return theta0.copy(), e0
    bounds = [(-2 * math.pi, 2 * math.pi)] * len(theta0)
    minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
             options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-15, "maxcor": 30})
    return best[1], best[0]


# Rotosolve -------------------------------------------------------------------

def _wrap(theta: float, period: float) -> float:
    """Map into ``(-period/2, period/2]``."""
    half = period / 2
    t = (theta + half) % period - half
    if t <= -half + 1e-15:
        t += period
    return t


def rotosolve(energy: Callable[[float], float], tol: float = 1e-6) -> float:
    """Minimiser of ``E(theta) = A + B cos 2theta + C sin 2theta`` from three probes.

    If a fourth probe at ``pi/8`` disagrees with the fitted sinusoid, fall back
    to a 64-point scan on ``(-pi, pi]`` refined by golden-section search.
    """
    e0 = energy(0.0)
    ep = energy(math.pi / 4)
    em = energy(-math.pi / 4)
    a = (ep + em) / 2
    c = (ep - em) / 2
    b = e0 - a
    predicted = a + (b + c) * math.cos(math.pi / 4)
    if abs(predicted - energy(math.pi / 8)) <= tol * abs(b) + 1e-9:
        return _wrap(0.5 * math.atan2(-c, -b), math.pi)
    grid = np.linspace(-math.pi, math.pi, 64, endpoint=False) + 2 * math.pi / 64
    values = np.array([energy(t) for t in grid])
    k = int(np.argmin(values))
    step = grid[1] - grid[0]
    lo, mid, hi = grid[k] - step, grid[k], grid[k] + step
    try:
        res = minimize_scalar(energy, bracket=(lo, mid, hi), method="golden", tol=1e-10)
        theta = float(res.x) if res.fun <= values[k] else float(mid)
    except ValueError:
        theta = float(mid)
    return _wrap(theta, 2 * math.pi)


def rotosolve_init(state: np.ndarray, op: PoolOperator, hamiltonian) -> float:
    """Initial angle for ``op`` appended to ``state``, using exact energies."""
    m = operator_matrix(hamiltonian) if isinstance(hamiltonian, PauliSum) else hamiltonian

    def energy(theta):
        psi = apply_generator(state, op.terms, theta)
        return float(np.vdot(psi, m @ psi).real)

    return rotosolve(energy)


# Gradients and selection ---------------------------------------------------------

@dataclass(frozen=True)
class GradientObservable:
    pool_id: int
    hermitian_form: PauliSum


_COMMUTATORS: dict[tuple[int, int], tuple[PauliSum, OperatorPool, list[GradientObservable]]] = {}


def precompute_commutators(h: PauliSum, pool: OperatorPool) -> list[GradientObservable]:
    """``[H, P_i]`` for every pool operator, cached per (H, pool) object pair."""
    key = (id(h), id(pool))
    hit = _COMMUTATORS.get(key)
    if hit is not None and hit[0] is h and hit[1] is pool:
        return hit[2]
    if h.n_qubits != pool.n_qubits:
        raise ValueError("Hamiltonian and pool act on different qubit counts")
    out = []
    for op in pool:
        c = commutator(h, op.generator)
        if not is_hermitian(c, tol=1e-10):
            raise ValueError(f"[H, P_{op.id}] is not Hermitian")
        c = PauliSum(c.n_qubits, {s: v.real for s, v in c.terms.items()})
        out.append(GradientObservable(op.id, c))
    _COMMUTATORS[key] = (h, pool, out)
    return out


def exact_gradients(commutators: Sequence[GradientObservable], state: np.ndarray) -> np.ndarray:
    return np.array([expectation(state, operator_matrix(g.hermitian_form)).real if g.hermitian_form else 0.0
                     for g in commutators])


def screen_gradients(commutators: Sequence[GradientObservable], povm, shots) -> list[Estimate]:
    from .povm import estimate_many

    return estimate_many([g.hermitian_form for g in commutators], povm, shots)


def select_operator(estimates) -> int:
    """Index of the largest ``|mean|``; exact ties go to the lowest index."""
    means = np.array([e[0] if not hasattr(e, "mean") else e.mean for e in estimates], dtype=float)
    if means.size == 0:
        raise ValueError("no gradient estimates")
    return int(np.argmax(np.abs(means)))


def gradient_stop_satisfied(estimates, threshold: float) -> bool:
    """Relative error of the largest-magnitude gradient is at most ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("relative threshold must lie in (0, 1)")
    pairs = [(e.mean, e.std_error) if hasattr(e, "mean") else tuple(e) for e in estimates]
    k = select_operator(pairs)
    mean, se = pairs[k]
    if abs(mean) < 1e-12:
        return False
    return se / abs(mean) <= threshold


@dataclass
class GradientStop:
    threshold: float
    needs_observables = True

    def __call__(self, energy, observables) -> bool:
        return gradient_stop_satisfied(observables, self.threshold)


# CNOT cost model ------------------------------------------------------------------

@dataclass(frozen=True)
class CnotCosts:
    qeb_single: int = 2
    qeb_double: int = 13

    def gate(self, op: PoolOperator) -> int:
        if op.kind is OpKind.QEB_SINGLE:
            return self.qeb_single
        if op.kind is OpKind.QEB_DOUBLE:
            return self.qeb_double
        return sum(2 * (s.weight - 1) for _, s in op.terms if s.weight > 0)


def cnot_count(ansatz: AnsatzState, pool: OperatorPool, costs: CnotCosts | None = None) -> int:
    costs = costs or CnotCosts()
    return sum(costs.gate(pool[i]) for i in ansatz.ids)


# Driver ---------------------------------------------------------------------------

class StopKind(str, enum.Enum):
    ENERGY = "ENERGY"
    GRADIENT = "GRADIENT"
    STATEVECTOR = "STATEVECTOR"


@dataclass(frozen=True)
class StopMode:
    kind: StopKind
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind is StopKind.ENERGY and not self.threshold > 0:
            raise ValueError("T_E must be positive")
        if self.kind is StopKind.GRADIENT and not 0 < self.threshold < 1:
            raise ValueError("T_tau must lie in (0, 1)")

    @classmethod
    def energy(cls, t_e: float) -> "StopMode":
        return cls(StopKind.ENERGY, t_e)

    @classmethod
    def gradient(cls, t_tau: float) -> "StopMode":
        return cls(StopKind.GRADIENT, t_tau)

    @classmethod
    def statevector(cls) -> "StopMode":
        return cls(StopKind.STATEVECTOR)

    @property
    def label(self) -> str:
        if self.kind is StopKind.ENERGY:
            return f"TE={self.threshold * 1e3:g}mHa"
        if self.kind is StopKind.GRADIENT:
            return f"Ttau={self.threshold:g}"
        return "statevector"

    def predicate(self):
        if self.kind is StopKind.ENERGY:
            return EnergyStop(self.threshold)
        return GradientStop(self.threshold)


@dataclass
class AdaptConfig:
    stop_mode: StopMode = field(default_factory=StopMode.statevector)
    max_iterations: int = 50
    gradient_floor: float = 1e-3
    target_error: float | None = None
    schedule: MeasurementSchedule = field(default_factory=lambda: MeasurementSchedule(max_shots=20_000_000))
    povm_settings: POVMOptimiserSettings = field(default_factory=POVMOptimiserSettings)
    optimise_every: int = 1
    recycle_povm: bool = True
    seed: int = 0
    cnot_costs: CnotCosts = field(default_factory=CnotCosts)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.optimise_every < 1:
            raise ValueError("optimise_every must be at least 1")


@dataclass
class IterationLog:
    iteration: int
    chosen_id: int
    theta_init: float
    gradient_means: np.ndarray
    gradient_std_errors: np.ndarray
    energy_mean: float
    energy_std_error: float
    measured_exact_energy: float
    exact_energy: float
    error: float | None
    shots: int
    cumulative_shots: int
    cnot_count: int
    povm_events: str = ""
    gradient_source: str = "estimated"


@dataclass
class AdaptResult:
    ansatz: AnsatzState
    logs: list[IterationLog]
    reason: str
    final_energy: float
    exact_ground_energy: float | None
    cumulative_shots: int
    cnot_count: int
    povm_traces: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.ansatz.gates)

    @property
    def error(self) -> float | None:
        if self.exact_ground_energy is None:
            return None
        return self.final_energy - self.exact_ground_energy

    @property
    def incomplete(self) -> bool:
        return self.reason == "budget_exhausted"


def run_adapt(h: PauliSum, pool: OperatorPool, config: AdaptConfig, reference: np.ndarray,
              exact_energy: float | None = None) -> AdaptResult:
    """Grow the ansatz until convergence, the iteration cap, or the shot budget runs out."""
    rng = np.random.default_rng(config.seed)
    commutators = precompute_commutators(h, pool)
    observables = [g.hermitian_form for g in commutators]
    statevector = config.stop_mode.kind is StopKind.STATEVECTOR
    hmat = operator_matrix(h)

    ansatz = AnsatzState(reference, [])
    psi = reference
    energy = _energy(hmat, psi)
    prior: ProductPOVM | None = None
    logs: list[IterationLog] = []
    traces = []
    cumulative = 0
    reason = "max_iterations"

    def reached_target(e):
        return (config.target_error is not None and exact_energy is not None
                and e - exact_energy < config.target_error)

    for it in range(1, config.max_iterations + 1):
        if reached_target(energy):
            reason = "target_error"
            break
        events = ""
        if statevector:
            means = exact_gradients(commutators, psi)
            ses = np.zeros_like(means)
            e_mean, e_se, shots = energy, 0.0, 0
            source = "exact"
        else:
            def sampler(povm, n, r, _psi=psi):
                return sample_povm(_psi, povm, n, r)

            res = optimise_povm(h, sampler, config.schedule, config.stop_mode.predicate(),
                                prior=prior, rng=rng, observables=observables,
                                settings=config.povm_settings)
            traces.append(res.trace)
            if config.recycle_povm:
                prior = res.best_povm
            shots = res.n_shots
            cumulative += shots
            means = np.array([e.mean for e in res.observables])
            ses = np.array([e.std_error for e in res.observables])
            e_mean, e_se = res.energy.mean, res.energy.std_error
            events = ";".join(r.events for r in res.trace if r.events)
            source = "estimated"
            if res.exhausted:
                logs.append(IterationLog(it, -1, 0.0, means, ses, e_mean, e_se, energy, energy,
                                         None if exact_energy is None else energy - exact_energy,
                                         shots, cumulative, cnot_count(ansatz, pool, config.cnot_costs),
                                         events, source))
                reason = "budget_exhausted"
                break

        if np.max(np.abs(means)) < config.gradient_floor:
            reason = "gradient_norm"
            break
        chosen = select_operator(list(zip(means, ses)))
        theta_init = rotosolve_init(psi, pool[chosen], hmat)
        if ansatz.gates and ansatz.gates[-1][0] == chosen and abs(theta_init) < 1e-8:
            reason = "repeated_operator"
            break
        measured_energy = energy
        ansatz = ansatz.append(chosen, theta_init)
        if it % config.optimise_every == 0:
            thetas, energy = optimise_ansatz(hmat, pool, ansatz)
            ansatz = ansatz.with_thetas(thetas)
        else:
            energy = _energy(hmat, ansatz.state(pool))
        psi = ansatz.state(pool)
        logs.append(IterationLog(
            it, chosen, theta_init, means, ses, e_mean, e_se, measured_energy, energy,
            None if exact_energy is None else energy - exact_energy, shots, cumulative,
            cnot_count(ansatz, pool, config.cnot_costs), events, source))
        log.debug("iteration %d: op %d energy %.10f", it, chosen, energy)
    else:
        if reached_target(energy):
            reason = "target_error"

    return AdaptResult(ansatz, logs, reason, energy, exact_energy, cumulative,
                       cnot_count(ansatz, pool, config.cnot_costs), traces)


# Problem setup ----------------------------------------------------------------------

@dataclass
class Problem:
    integrals: IntegralSet
    scheme: MappingScheme
    hamiltonian: PauliSum
    pool: OperatorPool
    reference: np.ndarray
    exact_energy: float


def setup_problem(ints: IntegralSet, scheme, pool_kind) -> Problem:
    scheme = MappingScheme.parse(scheme)
    h = build_hamiltonian(ints, scheme)
    pool = build_pool(PoolKind.parse(pool_kind), scheme, ints.n_spatial)
    ref = prepare_reference(ints, scheme)
    e0, _ = exact_ground_energy(h)
    return Problem(ints, scheme, h, pool, ref, e0)


ITERATION_COLUMNS = ("iteration", "chosen_id", "theta_init", "energy_mean", "energy_std_error",
                     "measured_exact_energy", "exact_energy", "error", "shots", "cumulative_shots",
                     "cnot_count", "max_abs_gradient", "gradient_source", "povm_events")


def iteration_csv(result: AdaptResult, include_gradients: bool = True) -> str:
    """IterationLog table; gradient columns are ``g<id>`` / ``se<id>`` pairs."""
    lines = ["# schema: aimadapt-iterations v1"]
    header = list(ITERATION_COLUMNS)
    n_ops = len(result.logs[0].gradient_means) if result.logs else 0
    if include_gradients:
        for k in range(n_ops):
            header += [f"g{k}", f"se{k}"]
    lines.append(",".join(header))
    for lg in result.logs:
        row = [lg.iteration, lg.chosen_id, f"{lg.theta_init:.12g}", f"{lg.energy_mean:.12g}",
               f"{lg.energy_std_error:.6g}", f"{lg.measured_exact_energy:.12g}", f"{lg.exact_energy:.12g}",
               "" if lg.error is None else f"{lg.error:.6e}", lg.shots, lg.cumulative_shots, lg.cnot_count,
               f"{np.max(np.abs(lg.gradient_means)):.6e}", lg.gradient_source, lg.povm_events]
        if include_gradients:
            for m, s in zip(lg.gradient_means, lg.gradient_std_errors):
                row += [f"{m:.6e}", f"{s:.3e}"]
        lines.append(",".join(map(str, row)))
    return "\n".join(lines) + "\n"
