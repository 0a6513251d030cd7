import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aimadapt.adapt import precompute_commutators
from aimadapt.pauli import PauliSum
from aimadapt.povm import (EnergyStop, MeasurementData, MeasurementSchedule, NotInformationallyComplete,
                           POVMOptimiserSettings, ProductPOVM, ShotRecord, SingleQubitPOVM, StaleShotsError,
                           candidate_variance, compute_duals, computational_refinement, default_sic,
                           epsilon_E, estimate, estimate_many, exact_moments, optimise_povm,
                           per_shot_weights, reconstruction_residual, trace_csv)
from aimadapt.simulator import basis_state, joint_distribution, random_state, sample_povm

R3 = math.sqrt(3)


def sampler_for(state):
    return lambda povm, n, rng: sample_povm(state, povm, n, rng)


# single-qubit POVMs -----------------------------------------------------------------

def test_sic_duals():
    sic = default_sic()
    sic.validate()
    assert np.allclose(sic.effects.sum(axis=0), np.eye(2))
    b = compute_duals(sic)
    assert np.allclose(b[0], 1.0)
    assert np.allclose(b[3], [R3, -R3, -R3, R3])
    assert reconstruction_residual(sic, b) < 1e-12


def test_non_ic_rejected():
    with pytest.raises(NotInformationallyComplete) as err:
        compute_duals(computational_refinement())
    assert err.value.cond >= 1e8 or math.isinf(err.value.cond)
    assert not ProductPOVM([computational_refinement()]).is_ic


@given(st.lists(st.floats(-2, 2), min_size=16, max_size=16))
def test_random_povm_reconstruction(params):
    p = SingleQubitPOVM.from_params(np.array(params))
    p.validate()
    if p.is_ic:
        assert reconstruction_residual(p, compute_duals(p)) < 1e-9


def test_fingerprint_and_records(rng):
    a = ProductPOVM.sic(2)
    b = ProductPOVM.from_params(rng.normal(size=(2, 16)))
    assert a.fingerprint != b.fingerprint and a == ProductPOVM.sic(2)
    rec = sample_povm(random_state(2, rng), a, 50, 1)
    back = ShotRecord.from_text(rec.to_text())
    assert np.array_equal(back.flat, rec.flat) and back.povm_fingerprint == rec.povm_fingerprint
    assert rec.outcomes.shape == (50, 2)
    with pytest.raises(StaleShotsError):
        estimate(PauliSum.from_label("ZZ"), b, rec)


# estimation -------------------------------------------------------------------------

def test_identity_and_z_estimates():
    povm = ProductPOVM.sic(1)
    rec = sample_povm(basis_state(1, [0]), povm, 20_000, 4)
    mean, se = estimate(PauliSum.identity(1), povm, rec)
    assert mean == pytest.approx(1.0, abs=1e-12) and se < 1e-12
    mean, se = estimate(PauliSum.from_label("Z"), povm, rec)
    assert abs(mean - 1) < 4 * se


def test_h4_energy_estimate(h4_jw_qeb):
    p = h4_jw_qeb
    povm = ProductPOVM.sic(8)
    rec = sample_povm(p.reference, povm, 10_000, 8)
    mean, se = estimate(p.hamiltonian, povm, rec)
    exact = exact_moments(p.hamiltonian, povm, p.reference)[0]
    from aimadapt.simulator import expectation

    assert exact == pytest.approx(expectation(p.reference, p.hamiltonian).real, abs=1e-10)
    assert abs(mean - exact) < 4 * se


def test_estimate_many_paths(h4_jw_qeb, rng):
    p = h4_jw_qeb
    obs = [g.hermitian_form for g in precompute_commutators(p.hamiltonian, p.pool)][:30]
    povm = ProductPOVM.from_params(rng.normal(size=(8, 16)) * 0.2)
    rec = sample_povm(random_state(8, rng), povm, 3000, 2)
    many = estimate_many(obs + [obs[3]], povm, rec)
    assert (many[-1].mean, many[-1].std_error) == (many[3].mean, many[3].std_error)
    for o, e in zip(obs, many):
        one = estimate(o, povm, rec)
        assert (one.mean, one.std_error) == (e.mean, e.std_error)
        w = per_shot_weights(o, povm, rec)
        assert e.mean == pytest.approx(w.mean(), abs=1e-10)
        assert e.std_error == pytest.approx(w.std() / math.sqrt(len(w)), rel=1e-8, abs=1e-12)


def test_linearity(rng):
    povm = ProductPOVM.sic(2)
    rec = sample_povm(random_state(2, rng), povm, 2000, 6)
    z0, z1 = PauliSum.from_label("ZI"), PauliSum.from_label("IZ")
    m0, m1, m01 = (e.mean for e in estimate_many([z0, z1, z0 + z1], povm, rec))
    assert m01 == pytest.approx(m0 + m1, abs=1e-12)
    a = PauliSum.from_labels([(0.3, "XY"), (-1.2, "ZZ")])
    b = PauliSum.from_labels([(0.7, "YI"), (0.4, "ZZ")])
    ea, eb, eab = estimate_many([a, b, a * 2.0 + b * -3.0], povm, rec)
    assert eab.mean == pytest.approx(2 * ea.mean - 3 * eb.mean, abs=1e-12)


def test_estimation_refuses_non_ic():
    povm = ProductPOVM([computational_refinement()])
    rec = sample_povm(basis_state(1, [0]), povm, 100, 1)
    with pytest.raises(NotInformationallyComplete):
        epsilon_E(PauliSum.from_label("Z"), povm, rec)
    with pytest.raises(ValueError):
        estimate(PauliSum.from_label("Z", 1j), ProductPOVM.sic(1), sample_povm(basis_state(1, [0]), ProductPOVM.sic(1), 10, 1))


def test_epsilon_examples():
    povm = ProductPOVM.sic(1)
    rec = sample_povm(basis_state(1, [0]), povm, 50_000, 12)
    assert epsilon_E(PauliSum.identity(1), povm, rec) == pytest.approx(0.0, abs=1e-12)
    p = joint_distribution(basis_state(1, [0]), povm.effect_stack())
    bz = povm.duals[0][3]
    exact = math.sqrt((p * bz ** 2).sum() - 1.0)
    assert epsilon_E(PauliSum.from_label("Z"), povm, rec) == pytest.approx(exact, rel=0.02)
    assert exact_moments(PauliSum.from_label("Z"), povm, basis_state(1, [0]))[1] == pytest.approx(exact)


# candidate variance -----------------------------------------------------------------

def test_candidate_equals_current_bit_exact(h4_jw_qeb):
    p = h4_jw_qeb
    povm = ProductPOVM.sic(8)
    rec = sample_povm(p.reference, povm, 4000, 3)
    eps = epsilon_E(p.hamiltonian, povm, rec)
    assert candidate_variance(p.hamiltonian, povm, povm, rec) == pytest.approx(eps ** 2, rel=1e-14)
    from aimadapt.povm import RunningEstimates

    direct = RunningEstimates([p.hamiltonian], 8).update(MeasurementData.single(povm, rec)).variances()[0]
    assert candidate_variance(p.hamiltonian, povm, povm, rec) == direct


def test_candidate_variance_exact_limit(rng):
    """With exact counts the data-driven variance equals the exact candidate variance."""
    h = PauliSum.from_label("Z")
    psi = random_state(1, rng)
    current = ProductPOVM.sic(1)
    probs = joint_distribution(psi, current.effect_stack()).ravel()
    scale = 10 ** 7
    counts = np.round(probs * scale).astype(np.int64)
    data = MeasurementData.single(current, ShotRecord(np.repeat(np.arange(4), counts), 1, current.fingerprint))
    cand = ProductPOVM.from_params(rng.normal(size=(1, 16)) * 0.4)
    _, eps = exact_moments(h, cand, psi)
    assert candidate_variance(h, cand, None, data) == pytest.approx(eps ** 2, rel=1e-5)


def test_rotating_towards_z_reduces_variance():
    from aimadapt.povm import effects_from_params

    h = PauliSum.from_label("Z")
    zero = basis_state(1, [0])
    # generator direction found by scanning: move one parameter and keep the best
    base = exact_moments(h, ProductPOVM.sic(1), zero)[1]
    improved = []
    for i in range(16):
        x = np.zeros(16)
        x[i] = 0.1
        cand = ProductPOVM([SingleQubitPOVM(effects_from_params(x), x)])
        if cand.is_ic:
            improved.append(exact_moments(h, cand, zero)[1] < base)
    assert any(improved)


# optimisation loop ------------------------------------------------------------------

def test_schedule():
    batches = list(MeasurementSchedule(512, 1.5, 20_000).batches())
    assert sum(batches) == 20_000
    assert all(b2 >= b1 for b1, b2 in zip(batches[:-2], batches[1:-1]))
    with pytest.raises(ValueError):
        MeasurementSchedule(512, 0.9, 1000)


def test_optimise_improves_on_product_state():
    n = 3
    h = PauliSum.from_labels([(1.0, "ZII"), (1.0, "IZI"), (1.0, "IIZ")])
    psi = basis_state(n, [0, 0, 0])
    res = optimise_povm(h, sampler_for(psi), MeasurementSchedule(512, 1.5, 30_000), EnergyStop(1e-9), rng=1)
    assert res.exhausted
    sic = exact_moments(h, ProductPOVM.sic(n), psi)[1]
    assert exact_moments(h, res.best_povm, psi)[1] <= sic
    assert "batch,shots" in trace_csv(res.trace)


def test_huge_threshold_stops_after_first_batch(rng):
    h = PauliSum.from_labels([(0.5, "XZ"), (1.0, "ZZ")])
    res = optimise_povm(h, sampler_for(random_state(2, rng)), MeasurementSchedule(), EnergyStop(1e3), rng=0)
    assert len(res.trace) == 1 and res.n_shots == 512 and not res.exhausted


def test_best_so_far_semantics(h4_jw_qeb):
    p = h4_jw_qeb
    res = optimise_povm(p.hamiltonian, sampler_for(p.reference), MeasurementSchedule(512, 1.5, 30_000),
                        EnergyStop(1e-9), rng=5)
    eps = [r.eps_E for r in res.trace]
    cand = candidate_variance(p.hamiltonian, res.best_povm, None, res.data)
    assert res.best_povm.is_ic
    assert min(eps) <= eps[0]
    assert math.isfinite(cand)


def test_prior_reset_to_sic(h4_jw_qeb, rng):
    p = h4_jw_qeb
    bad = ProductPOVM.from_params(rng.normal(size=(8, 16)) * 1.5)
    res = optimise_povm(p.hamiltonian, sampler_for(p.reference), MeasurementSchedule(4096, 1.5, 4096),
                        EnergyStop(1e-9), prior=bad, rng=0,
                        settings=POVMOptimiserSettings(optimise=False))
    sic_eps = exact_moments(p.hamiltonian, ProductPOVM.sic(8), p.reference)[1]
    bad_eps = exact_moments(p.hamiltonian, bad, p.reference)[1]
    assert bad_eps > 1.5 * sic_eps
    assert "prior_reset_to_sic" in res.trace[0].events
    assert res.best_povm == ProductPOVM.sic(8)
