import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmetro.bounds import (
    DC_INV_T2,
    DEC_INV_T,
    INFO_OMEGA,
    BoundConstants,
    CoherentRegister,
    analytic_ramp,
    analytic_ramp_unrounded,
    bit_floor,
    coherent_overlap,
    crb_curve,
    helstrom,
    hyperfine_bit_floor,
    linear_classifier_reference_curve,
    maximize_fi_objectives,
    multiphase_reference_curve,
    pgm_error,
    pgm_error_from_gram,
    pgm_reference_curves,
    qml_reference_curve,
    uniform_prior_info,
)
from qmetro.photonic import adder, encode_multiphase, multiphase_phases


@pytest.fixture(scope="module")
def constants() -> BoundConstants:
    return maximize_fi_objectives()


class TestConstants:
    def test_decay_rate_maximum(self, constants):
        assert constants.mu == pytest.approx(0.1619, abs=1e-3)

    def test_oscillation_maximum(self, constants):
        assert constants.gamma == pytest.approx(0.724611, abs=1e-4)

    def test_time_coefficient(self, constants):
        assert constants.time_coeff == pytest.approx(0.5, abs=1e-4)

    def test_stretched_rate_free_exponent(self, constants):
        assert constants.delta == pytest.approx(0.24429, abs=1e-3)

    def test_stretched_rate_fixed_exponent(self, constants):
        assert constants.eps == pytest.approx(0.20687, abs=1e-3)

    def test_exponent_per_measurement(self, constants):
        assert constants.chi == pytest.approx(0.23966, abs=1e-3)

    def test_exponent_per_time(self, constants):
        assert constants.psi == pytest.approx(2.43013, abs=1e-3)

    def test_prior_information(self):
        assert INFO_OMEGA == pytest.approx(12.0)
        assert DC_INV_T2.prior_info == pytest.approx(3e4)
        assert DEC_INV_T.prior_info == pytest.approx(1481.48, rel=1e-4)
        assert uniform_prior_info(2.5) == pytest.approx(1.92)

    def test_interval_expectations(self):
        # closed forms of the uniform inverse-rate priors
        assert DC_INV_T2.t2 == pytest.approx(10.0336, abs=1e-3)
        assert DC_INV_T2.t2_squared == pytest.approx(101.01, abs=1e-2)
        assert DEC_INV_T.t2 == pytest.approx(25.5848, abs=1e-3)
        assert DEC_INV_T.t2_squared == pytest.approx(1e3)


class TestCrbCurve:
    def test_dc_coherent_time(self, constants):
        curve = crb_curve("dc", "coherent", "time", [10.0], constants=constants)
        assert curve.bound[0] == pytest.approx(1.0 / 112.0)

    def test_dc_coherent_measurement(self, constants):
        curve = crb_curve("dc", "coherent", "measurement", [10], constants=constants)
        assert curve.bound[0] == pytest.approx(2.0**-22 / 3.0)

    def test_hyperfine_coherent_measurement(self, constants):
        curve = crb_curve(
            "hyperfine", "coherent", "measurement", [10], constants=constants
        )
        assert curve.bound[0] == pytest.approx(2.0**-10 / 24.0)

    def test_dc_fixed_t2_formulas(self, constants):
        t = 40.0
        curve = crb_curve("dc", "fixed_t2", "time", [t], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (constants.time_coeff * t * 10.0 + 12.0)
        )
        m = 50
        curve = crb_curve("dc", "fixed_t2", "measurement", [m], constants=constants)
        expected = max(
            float(bit_floor(m)), 1 / (constants.mu * m * 100.0 + 12.0)
        )
        assert curve.bound[0] == pytest.approx(expected)

    def test_dc_interval_is_sum_of_two_terms(self, constants):
        m = 100
        curve = crb_curve("dc", "interval", "measurement", [m], constants=constants)
        rate = constants.mu * m * DC_INV_T2.t2_squared
        assert curve.bound[0] == pytest.approx(
            1 / (rate + 12.0) + 1 / (rate + 3e4)
        )

    def test_ac_time_uses_oscillation_envelope(self, constants):
        t = 128.0
        curve = crb_curve("ac", "coherent", "time", [t], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (constants.gamma * t / 0.2 + 12.0)
        )

    def test_ac_interval_pairs_regimes_consistently(self, constants):
        # the frequency term must depend on the regime's own resource
        t = 200.0
        curve = crb_curve("ac", "interval", "time", [t], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (constants.gamma * t / 0.2 + 12.0)
            + 1 / (constants.time_coeff * t * DC_INV_T2.t2 + 3e4)
        )
        m = 200
        curve = crb_curve("ac", "interval", "measurement", [m], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (m / 0.04 + 12.0)
            + 1 / (constants.mu * m * DC_INV_T2.t2_squared + 3e4)
        )

    def test_dec_rows(self, constants):
        t = 300.0
        beta_sq = (1.5**2 + 1.5 * 4 + 16) / 3
        curve = crb_curve("dec", "beta_nuisance", "time", [t], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (constants.delta * t * DEC_INV_T.t2 * beta_sq + DEC_INV_T.prior_info)
        )
        m = 300
        curve = crb_curve("dec", "both", "measurement", [m], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (constants.chi * m / 6.0 + 1.92)
            + 1 / (constants.mu * m * 1e3 * beta_sq + DEC_INV_T.prior_info)
        )
        curve = crb_curve("dec", "beta_fixed", "time", [t], constants=constants)
        assert curve.bound[0] == pytest.approx(
            1 / (4 * constants.eps * t * DEC_INV_T.t2 + DEC_INV_T.prior_info)
        )

    def test_all_rows_evaluate(self, constants):
        for task, cases in {
            "dc": ("coherent", "fixed_t2", "interval"),
            "ac": ("coherent", "fixed_t2", "interval"),
            "dec": ("beta_nuisance", "beta_fixed", "both"),
            "hyperfine": ("coherent", "fixed_t2"),
        }.items():
            for case in cases:
                for regime in ("time", "measurement"):
                    curve = crb_curve(
                        task, case, regime, [4.0, 16.0, 64.0], constants=constants
                    )
                    assert np.all(curve.bound > 0)
                    assert np.all(np.diff(curve.bound) < 0)

    def test_unknown_case_rejected(self, constants):
        with pytest.raises(ValueError):
            crb_curve("dc", "nope", "time", [1.0], constants=constants)
        with pytest.raises(ValueError):
            crb_curve("nope", "coherent", "time", [1.0], constants=constants)
        with pytest.raises(ValueError):
            crb_curve("dc", "coherent", "nope", [1.0], constants=constants)

    def test_csv_round_trip(self, constants, tmp_path):
        curve = crb_curve(
            "dc", "coherent", "time", [1.0, 2.0, 4.0], constants=constants
        )
        path = tmp_path / "curve.csv"
        curve.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "resource,bound,task,case,regime"
        assert len(lines) == 4
        assert lines[1].split(",")[2:] == ["dc", "coherent", "time"]


class TestHelstrom:
    def test_indistinguishable_states(self):
        assert helstrom(0.0) == pytest.approx(0.5)
        assert helstrom(0.0, 5) == pytest.approx(0.5)

    def test_unlimited_reference_value(self):
        assert helstrom(0.5) == pytest.approx(
            0.5 * (1 - math.sqrt(1 - math.exp(-1.0)))
        )
        assert helstrom(0.5) == pytest.approx(0.102470, abs=1e-6)

    def test_finite_reference_monotone_in_n(self):
        for alpha in (0.3, 0.5, 0.8):
            errors = [helstrom(alpha, n) for n in (1, 2, 4, 8, 16)]
            assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))
            assert errors[-1] >= helstrom(alpha) - 1e-12

    def test_finite_reference_converges(self):
        # the exact series approaches the unlimited value at rate ~0.18/n
        assert helstrom(0.5, 1000) == pytest.approx(helstrom(0.5), abs=2e-4)
        assert helstrom(0.5, 2048) == pytest.approx(helstrom(0.5), abs=1e-4)

    @given(st.floats(0.0, 2.0), st.floats(0.01, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_nonincreasing_in_alpha(self, alpha, step):
        assert helstrom(alpha + step) <= helstrom(alpha) + 1e-12


def _pgm_error_operator_oracle(states, priors):
    # independent route: embed the states via Cholesky of the overlap matrix,
    # build the measurement operators explicitly, and sum the hit terms
    m = len(states)
    overlaps = np.array(
        [[coherent_overlap(a, b) for b in states] for a in states]
    )
    vecs = np.linalg.cholesky(overlaps + 1e-14 * np.eye(m)).conj()
    # row i of vecs.conj() represents |psi_i> since vecs vecs^dag = overlaps
    density = sum(p * np.outer(v, v.conj()) for p, v in zip(priors, vecs))
    eigvals, eigvecs = np.linalg.eigh(density)
    inv_root = np.zeros_like(density)
    for lam, u in zip(eigvals, eigvecs.T):
        if lam > 1e-12:
            inv_root += np.outer(u, u.conj()) / math.sqrt(lam)
    success = 0.0
    for p, v in zip(priors, vecs):
        success += p**2 * abs(v.conj() @ inv_root @ v) ** 2
    return 1.0 - success


class TestPgm:
    def test_orthogonal_states(self):
        states = [
            CoherentRegister(np.array([20.0 + 0j, 0.0])),
            CoherentRegister(np.array([0.0, 20.0 + 0j])),
        ]
        assert pgm_error(states, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_identical_states(self):
        s = CoherentRegister(np.array([0.3 + 0.2j]))
        assert pgm_error([s, s], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-9)

    def test_matches_helstrom_for_two_pure_states(self):
        rng = np.random.default_rng(7)
        for alpha in rng.uniform(0.05, 1.5, 50):
            states = [
                CoherentRegister(np.array([alpha + 0j])),
                CoherentRegister(np.array([-alpha + 0j])),
            ]
            assert pgm_error(states, [0.5, 0.5]) == pytest.approx(
                helstrom(alpha), abs=1e-9
            )

    def test_global_phase_invariance(self):
        states = [
            CoherentRegister(np.array([0.4 + 0.1j, -0.2j])),
            CoherentRegister(np.array([0.1 - 0.3j, 0.5 + 0j])),
            CoherentRegister(np.array([-0.6 + 0j, 0.2 + 0.2j])),
        ]
        priors = np.array([0.4, 0.35, 0.25])
        gram = np.array(
            [
                [
                    math.sqrt(pi * pj) * coherent_overlap(si, sj)
                    for pj, sj in zip(priors, states)
                ]
                for pi, si in zip(priors, states)
            ]
        )
        base = pgm_error_from_gram(gram)
        assert pgm_error(states, priors) == pytest.approx(base, abs=1e-12)
        # a global ket phase on state i conjugates the Gram by a diagonal unitary
        phases = np.exp(1j * np.array([0.7, -1.3, 2.1]))
        twisted = np.diag(phases) @ gram @ np.diag(phases).conj()
        assert pgm_error_from_gram(twisted) == pytest.approx(base, abs=1e-12)

    def test_relabeling_invariance(self):
        states = [
            CoherentRegister(np.array([0.4 + 0j])),
            CoherentRegister(np.array([-0.1 + 0.2j])),
            CoherentRegister(np.array([0.0 + 0.6j])),
        ]
        priors = [0.2, 0.5, 0.3]
        base = pgm_error(states, priors)
        perm = [2, 0, 1]
        assert pgm_error(
            [states[i] for i in perm], [priors[i] for i in perm]
        ) == pytest.approx(base, abs=1e-12)

    def test_matches_operator_oracle(self):
        rng = np.random.default_rng(3)
        states = [
            CoherentRegister(rng.normal(size=2) + 1j * rng.normal(size=2))
            for _ in range(4)
        ]
        priors = np.full(4, 0.25)
        assert pgm_error(states, priors) == pytest.approx(
            _pgm_error_operator_oracle(states, priors), abs=1e-7
        )

    def test_bad_priors_rejected(self):
        s = CoherentRegister(np.array([0.1 + 0j]))
        with pytest.raises(ValueError):
            pgm_error([s, s], [0.7, 0.7])


class TestReferenceCurves:
    def test_adder_amplitude(self):
        assert adder(0.5, 4) == pytest.approx(1.0)

    def test_multiphase_monotone_in_copies(self):
        curve = multiphase_reference_curve(n_grid=range(1, 6))
        assert np.all(np.diff(curve.bound) < 0)
        assert np.allclose(curve.resource, np.arange(1, 6))

    def test_multiphase_single_copy_against_oracle(self):
        base = CoherentRegister(np.array([1.0 + 0j, 0, 0, 0]))
        states = [
            encode_multiphase(base, multiphase_phases(h)) for h in range(1, 9)
        ]
        expected = _pgm_error_operator_oracle(states, np.full(8, 0.125))
        curve = multiphase_reference_curve(n_grid=[1])
        assert curve.bound[0] == pytest.approx(expected, abs=1e-7)

    def test_multiphase_resource_scales_with_input_photons(self):
        curve = multiphase_reference_curve(
            input_amps=(1, 1, 0, 0), n_grid=[1, 2]
        )
        assert np.allclose(curve.resource, [2.0, 4.0])

    def test_linear_classifier_error_vanishes(self):
        curve = linear_classifier_reference_curve(m_grid=[1, 2, 4, 8, 16])
        assert np.all(np.diff(curve.bound) < 0)
        tail = linear_classifier_reference_curve(m_grid=[64])
        assert tail.bound[0] < 1e-8

    def test_qml_photon_accounting(self):
        # identical seeds draw identical amplitude samples, so only the
        # photon cost moves with the training-copy budget
        one = qml_reference_curve(n_grid=[1], n_samples=40, seed=1)
        four = qml_reference_curve(n_grid=[4], n_samples=40, seed=1)
        assert four.resource[0] > one.resource[0]
        assert four.bound[0] == pytest.approx(one.bound[0], abs=1e-12)

    def test_dispatch(self):
        curve = pgm_reference_curves("linear_classifier", m_grid=[1, 2])
        assert curve.task == "linear_classifier"
        with pytest.raises(ValueError):
            pgm_reference_curves("nope")


class TestAnalyticRamp:
    def test_ramp_slope(self):
        dist, _ = analytic_ramp(100)
        slope = 2.0 / math.log2(1.66)
        assert slope == pytest.approx(2.7353, abs=1e-3)
        # counts follow the linear ramp before clipping
        assert dist.nu[-1] == 1
        assert dist.nu[0] == round(1 + slope * (dist.k - 1))

    def test_k_star_readings(self):
        dist, _ = analytic_ramp(100)
        assert dist.k_star == pytest.approx(
            math.sqrt(math.log2(1.66)) * 10.0, abs=1e-6
        )
        assert dist.k_star == pytest.approx(8.551, abs=1e-3)
        assert dist.k_star_exact == pytest.approx(8.687, abs=1e-3)

    def test_counts_are_positive_integers(self):
        for m in (4, 16, 100, 1024):
            dist, _ = analytic_ramp(m)
            assert dist.nu.dtype.kind == "i"
            assert np.all(dist.nu >= 1)

    def test_bound_monotone_in_budget(self):
        budgets = [16, 32, 64, 128, 256, 512, 1024]
        bounds = [analytic_ramp(m)[1] for m in budgets]
        assert all(a > b for a, b in zip(bounds, bounds[1:]))

    def test_rounding_changes_bound_little(self):
        for m in (64, 256, 1024):
            rounded = analytic_ramp(m)[1]
            assert rounded == pytest.approx(analytic_ramp_unrounded(m), rel=0.1)

    def test_bit_floors(self):
        assert bit_floor(10) == pytest.approx(2.0**-22 / 3)
        assert hyperfine_bit_floor(10) == pytest.approx(2.0**-10 / 24)

    def test_small_budget_rejected(self):
        with pytest.raises(ValueError):
            analytic_ramp(3)
