import numpy as np
import pytest

from qmetro.nv_models import (
    AcModel,
    DcModel,
    DecModel,
    HyperfineModel,
    NvControls,
    make_nv_model,
)


def fd_fisher(model, theta, tau, phi=0.0, h=1e-6):
    """Finite-difference oracle for I(theta_j) = E[(d log p / d theta_j)^2]."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.size)
    p_plus = float(model.prob_plus(theta, tau, phi))
    for j in range(theta.size):
        dlogs = []
        for outcome in (+1, -1):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            lp = float(model.likelihood(outcome, tp, tau, phi))
            lm = float(model.likelihood(outcome, tm, tau, phi))
            dlogs.append((np.log(lp) - np.log(lm)) / (2 * h))
        out[j] = p_plus * dlogs[0] ** 2 + (1 - p_plus) * dlogs[1] ** 2
    return out


class TestDcLikelihood:
    def test_perfect_contrast(self):
        m = DcModel(inv_t2=0.0)
        assert float(m.prob_plus([0.0], tau=3.0)) == 1.0

    def test_dark_fringe(self):
        m = DcModel(inv_t2=0.0)
        # omega*tau + phi = pi
        assert float(m.prob_plus([np.pi / 4.0], tau=4.0)) == pytest.approx(0.0, abs=1e-15)

    def test_decay_value(self):
        m = DcModel(inv_t2=0.5)
        # omega = 0, tau*inv_t2 = 1
        assert float(m.prob_plus([0.0], tau=2.0)) == pytest.approx(
            (1 + np.exp(-1)) / 2, abs=1e-9
        )

    def test_outcomes_sum_to_one(self):
        m = DcModel(inv_t2=0.13, estimate_inv_t2=False)
        rng = np.random.default_rng(0)
        for _ in range(20):
            theta = rng.uniform(0, 1, size=1)
            tau, phi = rng.uniform(1, 20), rng.uniform(0, np.pi)
            p = float(m.prob_plus(theta, tau, phi))
            assert 0.0 <= p <= 1.0

    def test_periodicity_without_decay(self):
        m = DcModel(inv_t2=0.0)
        tau = 5.0
        for omega in (0.13, 0.77):
            a = float(m.prob_plus([omega], tau))
            b = float(m.prob_plus([omega + 2 * np.pi / tau], tau))
            assert a == pytest.approx(b, abs=1e-12)

    def test_gaussian_exponent_flag(self):
        m = DcModel(inv_t2=0.5, exponent_flag=2)
        # (tau*inv_t2)^2 = 4
        assert float(m.prob_plus([0.0], tau=4.0)) == pytest.approx(
            (1 + np.exp(-4)) / 2, abs=1e-12
        )


class TestAcLikelihood:
    def test_zero_amplitude(self):
        m = AcModel(omega_drive=0.2, inv_t2=0.25)
        tau = 4.0
        assert float(m.prob_plus([0.0], tau)) == pytest.approx(
            (1 + np.exp(-1)) / 2, abs=1e-12
        )

    def test_sine_node(self):
        m = AcModel(omega_drive=0.5, inv_t2=0.1)
        tau = 2 * np.pi  # omega*tau = pi
        assert float(m.prob_plus([0.8], tau)) == pytest.approx(
            (1 + np.exp(-tau * 0.1)) / 2, abs=1e-12
        )

    def test_generic_point(self):
        m = AcModel(omega_drive=0.2, inv_t2=0.0)
        expect = 0.5 + 0.5 * np.cos(2.5 * np.sin(0.4))
        assert float(m.prob_plus([0.5], tau=2.0)) == pytest.approx(expect, abs=1e-12)


class TestDecLikelihood:
    def test_unit_exponent_point(self):
        for beta in (1.5, 2.0, 3.7):
            m = DecModel(beta=beta)
            assert float(m.prob_plus([0.5], tau=2.0)) == pytest.approx(
                (1 + np.exp(-1)) / 2, abs=1e-12
            )

    def test_short_time_limit(self):
        m = DecModel(beta=2.0)
        assert float(m.prob_plus([0.05], tau=1e-6)) == pytest.approx(1.0, abs=1e-9)

    def test_beta_two_point(self):
        m = DecModel(beta=2.0)
        # tau*inv_t = 2 -> exponent 4
        assert float(m.prob_plus([0.5], tau=4.0)) == pytest.approx(
            (1 + np.exp(-4)) / 2, abs=1e-12
        )


class TestHyperfineLikelihood:
    def test_collapses_to_dc(self):
        hyper = HyperfineModel(inv_t2=0.07)
        dc = DcModel(inv_t2=0.07)
        for tau in (1.0, 7.5):
            a = float(hyper.prob_plus([0.4, 0.4], tau))
            b = float(dc.prob_plus([0.4], tau))
            assert a == pytest.approx(b, abs=1e-12)

    def test_cancellation(self):
        m = HyperfineModel(inv_t2=0.0)
        tau = 1.0
        # cos(w0) = -cos(w1) when w1 = pi - w0
        w0 = 0.6
        assert float(m.prob_plus([w0, np.pi - w0], tau)) == pytest.approx(0.5, abs=1e-12)

    def test_generic_point(self):
        m = HyperfineModel(inv_t2=0.0)
        expect = 0.5 + 0.25 * (np.cos(1.0) + np.cos(4.0))
        assert float(m.prob_plus([0.2, 0.8], tau=5.0)) == pytest.approx(expect, abs=1e-12)

    def test_swap_symmetry(self):
        m = HyperfineModel(inv_t2=0.05)
        a = float(m.prob_plus([0.3, 0.9], tau=4.0, phi=0.7))
        b = float(m.prob_plus([0.9, 0.3], tau=4.0, phi=0.7))
        assert a == pytest.approx(b, abs=1e-15)

    def test_phase_flag(self):
        with_phase = HyperfineModel(include_phase=True)
        without = HyperfineModel(include_phase=False)
        a = float(with_phase.prob_plus([0.3, 0.9], tau=4.0, phi=0.7))
        b = float(without.prob_plus([0.3, 0.9], tau=4.0, phi=0.7))
        c = float(without.prob_plus([0.3, 0.9], tau=4.0, phi=0.0))
        assert a != pytest.approx(b)
        assert b == pytest.approx(c, abs=1e-15)


class TestSampling:
    def test_deterministic_extremes(self):
        m = DcModel(inv_t2=0.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            y, logp = m.sample_outcome(rng, [0.0], tau=3.0)
            assert y == 1 and logp == pytest.approx(0.0, abs=1e-10)
            y, _ = m.sample_outcome(rng, [np.pi / 3.0], tau=3.0)
            assert y == -1

    def test_frequency_concentration(self):
        # p(+1) = 0.7 via cos(omega*tau) = 0.4
        omega = np.arccos(0.4)
        m = DcModel(inv_t2=0.0)
        rng = np.random.default_rng(123)
        n = 100_000
        hits = sum(
            m.sample_outcome(rng, [omega], tau=1.0)[0] == 1 for _ in range(n)
        )
        assert abs(hits / n - 0.7) < 0.005


class TestFisherInformation:
    def test_dc_decoherence_free_is_tau_squared(self):
        m = DcModel(inv_t2=0.0)
        for tau in (0.5, 3.0, 17.2):
            fi = m.fisher_information([0.4], tau)
            assert not fi.saturated
            assert fi.values[0] == tau * tau

    def test_ac_node_zero_information(self):
        m = AcModel(omega_drive=0.5, inv_t2=0.0)
        tau = 2 * np.pi  # sin(omega*tau) = 0
        fi = m.fisher_information([0.3], tau)
        assert fi.values[0] == pytest.approx(0.0, abs=1e-12)

    def test_saturated_flagged(self):
        # p(+1) is exactly 1 here, so the generic ratio is undefined
        m = DcModel(estimate_inv_t2=True)
        fi = m.fisher_information([0.0, 0.0], tau=1.0)
        assert fi.saturated

    @pytest.mark.parametrize(
        "model,sampler",
        [
            (DcModel(inv_t2=0.1), lambda r: [r.uniform(0.05, 0.95)]),
            (
                DcModel(estimate_inv_t2=True),
                lambda r: [r.uniform(0.05, 0.95), r.uniform(0.09, 0.11)],
            ),
            (
                DcModel(inv_t2=0.2, exponent_flag=2),
                lambda r: [r.uniform(0.05, 0.95)],
            ),
            (AcModel(omega_drive=0.2, inv_t2=0.05), lambda r: [r.uniform(0.05, 0.95)]),
            (
                AcModel(omega_drive=0.2, estimate_inv_t2=True),
                lambda r: [r.uniform(0.05, 0.95), r.uniform(0.09, 0.11)],
            ),
            (DecModel(beta=2.0), lambda r: [r.uniform(0.02, 0.09)]),
            (
                DecModel(),
                lambda r: [r.uniform(0.02, 0.09), r.uniform(1.6, 3.9)],
            ),
            (HyperfineModel(inv_t2=0.05), lambda r: sorted(r.uniform(0.05, 0.95, 2))),
        ],
    )
    def test_matches_finite_differences(self, model, sampler):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 100:
            theta = np.asarray(sampler(rng), dtype=float)
            tau = rng.uniform(1.0, 20.0)
            phi = rng.uniform(0.0, np.pi)
            fi = model.fisher_information(theta, tau, phi)
            if fi.saturated:
                continue
            oracle = fd_fisher(model, theta, tau, phi)
            scale = np.maximum(np.abs(oracle), 1e-8)
            if np.any(oracle < 1e-8):
                continue  # relative comparison meaningless at FI ~ 0
            assert np.all(np.abs(fi.values - oracle) / scale < 1e-5)
            checked += 1


class TestControlsAndFactory:
    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            NvControls(tau=0.0)

    def test_factory(self):
        assert isinstance(make_nv_model("nv_dc"), DcModel)
        assert isinstance(make_nv_model("nv_ac", omega_drive=0.2), AcModel)
        assert isinstance(make_nv_model("nv_dec", beta=2.0), DecModel)
        assert isinstance(make_nv_model("nv_hyperfine"), HyperfineModel)
        with pytest.raises(ValueError):
            make_nv_model("nv_unknown")
