import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cvpurify.errors import InvalidArgument, UndefinedGain
from cvpurify.gaussian import (
    CoherentAmplitude,
    GaussianState,
    NoiseChannel,
    apply,
    is_symplectic,
    phase_rotation,
    symplectic_form,
    vacuum_state,
    wigner_overlap_oracle,
    coherent_state,
    fidelity_coherent,
)
from cvpurify.protocol import (
    CoherentPrior,
    FidelityReport,
    GainReport,
    analytic_report,
    average_fidelity,
    build_purifier,
    classical_baseline,
    estimate_gains,
    noisy_copies,
    prior_from_photon_number_uncertainty,
    purified_fidelity,
    purified_variance,
    run_purification,
    single_shot_fidelity,
    unity_gain_fidelity,
)


def test_build_purifier_two_copies():
    net = build_purifier(2)
    assert len(net.concentration_stages) == 1
    assert net.concentration_stages[0].transmissivity == 0.5
    assert net.final_splitter.transmissivity == 0.5
    assert net.a == 0.5
    assert net.b == pytest.approx(1 / math.sqrt(2))


def test_two_copy_output_coefficients():
    # transmitted arm: 1/2 (q1 + q2) + 1/sqrt(2) q_v on both quadratures
    S = build_purifier(2).transform().S
    assert np.allclose(S[0], [0.5, 0, 0.5, 0, 1 / math.sqrt(2), 0], atol=1e-15)
    assert np.allclose(S[1], [0, 0.5, 0, 0.5, 0, 1 / math.sqrt(2)], atol=1e-15)


@pytest.mark.parametrize("n", range(2, 11))
def test_build_purifier_coefficients(n):
    net = build_purifier(n)
    assert net.a == pytest.approx(1 / n)
    assert net.b == pytest.approx(math.sqrt((n - 1) / n))
    assert net.commutator_defect() < 1e-15
    assert len(net.concentration_stages) == n - 1
    assert net.final_splitter.transmissivity == pytest.approx(1 / n)
    S = net.transform().S
    assert is_symplectic(S)
    row = S[0]
    assert np.allclose(row[0 : 2 * n : 2], 1 / n, atol=1e-13)
    assert row[2 * n] == pytest.approx(math.sqrt((n - 1) / n), abs=1e-13)


def test_concentration_stage_sums_amplitude():
    n = 5
    net = build_purifier(n)
    alpha = CoherentAmplitude(1.0, -2.0)
    state = coherent_state([alpha] * n)
    for step in net.concentration_stages:
        state = apply(state, step.transform())
    assert np.allclose(state.mode_mean(0), math.sqrt(n) * alpha.vector, atol=1e-12)
    for m in range(1, n):
        assert np.allclose(state.mode_mean(m), 0, atol=1e-12)


def test_build_purifier_rejects_small_n():
    for bad in (0, 1, 2.5):
        with pytest.raises(InvalidArgument):
            build_purifier(bad)


def test_run_purification_examples():
    alpha = CoherentAmplitude(3.0, -1.0)
    out = run_purification(noisy_copies(alpha, 2, NoiseChannel.symmetric(7.0)), build_purifier(2))
    assert np.allclose(np.diag(out.cov), 4.5, atol=1e-12)
    assert np.allclose(out.mean, alpha.vector, atol=1e-12)

    pure = run_purification(noisy_copies(alpha, 2, NoiseChannel.symmetric(0.0)), build_purifier(2))
    assert fidelity_coherent(pure, alpha) == pytest.approx(1.0, abs=1e-12)

    out10 = run_purification(noisy_copies(alpha, 10, NoiseChannel.symmetric(7.0)), build_purifier(10))
    assert np.allclose(np.diag(out10.cov), 1.7, atol=1e-12)

    with pytest.raises(InvalidArgument):
        run_purification(vacuum_state(3), build_purifier(2))


def test_purified_variance_and_fidelity():
    assert purified_variance(7, 2) == 4.5
    assert purified_variance(0, 4) == 1.0
    assert purified_variance(7, 1) == 8.0
    assert purified_fidelity(7, 2) == pytest.approx(1 / (1 + 7 / 4))
    assert purified_fidelity(7, 2) == pytest.approx(0.36363636, abs=1e-8)
    assert purified_fidelity(7, 1) == pytest.approx(2 / 9)
    assert purified_fidelity(0, 5) == 1.0
    for f in (purified_variance, purified_fidelity):
        with pytest.raises(InvalidArgument):
            f(-1, 2)


def test_fidelity_monotone_in_n():
    for lam in (0.1, 1.0, 7.0):
        values = [purified_fidelity(lam, n) for n in range(1, 200)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert values[-1] > 0.98


def test_classical_baseline():
    c = classical_baseline(7, 2)
    assert c.variance == 5.5
    assert c.fidelity == pytest.approx(2 / 6.5)
    assert not c.extension
    assert classical_baseline(0, 2).variance == 2.0
    assert c.variance > purified_variance(7, 2)
    assert classical_baseline(7, 3).extension
    with pytest.raises(InvalidArgument):
        classical_baseline(-0.5, 2)


def test_estimate_gains():
    assert estimate_gains([2.0, -1.0], [2.0, -1.0]) == GainReport(1.0, 1.0)
    g = estimate_gains([10.0, 4.0], [9.6, 3.96])
    assert g.g_x == pytest.approx(0.96)
    assert g.g_p == pytest.approx(0.99)
    with pytest.raises(UndefinedGain):
        estimate_gains([0.0, 1.0], [0.0, 1.0])


def test_ideal_network_has_unity_gain():
    alpha = CoherentAmplitude(5.0, -3.0)
    for n in (2, 3, 7):
        out = run_purification(noisy_copies(alpha, n, NoiseChannel.symmetric(2.0)), build_purifier(n))
        g = estimate_gains(alpha.vector, out.mean)
        assert g.g_x == pytest.approx(1.0, abs=1e-12)
        assert g.g_p == pytest.approx(1.0, abs=1e-12)


def test_single_shot_fidelity():
    alpha = CoherentAmplitude(12.0, -7.0)
    unity = single_shot_fidelity(alpha, GainReport(), 4.5, 3.0)
    assert unity == pytest.approx(unity_gain_fidelity(4.5, 3.0))
    zero = CoherentAmplitude(0.0, 0.0)
    assert single_shot_fidelity(zero, GainReport(0.5, 0.7), 4.5, 3.0) == pytest.approx(unity)


def test_single_shot_fidelity_with_gain_error_against_wigner_oracle():
    # |alpha|^2 = 736 photons split between quadratures
    q = math.sqrt(2 * 736)
    alpha = CoherentAmplitude(q, q)
    assert alpha.photon_number == pytest.approx(736)
    gains = GainReport(0.96, 0.99)
    f = single_shot_fidelity(alpha, gains, 4.5, 4.5)
    assert f < unity_gain_fidelity(4.5, 4.5)
    out = GaussianState([0.96 * q, 0.99 * q], 4.5 * np.eye(2))
    assert f == pytest.approx(wigner_overlap_oracle(out, alpha), abs=1e-6)


def _average_by_quadrature(prior, gains, vx, vp):
    """2-D adaptive quadrature of F(alpha) P(alpha); independent of the closed form."""
    s = prior.variance_per_quadrature
    sd = math.sqrt(s)
    cx, cp = prior.center.x_mean, prior.center.p_mean

    def integrand(p, x):
        dx, dp = (gains.g_x - 1) * x, (gains.g_p - 1) * p
        f = 2 / math.sqrt((1 + vx) * (1 + vp)) * math.exp(-dx * dx / (2 * (1 + vx)) - dp * dp / (2 * (1 + vp)))
        w = math.exp(-((x - cx) ** 2 + (p - cp) ** 2) / (2 * s)) / (2 * math.pi * s)
        return f * w

    val, _ = integrate.dblquad(integrand, cx - 10 * sd, cx + 10 * sd, cp - 10 * sd, cp + 10 * sd,
                               epsabs=1e-11, epsrel=1e-10)
    return val


@pytest.mark.parametrize(
    "center,var,gains,v",
    [
        ((0.0, 0.0), 20.0, (0.96, 0.99), (4.5, 4.5)),
        ((0.0, 0.0), 200.0, (0.96, 0.99), (4.5, 4.5)),
        ((30.0, -12.0), 50.0, (0.9, 1.05), (3.0, 6.0)),
    ],
)
def test_average_fidelity_matches_quadrature(center, var, gains, v):
    prior = CoherentPrior(CoherentAmplitude(*center), var)
    g = GainReport(*gains)
    closed = average_fidelity(prior, g, *v)
    assert closed == pytest.approx(_average_by_quadrature(prior, g, *v), abs=1e-6)


def test_average_fidelity_limits():
    alpha = CoherentAmplitude(20.0, 11.0)
    gains = GainReport(0.96, 0.99)
    delta = CoherentPrior(alpha, 0.0)
    assert average_fidelity(delta, gains, 4.5, 4.5) == pytest.approx(single_shot_fidelity(alpha, gains, 4.5, 4.5))
    wide = CoherentPrior(alpha, 1e4)
    assert average_fidelity(wide, GainReport(), 4.5, 4.5) == pytest.approx(2 / 5.5)
    with pytest.raises(InvalidArgument):
        CoherentPrior(alpha, -1.0)


def test_prior_from_photon_number_uncertainty():
    std = prior_from_photon_number_uncertainty(100, reading="std")
    assert std.variance_per_quadrature == 200
    assert std.photon_number_uncertainty == pytest.approx(100)
    assert std.mean_photon_number == pytest.approx(100)
    var = prior_from_photon_number_uncertainty(100, reading="variance")
    assert var.variance_per_quadrature == pytest.approx(20)
    assert var.photon_number_uncertainty ** 2 == pytest.approx(100)
    with pytest.raises(InvalidArgument):
        prior_from_photon_number_uncertainty(100, reading="fwhm")
    with pytest.raises(TypeError):
        prior_from_photon_number_uncertainty(100)


def test_photon_number_uncertainty_against_sampling():
    prior = CoherentPrior(CoherentAmplitude(10.0, 4.0), 6.0)
    rng = np.random.default_rng(5)
    x = rng.normal(10.0, math.sqrt(6.0), 400_000)
    p = rng.normal(4.0, math.sqrt(6.0), 400_000)
    n = (x * x + p * p) / 4
    assert n.std() == pytest.approx(prior.photon_number_uncertainty, rel=1e-2)


def test_analytic_report_worked_example():
    r = analytic_report(7.0, 2)
    assert (r.variance_before, r.variance_after) == (8.0, 4.5)
    assert r.f_before == pytest.approx(2 / 9, abs=1e-12)
    assert r.f_after == pytest.approx(4 / 11, abs=1e-12)
    assert r.f_classical == pytest.approx(2 / 6.5, abs=1e-12)
    assert r.f_after >= r.f_before
    assert r.to_dict()["method"] == "analytic"
    with pytest.raises(InvalidArgument):
        FidelityReport(1, 2, 1, 1, 1.2, 1, 1)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 10), lam=st.floats(0, 10), theta=st.floats(0, 2 * math.pi),
       x=st.floats(-20, 20), p=st.floats(-20, 20))
def test_phase_covariance(n, lam, theta, x, p):
    """Rotating every input by theta rotates the output mean and keeps its variances."""
    alpha = CoherentAmplitude(x, p)
    net = build_purifier(n)
    base = run_purification(noisy_copies(alpha, n, NoiseChannel.symmetric(lam)), net)
    rotated_in = noisy_copies(alpha, n, NoiseChannel.symmetric(lam))
    for m in range(n):
        rotated_in = apply(rotated_in, phase_rotation(m, theta))
    rotated_out = run_purification(rotated_in, net)
    R = phase_rotation(0, theta).S
    assert np.allclose(rotated_out.mean, R @ base.mean, atol=1e-9)
    assert np.allclose(rotated_out.cov, base.cov, atol=1e-9)
    assert np.allclose(base.mean, alpha.vector, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0, 100))
def test_quantum_beats_classical(lam):
    gap = classical_baseline(lam, 2).variance - purified_variance(lam, 2)
    assert gap == pytest.approx(1.0, abs=1e-12)
    if lam > 0:
        assert purified_fidelity(lam, 2) > classical_baseline(lam, 2).fidelity


def test_network_symplectic_form_preserved():
    omega = symplectic_form(11)
    S = build_purifier(10).transform().S
    assert np.max(np.abs(S @ omega @ S.T - omega)) < 1e-10
