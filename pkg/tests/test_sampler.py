import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvpurify.errors import InvalidArgument, NonPhysicalWarning
from cvpurify.gaussian import (
    CoherentAmplitude,
    GaussianState,
    NoiseChannel,
    additive_noise,
    coherent_state,
    loss_channel,
    vacuum_state,
)
from cvpurify.protocol import build_purifier, estimate_gains, noisy_copies, run_purification
from cvpurify.sampler import (
    DetectorModel,
    HomodyneConfig,
    SidebandTraceConfig,
    apply_visibility,
    correct_efficiency,
    detect,
    estimate_stats,
    infer_variance,
    mode_mismatch,
    power_spectrum,
    quadrature_moments,
    rng_for,
    sample_quadrature,
    simulate_sideband_trace,
    spectrum_csv,
    stats_csv,
    visibility_gain,
)

N = 100_000


def noisy(var):
    return GaussianState([0.0, 0.0], var * np.eye(2))


@pytest.mark.parametrize("theta", [0.0, 0.3, math.pi / 2, 2.0])
def test_vacuum_samples(theta):
    s = estimate_stats(sample_quadrature(vacuum_state(1), 0, HomodyneConfig(theta, N, seed=1)))
    assert abs(s.variance - 1.0) < 3 * s.se_variance
    assert abs(s.mean) < 3 * s.se_mean


def test_noisy_p_quadrature_samples():
    s = estimate_stats(sample_quadrature(noisy(8.0), 0, HomodyneConfig(math.pi / 2, N, seed=2)))
    assert abs(s.variance - 8.0) < 3 * s.se_variance


def test_flat_phase_scan():
    state = additive_noise(coherent_state([CoherentAmplitude(3, 4)]), 0, NoiseChannel.symmetric(7))
    for k, theta in enumerate(np.linspace(0, math.pi, 9)):
        s = estimate_stats(sample_quadrature(state, 0, HomodyneConfig(theta, N, seed=3), stream=(k,)))
        assert abs(s.variance - 8.0) < 3 * s.se_variance


def test_quadrature_moments_with_correlation():
    state = GaussianState([1.0, 2.0], [[3.0, 0.8], [0.8, 2.0]])
    mean, var = quadrature_moments(state, 0, math.pi / 4)
    assert mean == pytest.approx((1 + 2) / math.sqrt(2))
    assert var == pytest.approx(0.5 * 3 + 0.5 * 2 + 0.8)


def test_seed_determinism():
    cfg = HomodyneConfig(0.4, 1000, seed=2**63 + 5)
    a = sample_quadrature(noisy(2.0), 0, cfg, stream=(3, 1))
    b = sample_quadrature(noisy(2.0), 0, cfg, stream=(3, 1))
    c = sample_quadrature(noisy(2.0), 0, cfg, stream=(3, 2))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(rng_for(9, 4).standard_normal(5), rng_for(9, 4).standard_normal(5))


def test_homodyne_config_validation():
    with pytest.raises(InvalidArgument):
        HomodyneConfig(0.0, 0)
    with pytest.raises(InvalidArgument):
        HomodyneConfig(0.0, 10, seed=2**64)


def test_estimate_stats():
    s = estimate_stats(np.full(10, 3.0))
    assert s.variance == 0 and s.mean == 3.0
    n = 10**6
    x = np.random.default_rng(0).standard_normal(n)
    s = estimate_stats(x)
    bound = 3 * math.sqrt(2) / math.sqrt(n)
    assert 1 - bound <= s.variance <= 1 + bound
    y = 5 + 2 * np.random.default_rng(1).standard_normal(N)
    s = estimate_stats(y)
    assert abs(s.mean - 5) < 3 * s.se_mean
    assert s.se_variance == pytest.approx(s.variance * math.sqrt(2 / (N - 1)))
    with pytest.raises(InvalidArgument):
        estimate_stats([1.0])


def test_correct_efficiency():
    assert correct_efficiency(1.0, 0.37) == pytest.approx(1.0)
    assert correct_efficiency(6.6, 0.8) == pytest.approx(8.0)
    with pytest.raises(InvalidArgument):
        correct_efficiency(2.0, 0.0)
    with pytest.warns(NonPhysicalWarning):
        correct_efficiency(0.1, 0.8)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(1.0, 20.0), eta=st.floats(0.01, 1.0))
def test_efficiency_round_trip(v, eta):
    measured = loss_channel(noisy(v), 0, eta).cov[0, 0]
    assert abs(correct_efficiency(measured, eta) - v) < 1e-12 * max(1.0, v / eta)


def test_detector_with_electronic_noise_round_trip():
    det = DetectorModel(eta=0.8, electronic_noise=0.05)
    measured = detect(noisy(4.5), 0, det).cov[1, 1]
    assert infer_variance(measured, det) == pytest.approx(4.5, abs=1e-12)


def test_detector_model_ranges():
    for kwargs in ({"eta": 0.0}, {"eta": 1.2}, {"visibility": 1.3}, {"electronic_noise": -1}):
        with pytest.raises(InvalidArgument):
            DetectorModel(**kwargs)


def test_visibility_model():
    means = np.array([4.0, -2.0])
    out, g = apply_visibility(means, 1.0)
    assert np.array_equal(out, means) and g.is_unity
    _, g = apply_visibility(means, 0.97)
    assert 0.95 <= g.g_x <= 1.0 and 0.95 <= g.g_p <= 1.0
    _, g = apply_visibility(means, 0.0, n_copies=2)
    assert g.g_x == pytest.approx(0.5)
    with pytest.raises(InvalidArgument):
        apply_visibility(means, 1.01)


@pytest.mark.parametrize("vis,n", [(0.97, 2), (0.5, 3), (0.0, 2), (0.8, 5)])
def test_mode_mismatch_matches_gain_model(vis, n):
    alpha = CoherentAmplitude(6.0, -3.0)
    copies = noisy_copies(alpha, n, NoiseChannel.symmetric(2.0))
    out = run_purification(mode_mismatch(copies, vis), build_purifier(n))
    g = estimate_gains(alpha.vector, out.mean)
    assert g.g_x == pytest.approx(visibility_gain(vis, n), abs=1e-12)
    assert g.g_p == pytest.approx(visibility_gain(vis, n), abs=1e-12)
    assert out.is_physical()


def test_trace_config_validation():
    with pytest.raises(InvalidArgument):
        SidebandTraceConfig(sample_rate=30e6)
    with pytest.raises(InvalidArgument):
        SidebandTraceConfig(rbw=50e3, span=40e3)


def test_power_spectrum_too_short_trace():
    cfg = SidebandTraceConfig()
    with pytest.raises(InvalidArgument):
        power_spectrum(np.zeros(cfg.segment_length), cfg)


def _spectrum(var, depth=0.0, seed=0):
    cfg = SidebandTraceConfig(modulation_depth=depth, noise_variance=var, seed=seed)
    return power_spectrum(simulate_sideband_trace(cfg), cfg)


def test_shot_noise_floor():
    s = _spectrum(1.0, seed=4)
    assert abs(s.floor_db) < 0.3
    assert s.freqs.min() >= 15e6 - 20e3 and s.freqs.max() <= 15e6 + 20e3


@pytest.mark.parametrize("var", [1.0, 4.5, 8.0])
def test_floor_calibration(var):
    assert abs(_spectrum(var, seed=5).floor_db - 10 * math.log10(var)) < 0.5


def test_peak_invariance_and_floor_drop():
    depth = 2 * math.sqrt(736)
    corrupted = _spectrum(8.0, depth, seed=6)
    purified = _spectrum(4.5, depth, seed=7)
    assert abs(corrupted.peak_db - purified.peak_db) < 0.5
    assert abs(corrupted.peak_db - 10 * math.log10(depth**2)) < 0.5
    drop = corrupted.floor_db - purified.floor_db
    assert abs(drop - 10 * math.log10(8 / 4.5)) < 0.5


def test_pure_shot_noise_trace():
    cfg = SidebandTraceConfig(modulation_depth=0.0, noise_variance=1.0, seed=8)
    trace = simulate_sideband_trace(cfg)
    assert trace.shape == (cfg.n_traces, cfg.trace_length)
    assert trace.var() == pytest.approx(1.0, rel=0.01)


def test_spectrum_determinism_and_csv():
    a, b = _spectrum(2.0, 3.0, seed=9), _spectrum(2.0, 3.0, seed=9)
    assert np.array_equal(a.power_db, b.power_db)
    text = spectrum_csv(a, ["seed=9"])
    lines = text.splitlines()
    assert lines[0] == "# seed=9"
    assert lines[1] == "freq_hz,power_db"
    assert len(lines) == 2 + a.freqs.size


def test_stats_csv_columns():
    s = estimate_stats([1.0, 2.0, 3.0])
    lines = stats_csv([(0.0, s)]).splitlines()
    assert lines[0] == "theta,mean,variance,se"
    assert lines[1].startswith("0,2,1,")
