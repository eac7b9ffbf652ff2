"""Homodyne Monte Carlo, detector imperfections and sideband power spectra.

Random streams are derived from ``numpy.random.SeedSequence(seed, spawn_key=stream)``
so a draw depends only on its seed and stream index, never on how many
workers produced the neighbouring draws.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import signal

from .errors import InvalidArgument, NonPhysicalWarning
from .gaussian import GaussianState, loss_channel
from .protocol import GainReport


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``stream`` indices under ``seed``."""
    key = stream or (0,)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class HomodyneConfig:
    theta: float = 0.0
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidArgument(f"n_samples must be >= 1, got {self.n_samples}")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class DetectorModel:
    eta: float = 1.0
    visibility: float = 1.0
    electronic_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise InvalidArgument(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 <= self.visibility <= 1.0:
            raise InvalidArgument(f"visibility must lie in [0, 1], got {self.visibility}")
        if self.electronic_noise < 0:
            raise InvalidArgument(f"electronic_noise must be >= 0, got {self.electronic_noise}")

    @property
    def is_ideal(self) -> bool:
        return self.eta == 1.0 and self.visibility == 1.0 and self.electronic_noise == 0.0


def quadrature_moments(state: GaussianState, mode: int, theta: float) -> tuple[float, float]:
    """Mean and variance of ``x cos(theta) + p sin(theta)`` on ``mode``."""
    m = state.mode_mean(mode)
    v = state.mode_cov(mode)
    c, s = math.cos(theta), math.sin(theta)
    mean = c * m[0] + s * m[1]
    var = c * c * v[0, 0] + s * s * v[1, 1] + 2 * s * c * v[0, 1]
    return float(mean), float(var)


def sample_quadrature(
    state: GaussianState, mode: int, cfg: HomodyneConfig, stream: tuple[int, ...] = (0,)
) -> np.ndarray:
    mean, var = quadrature_moments(state, mode, cfg.theta)
    rng = rng_for(cfg.seed, *stream)
    return mean + math.sqrt(var) * rng.standard_normal(cfg.n_samples)


class SampleStats(NamedTuple):
    mean: float
    variance: float
    se_mean: float
    se_variance: float


def estimate_stats(samples) -> SampleStats:
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.size
    if n < 2:
        raise InvalidArgument(f"need at least 2 samples, got {n}")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    return SampleStats(mean, var, math.sqrt(var / n), var * math.sqrt(2.0 / (n - 1)))


def correct_efficiency(measured_variance: float, eta: float) -> float:
    """Infer the pre-detector variance from one measured behind efficiency ``eta``."""
    if not 0.0 < eta <= 1.0:
        raise InvalidArgument(f"eta must lie in (0, 1], got {eta}")
    value = (measured_variance - (1.0 - eta)) / eta
    if value < 0:
        warnings.warn(
            f"inferred variance {value:.4g} is negative: measurement lies below the "
            f"detector-limited vacuum level",
            NonPhysicalWarning,
            stacklevel=2,
        )
    return value


def visibility_gain(visibility: float, n_copies: int = 2) -> float:
    """Mean gain when copies ``2..N`` overlap the first copy's mode with amplitude ``visibility``."""
    if not 0.0 <= visibility <= 1.0:
        raise InvalidArgument(f"visibility must lie in [0, 1], got {visibility}")
    if n_copies < 2:
        raise InvalidArgument(f"visibility model needs N >= 2, got {n_copies}")
    return (1.0 + (n_copies - 1) * visibility) / n_copies


def apply_visibility(
    means, visibility: float, n_copies: int = 2
) -> tuple[np.ndarray, GainReport]:
    """Scale ideal-network output means by the mode-overlap gain."""
    g = visibility_gain(visibility, n_copies)
    return np.asarray(means, dtype=float) * g, GainReport(g, g)


def mode_mismatch(state: GaussianState, visibility: float, reference: int = 0) -> GaussianState:
    """State-level counterpart of :func:`apply_visibility`.

    Projecting each non-reference copy onto the reference mode keeps an
    amplitude fraction ``visibility``; the orthogonal remainder is replaced by
    vacuum, which is a loss channel of transmission ``visibility**2``.
    """
    if not 0.0 <= visibility <= 1.0:
        raise InvalidArgument(f"visibility must lie in [0, 1], got {visibility}")
    if visibility == 1.0:
        return state
    if visibility == 0.0:
        # loss_channel excludes eta = 0; substitute vacuum on the copies directly
        mean = np.array(state.mean)
        cov = np.array(state.cov)
        for m in range(state.n_modes):
            if m == reference:
                continue
            sl = slice(2 * m, 2 * m + 2)
            mean[sl] = 0.0
            cov[sl, :] = 0.0
            cov[:, sl] = 0.0
            cov[sl, sl] = np.eye(2)
        return GaussianState(mean, cov)
    for m in range(state.n_modes):
        if m != reference:
            state = loss_channel(state, m, visibility**2)
    return state


def detect(state: GaussianState, mode: int, detector: DetectorModel) -> GaussianState:
    """Detector-side degradation: efficiency loss then electronic noise."""
    out = loss_channel(state, mode, detector.eta)
    if detector.electronic_noise:
        cov = np.array(out.cov)
        cov[2 * mode, 2 * mode] += detector.electronic_noise
        cov[2 * mode + 1, 2 * mode + 1] += detector.electronic_noise
        out = GaussianState(out.mean, cov)
    return out


def infer_variance(measured_variance: float, detector: DetectorModel) -> float:
    return correct_efficiency(measured_variance - detector.electronic_noise, detector.eta)


def infer_mean(measured_mean: float, detector: DetectorModel) -> float:
    return measured_mean / math.sqrt(detector.eta)


@dataclass(frozen=True)
class SidebandTraceConfig:
    """Parameters of a simulated spectrum-analyser measurement around one sideband.

    ``modulation_depth`` is the quadrature displacement in vacuum standard
    deviations, so the integrated modulation peak equals ``modulation_depth**2``
    shot-noise units within one resolution bandwidth. Each of the ``n_traces``
    traces spans ``segments_per_trace`` periodogram segments.
    """

    carrier_freq: float = 15e6
    span: float = 40e3
    rbw: float = 3e3
    n_traces: int = 10
    modulation_depth: float = 0.0
    noise_variance: float = 1.0
    sample_rate: float = 48e6
    seed: int = 0
    segments_per_trace: int = 50
    stream: int = 0

    def __post_init__(self):
        if self.rbw <= 0 or self.span <= 0:
            raise InvalidArgument("rbw and span must be positive")
        if not self.rbw < self.span:
            raise InvalidArgument(f"rbw ({self.rbw}) must be smaller than span ({self.span})")
        if self.sample_rate <= 2 * (self.carrier_freq + self.span / 2):
            raise InvalidArgument(
                f"sample_rate {self.sample_rate:g} Hz violates Nyquist for content up to "
                f"{self.carrier_freq + self.span / 2:g} Hz"
            )
        if self.n_traces < 1 or self.segments_per_trace < 1:
            raise InvalidArgument("n_traces and segments_per_trace must be >= 1")
        if self.noise_variance < 0:
            raise InvalidArgument(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def segment_length(self) -> int:
        return int(round(self.sample_rate / self.rbw))

    @property
    def trace_length(self) -> int:
        return self.segment_length * self.segments_per_trace

    @property
    def shot_noise_psd(self) -> float:
        """One-sided PSD of unit-variance white sampling noise."""
        return 2.0 / self.sample_rate


def simulate_sideband_trace(cfg: SidebandTraceConfig) -> np.ndarray:
    """``(n_traces, trace_length)`` samples of a modulated tone in white noise.

    Unit per-sample variance is the shot-noise level.
    """
    rng = rng_for(cfg.seed, cfg.stream)
    n = cfg.trace_length
    t = np.arange(n) / cfg.sample_rate
    # amplitude such that tone power / (shot PSD * rbw) == depth**2
    amplitude = cfg.modulation_depth * math.sqrt(4.0 * cfg.rbw / cfg.sample_rate)
    tone = amplitude * np.cos(2 * np.pi * cfg.carrier_freq * t)
    noise = math.sqrt(cfg.noise_variance) * rng.standard_normal((cfg.n_traces, n))
    return tone + noise


@dataclass(frozen=True)
class SpectrumResult:
    freqs: np.ndarray
    power_db: np.ndarray
    estimated_noise_floor: float
    estimated_peak_power: float

    @property
    def floor_db(self) -> float:
        return 10.0 * math.log10(self.estimated_noise_floor)

    @property
    def peak_db(self) -> float:
        return 10.0 * math.log10(self.estimated_peak_power) if self.estimated_peak_power > 0 else -math.inf


def power_spectrum(trace, cfg: SidebandTraceConfig, peak_halfwidth_bins: int = 3) -> SpectrumResult:
    """Trace-averaged Hann-window Welch spectrum over the configured span, in dB above shot noise.

    The noise floor is the mean normalized density away from the carrier; the
    peak power is the floor-subtracted power within ``peak_halfwidth_bins`` of
    the carrier, in units of shot noise per resolution bandwidth.
    """
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    nperseg = cfg.segment_length
    if trace.shape[-1] < 2 * nperseg:
        raise InvalidArgument(
            f"trace of {trace.shape[-1]} samples is too short for rbw {cfg.rbw:g} Hz "
            f"(needs >= {2 * nperseg})"
        )
    freqs, psd = signal.welch(
        trace,
        fs=cfg.sample_rate,
        window="hann",
        nperseg=nperseg,
        noverlap=0,
        detrend=False,
        scaling="density",
        axis=-1,
    )
    psd = psd.mean(axis=0) / cfg.shot_noise_psd
    df = freqs[1] - freqs[0]

    in_span = np.abs(freqs - cfg.carrier_freq) <= cfg.span / 2
    near_peak = np.abs(freqs - cfg.carrier_freq) <= peak_halfwidth_bins * df + 1e-9 * df
    floor_bins = in_span & ~near_peak
    if not floor_bins.any():
        raise InvalidArgument("span too narrow to estimate a noise floor away from the carrier")
    floor = float(psd[floor_bins].mean())
    peak = float((psd[near_peak] - floor).sum() * df / cfg.rbw)
    return SpectrumResult(freqs[in_span], 10.0 * np.log10(psd[in_span]), floor, peak)


def _csv_text(columns, rows, header) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def spectrum_csv(spectrum: SpectrumResult, header: Sequence[str] = ()) -> str:
    rows = ([f"{f:.6f}", f"{p:.6f}"] for f, p in zip(spectrum.freqs, spectrum.power_db))
    return _csv_text(["freq_hz", "power_db"], rows, header)


def stats_csv(rows, header: Sequence[str] = ()) -> str:
    """``rows`` are ``(theta, SampleStats)`` pairs; ``se`` is the variance standard error."""
    body = (
        [f"{theta:.12g}", f"{st.mean:.12g}", f"{st.variance:.12g}", f"{st.se_variance:.12g}"]
        for theta, st in rows
    )
    return _csv_text(["theta", "mean", "variance", "se"], body, header)
