"""Experiment drivers behind the ``sweep``, ``single`` and ``spectra`` subcommands."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigError, ConsistencyError, InvalidState, UndefinedGain
from ..gaussian import CoherentAmplitude, GaussianState, NoiseChannel, partial_trace
from ..protocol import (
    FidelityReport,
    GainReport,
    Method,
    analytic_report,
    average_fidelity,
    build_purifier,
    classical_baseline,
    estimate_gains,
    noisy_copies,
    purified_fidelity,
    purified_variance,
    run_purification,
    single_shot_fidelity,
    unity_gain_fidelity,
)
from ..sampler import (
    DetectorModel,
    HomodyneConfig,
    SampleStats,
    SidebandTraceConfig,
    SpectrumResult,
    apply_visibility,
    detect,
    estimate_stats,
    infer_mean,
    infer_variance,
    mode_mismatch,
    power_spectrum,
    quadrature_moments,
    sample_quadrature,
    simulate_sideband_trace,
    spectrum_csv,
    stats_csv,
)
from .config import ExperimentConfig, default_alpha

log = logging.getLogger(__name__)

PIPELINE_TOL = 1e-10
CSV_COLUMNS = (
    "lambda", "n_copies", "f_before", "f_after", "f_classical", "f_ave",
    "g_x", "g_p", "var_after", "method", "var_after_se", "f_after_se",
)
X, P = 0.0, math.pi / 2


def max_threads() -> int:
    raw = os.environ.get("CVPURIFY_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CVPURIFY_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"CVPURIFY_THREADS must be a positive integer, got {raw!r}")
    return n


@dataclass
class RunReport:
    config: dict
    cells: list[FidelityReport]
    provenance: dict
    checks: list[dict] = field(default_factory=list)
    samples: list[tuple[str, float, SampleStats]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c["passed"] for c in self.checks if c.get("fatal"))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "provenance": self.provenance,
            "checks": self.checks,
            "cells": [c.to_dict() for c in self.cells],
            "samples": [
                {"state": label, "theta": theta, **stats._asdict()}
                for label, theta, stats in self.samples
            ],
        }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def report_csv(report: RunReport) -> str:
    lines = [f"# {line}" for line in provenance_lines(report.provenance)]
    lines.append(",".join(CSV_COLUMNS))
    for c in report.cells:
        row = (
            c.lam, c.n_copies, c.f_before, c.f_after, c.f_classical, c.f_ave,
            c.gains.g_x, c.gains.g_p, c.variance_after, c.method.value,
            c.variance_after_se, c.f_after_se,
        )
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def provenance_lines(prov: dict) -> list[str]:
    return [
        f"cvpurify {prov['version']}",
        f"seed={prov['seed']} n_samples={prov['n_samples']} methods={','.join(prov['methods'])}",
    ]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_report(report: RunReport, out_dir, stem: str, formats=("csv", "json")) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    if "csv" in formats:
        p = out_dir / f"{stem}.csv"
        write_atomic(p, report_csv(report))
        written.append(p)
        if report.samples:
            p = out_dir / f"{stem}_samples.csv"
            rows = [(theta, st) for _, theta, st in report.samples]
            header = provenance_lines(report.provenance) + [
                "states: " + ",".join(label for label, _, _ in report.samples)
            ]
            write_atomic(p, stats_csv(rows, header))
            written.append(p)
    if "json" in formats:
        p = out_dir / f"{stem}.json"
        write_atomic(p, _json_text(report.to_dict()))
        written.append(p)
    return written


def _provenance(cfg: ExperimentConfig, methods) -> dict:
    mc = cfg.monte_carlo
    return {
        "version": __version__,
        "seed": cfg.seed if mc is None or mc.seed is None else mc.seed,
        "n_samples": 0 if mc is None else mc.n_samples,
        "methods": sorted({m.value for m in methods}),
        "convention": "[x,p]=2i, vacuum variance 1",
    }


def configured_gains(cfg: ExperimentConfig, n_copies: int) -> GainReport:
    if cfg.gains_override is not None:
        return cfg.gains_override
    if cfg.detector.visibility < 1.0:
        return apply_visibility([1.0, 1.0], cfg.detector.visibility, n_copies)[1]
    return GainReport()


def _pipeline_check(lam: float, n_copies: int, alpha: CoherentAmplitude) -> dict:
    """Ideal matrix pipeline against the closed forms for one cell."""
    out = run_purification(noisy_copies(alpha, n_copies, NoiseChannel.symmetric(lam)),
                           build_purifier(n_copies))
    expected = purified_variance(lam, n_copies)
    var_err = float(np.max(np.abs(np.diag(out.cov) - expected)))
    mean_err = float(np.max(np.abs(out.mean - alpha.vector)))
    f_err = abs(unity_gain_fidelity(out.cov[0, 0], out.cov[1, 1]) - purified_fidelity(lam, n_copies))
    worst = max(var_err, mean_err, f_err)
    return {
        "name": f"pipeline lambda={lam:g} N={n_copies}",
        "passed": worst < PIPELINE_TOL,
        "max_abs_error": worst,
        "tolerance": PIPELINE_TOL,
        "fatal": True,
    }


def detected_purified(alpha, lam, n_copies, detector: DetectorModel) -> tuple[GaussianState, GaussianState]:
    """Purified mode before and after the detector, with mode mismatch applied to the copies."""
    copies = noisy_copies(alpha, n_copies, NoiseChannel.symmetric(lam))
    out = run_purification(mode_mismatch(copies, detector.visibility), build_purifier(n_copies))
    return out, detect(out, 0, detector)


def _sample_inferred(state: GaussianState, thetas, n_samples, seed, stream, detector):
    """Homodyne-sample ``state`` at each angle and undo the detector; returns ``{theta: stats}``."""
    results = {}
    for k, theta in enumerate(thetas):
        raw = estimate_stats(
            sample_quadrature(state, 0, HomodyneConfig(theta, n_samples, seed), stream=(*stream, k))
        )
        eta = detector.eta
        results[theta] = SampleStats(
            infer_mean(raw.mean, detector),
            infer_variance(raw.variance, detector),
            raw.se_mean / math.sqrt(eta),
            raw.se_variance / eta,
        )
    return results


def _fidelity_se(f: float, vx: float, vp: float, se_x: float, se_p: float) -> float:
    # first-order propagation through 2 / sqrt((1 + vx)(1 + vp))
    return f * 0.5 * math.hypot(se_x / (1 + vx), se_p / (1 + vp))


def _clip_fidelity(f: float, notes: dict, name: str) -> float:
    """Sampled variances can dip below the uncertainty bound; cap the estimate at 1."""
    if f > 1.0:
        notes.setdefault("clipped_to_physical", []).append(name)
        return 1.0
    return f


def _finite_fidelity(fn, alpha, gains, vx, vp, notes, name) -> float:
    # sampled covariances below the uncertainty bound are rejected by fidelity_coherent
    try:
        return _clip_fidelity(fn(alpha, gains, vx, vp), notes, name)
    except InvalidState:
        notes.setdefault("clipped_to_physical", []).append(name)
        vx, vp = max(vx, 1.0), max(vp, 1.0)
        return _clip_fidelity(fn(alpha, gains, vx, vp), notes, name)


def _within(value, expected, se, k=3.0) -> bool:
    return abs(value - expected) <= k * se


def _sweep_cell(index: int, lam: float, n_copies: int, cfg: ExperimentConfig):
    alpha = cfg.alpha or default_alpha()
    gains = configured_gains(cfg, n_copies)
    checks = [_pipeline_check(lam, n_copies, alpha)]
    cells = [analytic_report(lam, n_copies, gains, cfg.prior)]
    samples = []
    mc = cfg.monte_carlo
    if mc is not None:
        seed = cfg.seed if mc.seed is None else mc.seed
        truth, measured = detected_purified(alpha, lam, n_copies, cfg.detector)
        thetas = tuple(dict.fromkeys((X, P) + tuple(mc.thetas)))
        stats = _sample_inferred(measured, thetas, mc.n_samples, seed, (index,), cfg.detector)
        vx, vp = stats[X].variance, stats[P].variance
        notes = {}
        f_after = _clip_fidelity(unity_gain_fidelity(vx, vp), notes, "f_after")
        f_ave = None
        if cfg.prior is not None:
            f_ave = _clip_fidelity(average_fidelity(cfg.prior, gains, vx, vp), notes, "f_ave")
        se = math.hypot(stats[X].se_variance, stats[P].se_variance) / 2
        cells.append(FidelityReport(
            lam=lam,
            n_copies=n_copies,
            variance_before=purified_variance(lam, 1),
            variance_after=0.5 * (vx + vp),
            f_before=purified_fidelity(lam, 1),
            f_after=f_after,
            f_classical=classical_baseline(lam, n_copies).fidelity,
            gains=gains,
            f_ave=f_ave,
            method=Method.SAMPLED,
            classical_extension=n_copies != 2,
            variance_after_se=se,
            f_after_se=_fidelity_se(f_after, vx, vp, stats[X].se_variance, stats[P].se_variance),
            notes=notes,
        ))
        for theta, st in stats.items():
            expected = quadrature_moments(truth, 0, theta)[1]
            checks.append({
                "name": f"sampled variance lambda={lam:g} N={n_copies} theta={theta:.6g}",
                "passed": _within(st.variance, expected, st.se_variance),
                "value": st.variance,
                "expected": expected,
                "se": st.se_variance,
                "fatal": False,
            })
            samples.append((f"purified lambda={lam:g} N={n_copies}", theta, st))
    return cells, checks, samples


def run_sweep(cfg: ExperimentConfig) -> RunReport:
    """Closed-form fidelity curves over the ``(lambda, N)`` grid, optionally with Monte Carlo rows."""
    if not cfg.lambda_grid or not cfg.n_copies_list:
        raise ConfigError("lambda_grid and n_copies_list must be non-empty")
    grid = sorted({(float(l), int(n)) for l in cfg.lambda_grid for n in cfg.n_copies_list})
    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        futures = [pool.submit(_sweep_cell, i, lam, n, cfg) for i, (lam, n) in enumerate(grid)]
        results = [f.result() for f in futures]
    cells, checks, samples = [], [], []
    for c, k, s in results:
        cells.extend(c)
        checks.extend(k)
        samples.extend(s)
    report = RunReport(cfg.echo(), cells, _provenance(cfg, [c.method for c in cells]), checks, samples)
    _raise_on_fatal(report)
    return report


def _raise_on_fatal(report: RunReport) -> None:
    failed = [c for c in report.checks if c.get("fatal") and not c["passed"]]
    if failed:
        raise ConsistencyError("; ".join(
            f"{c['name']}: error {c.get('max_abs_error')} > {c.get('tolerance')}" for c in failed
        ))


def _single_params(cfg: ExperimentConfig) -> tuple[float, int]:
    if len(cfg.lambda_grid) != 1 or len(cfg.n_copies_list) != 1:
        raise ConfigError(
            "single mode needs exactly one lambda in lambda_grid and one entry in n_copies_list"
        )
    return float(cfg.lambda_grid[0]), int(cfg.n_copies_list[0])


def run_single(cfg: ExperimentConfig) -> RunReport:
    """Full pipeline for one ``(lambda, N)``.

    Prepares the copies, adds noise, applies mode mismatch, purifies, degrades
    by the detector and infers the detector efficiency back out, either exactly
    or from homodyne samples.
    """
    lam, n_copies = _single_params(cfg)
    alpha = cfg.alpha or default_alpha()
    det = cfg.detector
    checks = [_pipeline_check(lam, n_copies, alpha)]

    corrupted = partial_trace(noisy_copies(alpha, n_copies, NoiseChannel.symmetric(lam)), [0])
    measured_before = detect(corrupted, 0, det)
    truth, measured_after = detected_purified(alpha, lam, n_copies, det)

    try:
        pipeline_gains = estimate_gains(alpha.vector, truth.mean)
        model_gains = apply_visibility([1.0, 1.0], det.visibility, n_copies)[1]
        gain_err = max(abs(pipeline_gains.g_x - model_gains.g_x), abs(pipeline_gains.g_p - model_gains.g_p))
        checks.append({
            "name": "visibility gain model vs pipeline",
            "passed": gain_err < PIPELINE_TOL,
            "max_abs_error": gain_err,
            "tolerance": PIPELINE_TOL,
            "fatal": True,
        })
    except UndefinedGain:
        pipeline_gains = apply_visibility([1.0, 1.0], det.visibility, n_copies)[1]
    gains = cfg.gains_override or pipeline_gains

    samples = []
    mc = cfg.monte_carlo
    if mc is None:
        method = Method.ANALYTIC
        vbx, vbp = (infer_variance(quadrature_moments(measured_before, 0, t)[1], det) for t in (X, P))
        vx, vp = (infer_variance(quadrature_moments(measured_after, 0, t)[1], det) for t in (X, P))
        var_se = f_se = None
        inferred_err = max(abs(vx - truth.cov[0, 0]), abs(vp - truth.cov[1, 1]))
        checks.append({
            "name": "efficiency inference round trip",
            "passed": inferred_err < PIPELINE_TOL,
            "max_abs_error": inferred_err,
            "tolerance": PIPELINE_TOL,
            "fatal": True,
        })
    else:
        method = Method.SAMPLED
        seed = cfg.seed if mc.seed is None else mc.seed
        thetas = tuple(dict.fromkeys((X, P) + tuple(mc.thetas)))
        before = _sample_inferred(measured_before, thetas, mc.n_samples, seed, (0,), det)
        after = _sample_inferred(measured_after, thetas, mc.n_samples, seed, (1,), det)
        vbx, vbp = before[X].variance, before[P].variance
        vx, vp = after[X].variance, after[P].variance
        var_se = math.hypot(after[X].se_variance, after[P].se_variance) / 2
        for label, stats, state in (("corrupted", before, corrupted), ("purified", after, truth)):
            for theta, st in stats.items():
                expected = quadrature_moments(state, 0, theta)[1]
                checks.append({
                    "name": f"sampled {label} variance theta={theta:.6g}",
                    "passed": _within(st.variance, expected, st.se_variance),
                    "value": st.variance,
                    "expected": expected,
                    "se": st.se_variance,
                    "fatal": False,
                })
                samples.append((label, theta, st))

    notes = {"alpha": {"x_mean": alpha.x_mean, "p_mean": alpha.p_mean},
             "variance_after_xp": [vx, vp], "variance_before_xp": [vbx, vbp],
             "pipeline_gains": {"g_x": pipeline_gains.g_x, "g_p": pipeline_gains.g_p}}
    f_after = _finite_fidelity(single_shot_fidelity, alpha, gains, vx, vp, notes, "f_after")
    f_before = _finite_fidelity(single_shot_fidelity, alpha, GainReport(), vbx, vbp, notes, "f_before")
    if mc is not None:
        f_se = _fidelity_se(f_after, vx, vp, after[X].se_variance, after[P].se_variance)
    classical = classical_baseline(lam, n_copies)
    f_ave = None
    if cfg.prior is not None:
        f_ave = _clip_fidelity(average_fidelity(cfg.prior, gains, vx, vp), notes, "f_ave")
        notes["prior"] = cfg.prior.interpretation
        notes["prior_variance_per_quadrature"] = cfg.prior.variance_per_quadrature
    cell = FidelityReport(
        lam=lam,
        n_copies=n_copies,
        variance_before=0.5 * (vbx + vbp),
        variance_after=0.5 * (vx + vp),
        f_before=f_before,
        f_after=f_after,
        f_classical=classical.fidelity,
        gains=gains,
        f_ave=f_ave,
        method=method,
        classical_extension=classical.extension,
        variance_after_se=var_se,
        f_after_se=f_se,
        notes=notes,
    )
    report = RunReport(cfg.echo(), [cell], _provenance(cfg, [method]), checks, samples)
    _raise_on_fatal(report)
    return report


@dataclass
class SpectraReport:
    lam: float
    n_copies: int
    spectra: dict[str, SpectrumResult]
    expected_floor_db: dict[str, float]
    provenance: dict
    trace_config: dict

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "n_copies": self.n_copies,
            "provenance": self.provenance,
            "trace_config": self.trace_config,
            "spectra": {
                name: {
                    "floor_db": s.floor_db,
                    "expected_floor_db": self.expected_floor_db[name],
                    "estimated_noise_floor": s.estimated_noise_floor,
                    "estimated_peak_power": s.estimated_peak_power,
                    "peak_db": s.peak_db,
                }
                for name, s in self.spectra.items()
            },
        }


def run_spectra(cfg: ExperimentConfig) -> SpectraReport:
    """Phase-quadrature spectra of the input, corrupted and purified states.

    Uses the first ``lambda`` and ``N`` of the grids. The three states come from
    the ideal matrix pipeline; each spectrum's floor is the state's p variance and
    its modulation depth is the state's mean p.
    """
    lam, n_copies = float(cfg.lambda_grid[0]), int(cfg.n_copies_list[0])
    sc = cfg.spectra
    p_mean = 2.0 * math.sqrt(sc.photons)
    alpha = CoherentAmplitude(0.0, p_mean)
    copies = noisy_copies(alpha, n_copies, NoiseChannel.symmetric(lam))
    states = {
        "input": partial_trace(noisy_copies(alpha, n_copies, NoiseChannel.symmetric(0.0)), [0]),
        "corrupted": partial_trace(copies, [0]),
        "purified": run_purification(copies, build_purifier(n_copies)),
    }
    base = SidebandTraceConfig(
        carrier_freq=sc.carrier_freq, span=sc.span, rbw=sc.rbw, n_traces=sc.n_traces,
        sample_rate=sc.sample_rate, seed=cfg.seed, segments_per_trace=sc.segments_per_trace,
    )
    spectra, expected = {}, {}
    for stream, (name, state) in enumerate(states.items()):
        mean, var = quadrature_moments(state, 0, P)
        tcfg = replace(base, modulation_depth=mean, noise_variance=var, stream=stream)
        spectra[name] = power_spectrum(simulate_sideband_trace(tcfg), tcfg)
        expected[name] = 10.0 * math.log10(var)
    prov = {
        "version": __version__,
        "seed": cfg.seed,
        "n_samples": base.trace_length * base.n_traces,
        "methods": [Method.SAMPLED.value],
        "convention": "[x,p]=2i, vacuum variance 1",
    }
    trace_cfg = {k: getattr(base, k) for k in (
        "carrier_freq", "span", "rbw", "n_traces", "segments_per_trace", "sample_rate")}
    trace_cfg["photons"] = sc.photons
    trace_cfg["analysis_bandwidth"] = sc.analysis_bandwidth
    return SpectraReport(lam, n_copies, spectra, expected, prov, trace_cfg)


def write_spectra(report: SpectraReport, out_dir, formats=("csv", "json")) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    header = provenance_lines(report.provenance)
    if "csv" in formats:
        for name, s in report.spectra.items():
            p = out_dir / f"spectrum_{name}.csv"
            write_atomic(p, spectrum_csv(s, header + [f"state={name} lambda={report.lam:g} N={report.n_copies}"]))
            written.append(p)
    if "json" in formats:
        p = out_dir / "spectra.json"
        write_atomic(p, _json_text(report.summary()))
        written.append(p)
    return written
