"""Experiment configuration: loading, schema/range validation, line-anchored diagnostics.

Config files are YAML or JSON (JSON documents parse as YAML). Example::

    schema_version: 1
    mode: sweep
    lambda_grid: [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    n_copies_list: [2, 3, 10]
    detector: {eta: 0.8, visibility: 1.0, electronic_noise: 0.0}
    gains_override: {g_x: 0.96, g_p: 0.99}
    prior: {photon_number_uncertainty: 100, reading: variance}
    monte_carlo: {n_samples: 100000, thetas: [0.0, 0.785398, 1.570796]}
    output_path: out
    seed: 7
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError
from ..gaussian import CoherentAmplitude
from ..protocol import CoherentPrior, GainReport, prior_from_photon_number_uncertainty
from ..sampler import DetectorModel

SCHEMA_VERSION = 1
MODES = ("sweep", "single", "spectra")
DEFAULT_PHOTONS = 736.0

_TOP_KEYS = {
    "schema_version", "mode", "lambda_grid", "n_copies_list", "detector",
    "gains_override", "prior", "monte_carlo", "alpha", "spectra", "output_path", "seed",
}
_SPECTRA_KEYS = {
    "carrier_freq", "span", "rbw", "n_traces", "segments_per_trace", "sample_rate", "photons",
    "analysis_bandwidth",
}


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int | None
    message: str

    def __str__(self):
        where = f"line {self.line}" if self.line is not None else "line ?"
        return f"{where}: {self.path}: {self.message}"


@dataclass(frozen=True)
class MonteCarloConfig:
    n_samples: int = 100_000
    thetas: tuple[float, ...] = (0.0, math.pi / 4, math.pi / 2)
    seed: int | None = None


@dataclass(frozen=True)
class SpectraConfig:
    carrier_freq: float = 15e6
    span: float = 40e3
    rbw: float = 3e3
    n_traces: int = 10
    segments_per_trace: int = 50
    sample_rate: float = 48e6
    photons: float = DEFAULT_PHOTONS
    # Bandwidth quoted for the single-frequency variance measurements. It is
    # recorded alongside rbw but does not enter the simulated spectra.
    analysis_bandwidth: float = 100e3


@dataclass
class ExperimentConfig:
    mode: str
    lambda_grid: list[float]
    n_copies_list: list[int]
    detector: DetectorModel = field(default_factory=DetectorModel)
    gains_override: GainReport | None = None
    prior: CoherentPrior | None = None
    monte_carlo: MonteCarloConfig | None = None
    alpha: CoherentAmplitude | None = None
    spectra: SpectraConfig = field(default_factory=SpectraConfig)
    output_path: str = "out"
    seed: int = 0
    source: str | None = None

    def echo(self) -> dict:
        """Plain-data view for reports."""
        d: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "lambda_grid": list(self.lambda_grid),
            "n_copies_list": list(self.n_copies_list),
            "detector": vars(self.detector).copy(),
            "output_path": self.output_path,
            "seed": self.seed,
        }
        if self.gains_override is not None:
            d["gains_override"] = {"g_x": self.gains_override.g_x, "g_p": self.gains_override.g_p}
        if self.prior is not None:
            d["prior"] = {
                "center": {"x_mean": self.prior.center.x_mean, "p_mean": self.prior.center.p_mean},
                "variance_per_quadrature": self.prior.variance_per_quadrature,
                "interpretation": self.prior.interpretation,
            }
        if self.monte_carlo is not None:
            d["monte_carlo"] = {
                "n_samples": self.monte_carlo.n_samples,
                "thetas": list(self.monte_carlo.thetas),
                "seed": self.monte_carlo.seed,
            }
        if self.alpha is not None:
            d["alpha"] = {"x_mean": self.alpha.x_mean, "p_mean": self.alpha.p_mean}
        d["spectra"] = vars(self.spectra).copy()
        return d


def default_alpha(photons: float = DEFAULT_PHOTONS) -> CoherentAmplitude:
    """Amplitude of ``photons`` mean photons at 45 degrees, so both quadratures are displaced."""
    q = math.sqrt(2.0 * photons)
    return CoherentAmplitude(q, q)


class _Lines:
    """Maps dotted key paths to 1-based source lines using the YAML node tree."""

    def __init__(self, root):
        self.root = root

    def __call__(self, path: str) -> int | None:
        node = self.root
        line = None if node is None else node.start_mark.line + 1
        if not path:
            return line
        for part in path.replace("]", "").replace("[", ".").split("."):
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == part:
                        line = k.start_mark.line + 1
                        node = v
                        break
                else:
                    return line
            elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
                node = node.value[int(part)]
                line = node.start_mark.line + 1
            else:
                return line
        return line


class _Checker:
    def __init__(self, lines: _Lines):
        self.lines = lines
        self.diagnostics: list[Diagnostic] = []

    def error(self, path: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(path, self.lines(path), message))

    def number(self, data: dict, key: str, path: str, *, default=None, lo=None, hi=None,
               lo_open=False, integer=False, required=False):
        if key not in data:
            if required:
                self.error(path, "required field is missing")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(path, f"expected a number, got {type(value).__name__}")
            return default
        if integer and (not float(value).is_integer()):
            self.error(path, f"expected an integer, got {value!r}")
            return default
        if not math.isfinite(value):
            self.error(path, f"must be finite, got {value!r}")
            return default
        bad_lo = lo is not None and (value <= lo if lo_open else value < lo)
        bad_hi = hi is not None and value > hi
        if bad_lo or bad_hi:
            left = "(" if lo_open else "["
            self.error(path, f"value {value!r} out of range {left}{lo if lo is not None else '-inf'}, "
                             f"{hi if hi is not None else 'inf'}]")
            return default
        return int(value) if integer else float(value)

    def mapping(self, data: dict, key: str, allowed: set[str]) -> dict | None:
        if key not in data or data[key] is None:
            return None
        value = data[key]
        if not isinstance(value, dict):
            self.error(key, f"expected a mapping, got {type(value).__name__}")
            return None
        for extra in sorted(set(value) - allowed):
            self.error(f"{key}.{extra}", "unknown field")
        return value


def _parse(data: Any, lines: _Lines) -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    ck = _Checker(lines)
    if not isinstance(data, dict):
        ck.error("", "top level must be a mapping")
        return None, ck.diagnostics
    for extra in sorted(set(data) - _TOP_KEYS):
        ck.error(extra, "unknown field")

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        ck.error("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    mode = data.get("mode", "sweep")
    if mode not in MODES:
        ck.error("mode", f"must be one of {', '.join(MODES)}; got {mode!r}")

    lambdas: list[float] = []
    grid = data.get("lambda_grid")
    if not isinstance(grid, list) or not grid:
        ck.error("lambda_grid", "must be a non-empty list of noise variances")
    else:
        for i, _ in enumerate(grid):
            v = ck.number(dict(enumerate(grid)), i, f"lambda_grid[{i}]", lo=0.0)
            if v is not None:
                lambdas.append(v)

    copies: list[int] = []
    nlist = data.get("n_copies_list")
    if not isinstance(nlist, list) or not nlist:
        ck.error("n_copies_list", "must be a non-empty list of copy counts >= 2")
    else:
        for i, _ in enumerate(nlist):
            v = ck.number(dict(enumerate(nlist)), i, f"n_copies_list[{i}]", lo=2, integer=True)
            if v is not None:
                copies.append(v)

    detector = DetectorModel()
    det = ck.mapping(data, "detector", {"eta", "visibility", "electronic_noise"})
    if det is not None:
        eta = ck.number(det, "eta", "detector.eta", default=1.0, lo=0.0, hi=1.0, lo_open=True)
        vis = ck.number(det, "visibility", "detector.visibility", default=1.0, lo=0.0, hi=1.0)
        el = ck.number(det, "electronic_noise", "detector.electronic_noise", default=0.0, lo=0.0)
        detector = DetectorModel(eta, vis, el)

    gains = None
    g = ck.mapping(data, "gains_override", {"g_x", "g_p"})
    if g is not None:
        gx = ck.number(g, "g_x", "gains_override.g_x", required=True)
        gp = ck.number(g, "g_p", "gains_override.g_p", required=True)
        if gx is not None and gp is not None:
            gains = GainReport(gx, gp)

    alpha = None
    a = ck.mapping(data, "alpha", {"x_mean", "p_mean"})
    if a is not None:
        ax = ck.number(a, "x_mean", "alpha.x_mean", default=0.0)
        ap = ck.number(a, "p_mean", "alpha.p_mean", default=0.0)
        alpha = CoherentAmplitude(ax, ap)

    prior = _parse_prior(data, ck)

    mc = None
    m = ck.mapping(data, "monte_carlo", {"n_samples", "thetas", "theta", "seed"})
    if m is not None:
        n = ck.number(m, "n_samples", "monte_carlo.n_samples", default=100_000, lo=2, integer=True)
        thetas = MonteCarloConfig.thetas
        if "theta" in m:
            th = ck.number(m, "theta", "monte_carlo.theta")
            thetas = (th,) if th is not None else thetas
        if "thetas" in m:
            raw = m["thetas"]
            if not isinstance(raw, list) or not raw:
                ck.error("monte_carlo.thetas", "must be a non-empty list of angles in radians")
            else:
                thetas = tuple(
                    t for i in range(len(raw))
                    if (t := ck.number(dict(enumerate(raw)), i, f"monte_carlo.thetas[{i}]")) is not None
                )
        mseed = ck.number(m, "seed", "monte_carlo.seed", lo=0, hi=2**64 - 1, integer=True)
        mc = MonteCarloConfig(n, thetas, mseed)

    spectra = SpectraConfig()
    sp = ck.mapping(data, "spectra", _SPECTRA_KEYS)
    if sp is not None:
        base = SpectraConfig()
        vals = {}
        for key in ("carrier_freq", "span", "rbw", "sample_rate", "analysis_bandwidth"):
            vals[key] = ck.number(sp, key, f"spectra.{key}", default=getattr(base, key), lo=0.0, lo_open=True)
        for key in ("n_traces", "segments_per_trace"):
            vals[key] = ck.number(sp, key, f"spectra.{key}", default=getattr(base, key), lo=1, integer=True)
        vals["photons"] = ck.number(sp, "photons", "spectra.photons", default=base.photons, lo=0.0)
        spectra = SpectraConfig(**vals)
        if spectra.rbw >= spectra.span:
            ck.error("spectra.rbw", f"rbw {spectra.rbw:g} must be smaller than span {spectra.span:g}")
        if spectra.sample_rate <= 2 * (spectra.carrier_freq + spectra.span / 2):
            ck.error("spectra.sample_rate", "sample rate violates Nyquist for the requested band")

    out = data.get("output_path", "out")
    if not isinstance(out, str) or not out:
        ck.error("output_path", "must be a non-empty string")
        out = "out"

    seed = ck.number(data, "seed", "seed", default=0, lo=0, hi=2**64 - 1, integer=True)

    if ck.diagnostics:
        return None, ck.diagnostics
    return ExperimentConfig(
        mode=mode,
        lambda_grid=lambdas,
        n_copies_list=copies,
        detector=detector,
        gains_override=gains,
        prior=prior,
        monte_carlo=mc,
        alpha=alpha,
        spectra=spectra,
        output_path=out,
        seed=seed if seed is not None else 0,
    ), []


def _parse_prior(data: dict, ck: _Checker) -> CoherentPrior | None:
    p = ck.mapping(
        data, "prior", {"center", "variance_per_quadrature", "photon_number_uncertainty", "reading"}
    )
    if p is None:
        return None
    has_var = "variance_per_quadrature" in p
    has_dn = "photon_number_uncertainty" in p
    if has_var == has_dn:
        ck.error("prior", "give exactly one of variance_per_quadrature or photon_number_uncertainty")
        return None
    if has_dn:
        dn = ck.number(p, "photon_number_uncertainty", "prior.photon_number_uncertainty", lo=0.0)
        reading = p.get("reading")
        if reading not in ("std", "variance"):
            ck.error("prior.reading" if "reading" in p else "prior",
                     "photon_number_uncertainty needs reading: std or variance")
            return None
        if "center" in p:
            ck.error("prior.center", "photon_number_uncertainty priors are vacuum-centred")
            return None
        return None if dn is None else prior_from_photon_number_uncertainty(dn, reading=reading)
    var = ck.number(p, "variance_per_quadrature", "prior.variance_per_quadrature", lo=0.0)
    center = CoherentAmplitude(0.0, 0.0)
    if "center" in p:
        c = p["center"]
        if not isinstance(c, dict):
            ck.error("prior.center", "expected a mapping with x_mean and p_mean")
            return None
        cx = ck.number(c, "x_mean", "prior.center.x_mean", default=0.0)
        cp = ck.number(c, "p_mean", "prior.center.p_mean", default=0.0)
        center = CoherentAmplitude(cx, cp)
    return None if var is None else CoherentPrior(center, var, interpretation="explicit quadrature variance")


def parse_config_text(text: str, source: str = "<string>") -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        return None, [Diagnostic("", line, f"cannot parse config: {getattr(exc, 'problem', exc)}")]
    cfg, diags = _parse(data, _Lines(root))
    if cfg is not None:
        cfg.source = source
    return cfg, diags


def validate_config(path) -> list[Diagnostic]:
    """Diagnostics for the file at ``path``; an empty list means it is valid.

    Raises ``OSError`` if the file cannot be read.
    """
    text = Path(path).read_text()
    return parse_config_text(text, str(path))[1]


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    cfg, diags = parse_config_text(text, str(path))
    if cfg is None:
        raise ConfigError(diags)
    return cfg
