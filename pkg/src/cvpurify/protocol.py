"""N-copy purification network, closed-form predictions and fidelity figures of merit.

The purifier concentrates ``N`` noisy copies into one mode with a cascade of
``N - 1`` beam splitters, then mixes that mode with a vacuum ancilla on a
splitter of transmissivity ``1/N``. The transmitted arm carries
``q' = (1/N) sum_j q_j + sqrt((N-1)/N) q_anc``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Literal

import numpy as np

from .errors import InvalidArgument, UndefinedGain
from .gaussian import (
    CoherentAmplitude,
    GaussianState,
    NoiseChannel,
    SymplecticTransform,
    additive_noise,
    apply,
    beam_splitter,
    coherent_state,
    fidelity_coherent,
    partial_trace,
    tensor,
    vacuum_state,
)


class Method(str, Enum):
    ANALYTIC = "analytic"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class BeamSplitterStep:
    mode_i: int
    mode_j: int
    transmissivity: float

    def transform(self) -> SymplecticTransform:
        return beam_splitter(self.mode_i, self.mode_j, self.transmissivity)


@dataclass(frozen=True)
class PurifierNetwork:
    """Concentration cascade plus final ancilla splitter for ``n_copies`` inputs.

    Modes ``0 .. N-1`` are the copies and mode ``N`` is the vacuum ancilla. The
    purified output is left in mode 0.
    """

    n_copies: int
    concentration_stages: tuple[BeamSplitterStep, ...]
    final_splitter: BeamSplitterStep
    a: float
    b: float

    @property
    def n_modes(self) -> int:
        return self.n_copies + 1

    @property
    def output_mode(self) -> int:
        return self.final_splitter.mode_i

    @property
    def ancilla_mode(self) -> int:
        return self.final_splitter.mode_j

    def steps(self) -> tuple[BeamSplitterStep, ...]:
        return self.concentration_stages + (self.final_splitter,)

    def transform(self) -> SymplecticTransform:
        """Whole network as a single ``2(N+1)``-dimensional symplectic map."""
        total = SymplecticTransform(np.eye(2 * self.n_modes))
        for step in self.steps():
            total = total.then(step.transform(), self.n_modes)
        return total

    def commutator_defect(self) -> float:
        return abs(self.a**2 * self.n_copies + self.b**2 - 1.0)


def build_purifier(n_copies: int) -> PurifierNetwork:
    """Left-leaning cascade: stage ``k`` mixes the running sum with copy ``k`` at ``t = k/(k+1)``."""
    if int(n_copies) != n_copies or n_copies < 2:
        raise InvalidArgument(f"purifier needs N >= 2 copies, got {n_copies}")
    n = int(n_copies)
    stages = tuple(BeamSplitterStep(0, k, k / (k + 1)) for k in range(1, n))
    final = BeamSplitterStep(0, n, 1.0 / n)
    return PurifierNetwork(n, stages, final, a=1.0 / n, b=math.sqrt((n - 1) / n))


def noisy_copies(
    alpha: CoherentAmplitude, n_copies: int, channel: NoiseChannel
) -> GaussianState:
    """``n_copies`` identical coherent states, each through its own noise channel."""
    state = coherent_state([alpha] * n_copies)
    for mode in range(n_copies):
        state = additive_noise(state, mode, channel)
    return state


def run_purification(inputs: GaussianState, net: PurifierNetwork) -> GaussianState:
    """Push ``inputs`` through ``net`` with a vacuum ancilla; return the purified mode."""
    if inputs.n_modes != net.n_copies:
        raise InvalidArgument(
            f"network expects {net.n_copies} input modes, state has {inputs.n_modes}"
        )
    full = apply(tensor(inputs, vacuum_state(1)), net.transform())
    # the second purified arm is classically correlated with the first and is discarded
    return partial_trace(full, [net.output_mode])


def _check_lambda(lam: float) -> None:
    if lam < 0 or not math.isfinite(lam):
        raise InvalidArgument(f"noise variance lambda must be finite and >= 0, got {lam}")


def purified_variance(lam: float, n_copies: int) -> float:
    _check_lambda(lam)
    if n_copies < 1:
        raise InvalidArgument(f"n_copies must be >= 1, got {n_copies}")
    return 1.0 + lam / n_copies


def purified_fidelity(lam: float, n_copies: int) -> float:
    _check_lambda(lam)
    if n_copies < 1:
        raise InvalidArgument(f"n_copies must be >= 1, got {n_copies}")
    return 1.0 / (1.0 + lam / (2.0 * n_copies))


def unity_gain_fidelity(vx: float, vp: float) -> float:
    return 2.0 / math.sqrt((1.0 + vx) * (1.0 + vp))


@dataclass(frozen=True)
class ClassicalBaseline:
    variance: float
    fidelity: float
    extension: bool


def classical_baseline(lam: float, n_copies: int) -> ClassicalBaseline:
    """Measure-and-reprepare: heterodyne each copy, average, re-prepare a coherent state.

    Heterodyning costs one vacuum unit and re-preparation another, so the
    output variance is ``2 + lam/N``. Only ``N = 2`` is established; larger ``N``
    is flagged with ``extension=True``.
    """
    _check_lambda(lam)
    if n_copies < 2:
        raise InvalidArgument(f"classical baseline needs N >= 2, got {n_copies}")
    var = 2.0 + lam / n_copies
    return ClassicalBaseline(var, unity_gain_fidelity(var, var), extension=n_copies != 2)


@dataclass(frozen=True)
class GainReport:
    g_x: float = 1.0
    g_p: float = 1.0

    @property
    def is_unity(self) -> bool:
        return self.g_x == 1.0 and self.g_p == 1.0


def estimate_gains(input_mean, output_mean) -> GainReport:
    """Componentwise ratio of output to input mean quadratures ``(x, p)``."""
    inp = np.asarray(input_mean, dtype=float).reshape(-1)
    out = np.asarray(output_mean, dtype=float).reshape(-1)
    if inp.shape != (2,) or out.shape != (2,):
        raise InvalidArgument("gain estimation needs single-mode (x, p) mean vectors")
    zero = [name for name, v in zip("xp", inp) if v == 0.0]
    if zero:
        raise UndefinedGain(f"input mean is zero in quadrature(s) {', '.join(zero)}")
    return GainReport(float(out[0] / inp[0]), float(out[1] / inp[1]))


def single_shot_fidelity(
    alpha: CoherentAmplitude, gains: GainReport, vx: float, vp: float, cxp: float = 0.0
) -> float:
    """Fidelity of ``|alpha>`` with the Gaussian output ``(g_x x, g_p p)`` of variances ``vx, vp``."""
    if vx < 0 or vp < 0:
        raise InvalidArgument(f"variances must be non-negative, got ({vx}, {vp})")
    out = GaussianState(
        [gains.g_x * alpha.x_mean, gains.g_p * alpha.p_mean], [[vx, cxp], [cxp, vp]]
    )
    return fidelity_coherent(out, alpha)


@dataclass(frozen=True)
class CoherentPrior:
    """Gaussian distribution of input amplitudes in quadrature units.

    ``x_mean`` and ``p_mean`` are each drawn from a normal distribution of
    variance ``variance_per_quadrature`` around ``center``.
    """

    center: CoherentAmplitude = field(default_factory=lambda: CoherentAmplitude(0.0, 0.0))
    variance_per_quadrature: float = 0.0
    interpretation: str = "explicit"

    def __post_init__(self):
        if self.variance_per_quadrature < 0:
            raise InvalidArgument(
                f"prior variance must be >= 0, got {self.variance_per_quadrature}"
            )

    @property
    def photon_number_uncertainty(self) -> float:
        """Standard deviation of ``|alpha|^2`` over the (classical) prior."""
        s = self.variance_per_quadrature / 4.0  # variance of Re(alpha) and Im(alpha)
        return math.sqrt(4.0 * s * self.center.photon_number + 4.0 * s * s)

    @property
    def mean_photon_number(self) -> float:
        return self.center.photon_number + self.variance_per_quadrature / 2.0


PhotonNumberReading = Literal["std", "variance"]


def prior_from_photon_number_uncertainty(
    delta_n: float, *, reading: PhotonNumberReading
) -> CoherentPrior:
    """Vacuum-centred isotropic prior whose photon-number spread is ``delta_n``.

    ``reading`` states how ``delta_n`` is to be understood and has no default:
    ``"std"`` takes it as the standard deviation of ``|alpha|^2``,
    ``"variance"`` as its variance. For a vacuum-centred prior the photon-number
    standard deviation equals the mean photon number ``variance_per_quadrature / 2``.
    """
    if delta_n < 0:
        raise InvalidArgument(f"photon-number uncertainty must be >= 0, got {delta_n}")
    if reading == "std":
        std = delta_n
    elif reading == "variance":
        std = math.sqrt(delta_n)
    else:
        raise InvalidArgument(f"unknown photon-number reading {reading!r}")
    return CoherentPrior(
        CoherentAmplitude(0.0, 0.0),
        2.0 * std,
        interpretation=f"vacuum-centred, photon-number {reading} = {delta_n:g}",
    )


def average_fidelity(prior: CoherentPrior, gains: GainReport, vx: float, vp: float) -> float:
    """Prior-weighted mean of :func:`single_shot_fidelity` for a diagonal output covariance.

    Each quadrature contributes an independent Gaussian integral
    ``E[exp(-c q^2 / 2)] = exp(-c q0^2 / (2 (1 + c s))) / sqrt(1 + c s)`` with
    ``c = (g - 1)^2 / (1 + V)``.
    """
    if vx < 0 or vp < 0:
        raise InvalidArgument(f"variances must be non-negative, got ({vx}, {vp})")
    s = prior.variance_per_quadrature
    value = unity_gain_fidelity(vx, vp)
    for g, v, q0 in (
        (gains.g_x, vx, prior.center.x_mean),
        (gains.g_p, vp, prior.center.p_mean),
    ):
        c = (g - 1.0) ** 2 / (1.0 + v)
        value *= math.exp(-c * q0 * q0 / (2.0 * (1.0 + c * s))) / math.sqrt(1.0 + c * s)
    return value


@dataclass
class FidelityReport:
    lam: float
    n_copies: int
    variance_before: float
    variance_after: float
    f_before: float
    f_after: float
    f_classical: float
    gains: GainReport = field(default_factory=GainReport)
    f_ave: float | None = None
    method: Method = Method.ANALYTIC
    classical_extension: bool = False
    variance_after_se: float | None = None
    f_after_se: float | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("f_before", "f_after", "f_classical", "f_ave"):
            value = getattr(self, name)
            if value is not None and not -1e-12 <= value <= 1.0 + 1e-12:
                raise InvalidArgument(f"{name} = {value} lies outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["lambda"] = d.pop("lam")
        return d


def analytic_report(
    lam: float,
    n_copies: int,
    gains: GainReport | None = None,
    prior: CoherentPrior | None = None,
) -> FidelityReport:
    """Closed-form predictions for one ``(lambda, N)`` cell."""
    gains = gains or GainReport()
    var_after = purified_variance(lam, n_copies)
    classical = classical_baseline(lam, n_copies)
    f_ave = None
    notes = {}
    if prior is not None:
        f_ave = average_fidelity(prior, gains, var_after, var_after)
        notes["prior"] = prior.interpretation
    return FidelityReport(
        lam=lam,
        n_copies=n_copies,
        variance_before=purified_variance(lam, 1),
        variance_after=var_after,
        f_before=purified_fidelity(lam, 1),
        f_after=purified_fidelity(lam, n_copies),
        f_classical=classical.fidelity,
        gains=gains,
        f_ave=f_ave,
        classical_extension=classical.extension,
        notes=notes,
    )
