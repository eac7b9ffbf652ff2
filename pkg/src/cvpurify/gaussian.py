r"""Gaussian-state algebra in the :math:`[\hat x, \hat p] = 2i` convention.

In this convention the vacuum has unit variance in every quadrature, so the
covariance matrix of any coherent state is the identity and the fidelity of a
single-mode Gaussian state with matched mean to a coherent state reads
``2 / sqrt((1 + Vx) (1 + Vp))``. Most other libraries use ``hbar = 1`` or
``hbar = 1/2``; values from them must be rescaled by ``2 / hbar`` (covariances)
before use here.

Phase-space vectors are ordered ``(x1, p1, x2, p2, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import block_diag

from .errors import InvalidArgument, InvalidState

SYMMETRY_RTOL = 1e-10
PHYSICALITY_TOL = 1e-9
SYMPLECTIC_TOL = 1e-10


def symplectic_form(n_modes: int) -> np.ndarray:
    """Block-diagonal symplectic form with 2x2 blocks ``[[0, 1], [-1, 0]]``."""
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def _mode_slice(mode: int) -> slice:
    return slice(2 * mode, 2 * mode + 2)


@dataclass(frozen=True)
class CoherentAmplitude:
    """Mean quadratures of a coherent state; ``alpha = (x_mean + i p_mean) / 2``."""

    x_mean: float
    p_mean: float

    def __post_init__(self):
        if not (np.isfinite(self.x_mean) and np.isfinite(self.p_mean)):
            raise InvalidArgument(f"non-finite coherent amplitude {self!r}")

    @classmethod
    def from_alpha(cls, alpha: complex) -> "CoherentAmplitude":
        alpha = complex(alpha)
        return cls(2.0 * alpha.real, 2.0 * alpha.imag)

    @property
    def alpha(self) -> complex:
        return complex(self.x_mean, self.p_mean) / 2.0

    @property
    def photon_number(self) -> float:
        return abs(self.alpha) ** 2

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x_mean, self.p_mean], dtype=float)


@dataclass(frozen=True)
class NoiseChannel:
    """Additive Gaussian noise: variance ``lambda_x`` / ``lambda_p`` added per quadrature."""

    lambda_x: float
    lambda_p: float

    def __post_init__(self):
        if self.lambda_x < 0 or self.lambda_p < 0:
            raise InvalidArgument(
                f"noise variances must be non-negative, got ({self.lambda_x}, {self.lambda_p})"
            )

    @classmethod
    def symmetric(cls, lam: float) -> "NoiseChannel":
        return cls(lam, lam)

    @property
    def is_symmetric(self) -> bool:
        return self.lambda_x == self.lambda_p


@dataclass(frozen=True, eq=False)
class GaussianState:
    """First and second moments of an ``n_modes``-mode Gaussian state.

    The arrays are copied and made read-only on construction, so instances can
    be shared freely.
    """

    mean: np.ndarray
    cov: np.ndarray
    n_modes: int = field(init=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if mean.size == 0 or mean.size % 2:
            raise InvalidState(f"mean vector must have even, non-zero length; got {mean.size}")
        n = mean.size // 2
        if cov.shape != (2 * n, 2 * n):
            raise InvalidState(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise InvalidState("mean and covariance must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
            raise InvalidState("covariance matrix is not symmetric")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "n_modes", n)

    def __eq__(self, other):
        if not isinstance(other, GaussianState):
            return NotImplemented
        return (
            self.n_modes == other.n_modes
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )

    def allclose(self, other: "GaussianState", atol: float = 1e-10) -> bool:
        return (
            self.n_modes == other.n_modes
            and np.allclose(self.mean, other.mean, rtol=0, atol=atol)
            and np.allclose(self.cov, other.cov, rtol=0, atol=atol)
        )

    def mode_mean(self, mode: int) -> np.ndarray:
        self._check_mode(mode)
        return self.mean[_mode_slice(mode)].copy()

    def mode_cov(self, mode: int) -> np.ndarray:
        self._check_mode(mode)
        return self.cov[_mode_slice(mode), _mode_slice(mode)].copy()

    def physicality_margin(self) -> float:
        """Smallest eigenvalue of ``cov + i Omega`` (non-negative for physical states)."""
        herm = self.cov + 1j * symplectic_form(self.n_modes)
        return float(np.linalg.eigvalsh(herm).min())

    def is_physical(self, tol: float = PHYSICALITY_TOL) -> bool:
        return self.physicality_margin() >= -tol

    def validate(self) -> "GaussianState":
        margin = self.physicality_margin()
        if margin < -PHYSICALITY_TOL:
            raise InvalidState(
                f"covariance violates the uncertainty relation (min eigenvalue {margin:.3e})"
            )
        return self

    def purity(self) -> float:
        """``1 / sqrt(det cov)``; equals 1 for pure states."""
        return float(1.0 / np.sqrt(np.linalg.det(self.cov)))

    def _check_mode(self, mode: int) -> None:
        if not 0 <= mode < self.n_modes:
            raise InvalidArgument(f"mode {mode} out of range for {self.n_modes}-mode state")


def vacuum_state(n_modes: int) -> GaussianState:
    if n_modes < 1:
        raise InvalidArgument(f"n_modes must be >= 1, got {n_modes}")
    return GaussianState(np.zeros(2 * n_modes), np.eye(2 * n_modes))


def coherent_state(amps: Sequence[CoherentAmplitude]) -> GaussianState:
    amps = list(amps)
    if not amps:
        raise InvalidArgument("coherent_state needs at least one amplitude")
    mean = np.concatenate([a.vector for a in amps])
    return GaussianState(mean, np.eye(mean.size))


def tensor(*states: GaussianState) -> GaussianState:
    """Product state of the given states, in order."""
    if not states:
        raise InvalidArgument("tensor needs at least one state")
    return GaussianState(
        np.concatenate([s.mean for s in states]), block_diag(*[s.cov for s in states])
    )


def is_symplectic(S: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
        return False
    omega = symplectic_form(S.shape[0] // 2)
    return bool(np.max(np.abs(S @ omega @ S.T - omega)) < tol)


@dataclass(frozen=True, eq=False)
class SymplecticTransform:
    """Affine phase-space map ``r -> S r + d``.

    When ``modes`` is given, ``S`` and ``d`` act only on those modes (in the
    listed order) and are embedded into the full space when applied. This lets
    optical elements be built before the size of the state they act on is known.
    """

    S: np.ndarray
    d: np.ndarray | None = None
    modes: tuple[int, ...] | None = None

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
            raise InvalidArgument(f"S must be a square 2n x 2n matrix, got shape {S.shape}")
        d = np.zeros(S.shape[0]) if self.d is None else np.array(self.d, dtype=float).reshape(-1)
        if d.shape != (S.shape[0],):
            raise InvalidArgument(f"displacement length {d.size} does not match S {S.shape}")
        if not is_symplectic(S):
            omega = symplectic_form(S.shape[0] // 2)
            err = np.max(np.abs(S @ omega @ S.T - omega))
            raise InvalidArgument(f"matrix is not symplectic (max |S Omega S^T - Omega| = {err:.3e})")
        modes = self.modes
        if modes is not None:
            modes = tuple(int(m) for m in modes)
            if len(modes) != S.shape[0] // 2:
                raise InvalidArgument(f"{len(modes)} modes listed for a {S.shape[0] // 2}-mode matrix")
            if len(set(modes)) != len(modes) or min(modes) < 0:
                raise InvalidArgument(f"invalid mode list {modes}")
        S.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "modes", modes)

    @property
    def local_modes(self) -> int:
        return self.S.shape[0] // 2

    def embed(self, n_modes: int) -> "SymplecticTransform":
        """Full ``2 n_modes`` square representation of this transform."""
        if self.modes is None:
            if self.local_modes != n_modes:
                raise InvalidArgument(
                    f"transform acts on {self.local_modes} modes, state has {n_modes}"
                )
            return self
        if max(self.modes) >= n_modes:
            raise InvalidArgument(f"transform touches mode {max(self.modes)} of a {n_modes}-mode state")
        idx = np.concatenate([[2 * m, 2 * m + 1] for m in self.modes])
        S = np.eye(2 * n_modes)
        S[np.ix_(idx, idx)] = self.S
        d = np.zeros(2 * n_modes)
        d[idx] = self.d
        return SymplecticTransform(S, d)

    def then(self, other: "SymplecticTransform", n_modes: int) -> "SymplecticTransform":
        """Composite that applies ``self`` first and ``other`` second."""
        a = self.embed(n_modes)
        b = other.embed(n_modes)
        return SymplecticTransform(b.S @ a.S, b.S @ a.d + b.d)


def identity_transform(n_modes: int) -> SymplecticTransform:
    return SymplecticTransform(np.eye(2 * n_modes))


def displacement(modes: Sequence[int], d: Sequence[float]) -> SymplecticTransform:
    modes = tuple(modes)
    return SymplecticTransform(np.eye(2 * len(modes)), d, modes)


def beam_splitter(i: int, j: int, t: float) -> SymplecticTransform:
    """Real beam splitter of intensity transmissivity ``t`` between modes ``i`` and ``j``.

    Acts identically on x and p::

        q_i' = sqrt(t) q_i + sqrt(1 - t) q_j
        q_j' = sqrt(1 - t) q_i - sqrt(t) q_j
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument(f"transmissivity must lie in [0, 1], got {t}")
    if i == j:
        raise InvalidArgument("beam splitter needs two distinct modes")
    if i < 0 or j < 0:
        raise InvalidArgument(f"negative mode index ({i}, {j})")
    st, sr = np.sqrt(t), np.sqrt(1.0 - t)
    mixing = np.array([[st, sr], [sr, -st]])
    return SymplecticTransform(np.kron(mixing, np.eye(2)), modes=(i, j))


def phase_rotation(mode: int, theta: float) -> SymplecticTransform:
    """Phase-space rotation: ``x' = cos(theta) x - sin(theta) p``, ``p' = sin(theta) x + cos(theta) p``."""
    c, s = np.cos(theta), np.sin(theta)
    return SymplecticTransform(np.array([[c, -s], [s, c]]), modes=(mode,))


def squeezer(mode: int, r: float) -> SymplecticTransform:
    """Single-mode squeezing ``x -> e^{-r} x``, ``p -> e^{r} p``."""
    return SymplecticTransform(np.diag([np.exp(-r), np.exp(r)]), modes=(mode,))


def apply(state: GaussianState, T: SymplecticTransform) -> GaussianState:
    full = T.embed(state.n_modes)
    return GaussianState(full.S @ state.mean + full.d, full.S @ state.cov @ full.S.T)


def apply_all(state: GaussianState, transforms: Iterable[SymplecticTransform]) -> GaussianState:
    for T in transforms:
        state = apply(state, T)
    return state


def additive_noise(state: GaussianState, mode: int, ch: NoiseChannel) -> GaussianState:
    """Add uncorrelated Gaussian noise to one mode; means are unchanged."""
    state._check_mode(mode)
    cov = np.array(state.cov)
    cov[2 * mode, 2 * mode] += ch.lambda_x
    cov[2 * mode + 1, 2 * mode + 1] += ch.lambda_p
    return GaussianState(state.mean, cov)


def loss_channel(state: GaussianState, mode: int, eta: float) -> GaussianState:
    """Pure-loss channel of transmission ``eta`` on one mode (vacuum admixed)."""
    if not 0.0 < eta <= 1.0:
        raise InvalidArgument(f"eta must lie in (0, 1], got {eta}")
    state._check_mode(mode)
    n = 2 * state.n_modes
    scale = np.ones(n)
    scale[_mode_slice(mode)] = np.sqrt(eta)
    cov = state.cov * np.outer(scale, scale)
    cov[_mode_slice(mode), _mode_slice(mode)] += (1.0 - eta) * np.eye(2)
    return GaussianState(state.mean * scale, cov)


def partial_trace(state: GaussianState, keep: Iterable[int]) -> GaussianState:
    """Reduced state on ``keep`` (modes are reordered as listed)."""
    keep = list(keep)
    if not keep:
        raise InvalidArgument("partial_trace needs at least one mode to keep")
    if len(set(keep)) != len(keep):
        raise InvalidArgument(f"duplicate modes in {keep}")
    for m in keep:
        state._check_mode(m)
    idx = np.concatenate([[2 * m, 2 * m + 1] for m in keep])
    return GaussianState(state.mean[idx], state.cov[np.ix_(idx, idx)])


def _require_single_mode(state: GaussianState) -> None:
    if state.n_modes != 1:
        raise InvalidArgument(f"expected a single-mode state, got {state.n_modes} modes")


def fidelity_coherent(state: GaussianState, target: CoherentAmplitude) -> float:
    """Overlap ``<alpha|rho|alpha>`` of a single-mode Gaussian state with a coherent state.

    ``F = 2 / sqrt(det(V + I)) * exp(-delta^T (V + I)^{-1} delta / 2)`` where ``delta``
    is the mean offset. For diagonal ``V`` and zero offset this is
    ``2 / sqrt((1 + Vx)(1 + Vp))``.
    """
    _require_single_mode(state)
    state.validate()
    sigma = state.cov + np.eye(2)
    delta = state.mean - target.vector
    quad = float(delta @ np.linalg.solve(sigma, delta))
    return float(2.0 / np.sqrt(np.linalg.det(sigma)) * np.exp(-0.5 * quad))


def _wigner_on_grid(mean, cov, X, P):
    inv = np.linalg.inv(cov)
    dx = X - mean[0]
    dp = P - mean[1]
    q = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dp + inv[1, 1] * dp * dp
    return np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))


def wigner_overlap_oracle(
    state: GaussianState,
    target: CoherentAmplitude,
    half_width: float | None = None,
    points: int = 401,
    min_sigmas: float = 6.0,
) -> float:
    """Fidelity by brute-force phase-space integration of two Wigner functions.

    Independent cross-check for :func:`fidelity_coherent`. The square grid is
    centred between the two means; ``half_width`` defaults to covering both
    states out to ``min_sigmas + 2`` standard deviations. In this convention
    ``Tr(rho sigma) = 4 pi * integral W_rho W_sigma dx dp``.
    """
    _require_single_mode(state)
    state.validate()
    m_state = state.mean
    m_target = target.vector
    center = 0.5 * (m_state + m_target)
    sd_state = np.sqrt(np.diag(state.cov))
    sd_target = np.ones(2)

    def reach(m, sd, sigmas):
        return float(np.max(np.abs(m - center) + sigmas * sd))

    needed = max(reach(m_state, sd_state, min_sigmas), reach(m_target, sd_target, min_sigmas))
    if half_width is None:
        half_width = max(
            reach(m_state, sd_state, min_sigmas + 2), reach(m_target, sd_target, min_sigmas + 2)
        )
    elif half_width < needed:
        raise InvalidArgument(
            f"grid half-width {half_width:.3g} covers fewer than {min_sigmas:g} standard "
            f"deviations of both states (needs >= {needed:.3g})"
        )
    if points < 3:
        raise InvalidArgument("grid needs at least 3 points per axis")

    xs = center[0] + np.linspace(-half_width, half_width, points)
    ps = center[1] + np.linspace(-half_width, half_width, points)
    X, P = np.meshgrid(xs, ps, indexing="ij")
    w_state = _wigner_on_grid(m_state, state.cov, X, P)
    w_target = _wigner_on_grid(m_target, np.eye(2), X, P)
    cell = (xs[1] - xs[0]) * (ps[1] - ps[0])
    integral = trapezoid(trapezoid(w_state * w_target, axis=1), axis=0) * cell
    return float(4 * np.pi * integral)
