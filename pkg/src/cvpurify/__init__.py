"""Gaussian simulation of linear-optics purification of noisy coherent states.

Quadratures follow ``[x, p] = 2i``: the vacuum has unit variance.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConsistencyError,
    CVPurifyError,
    InvalidArgument,
    InvalidState,
    NonPhysicalWarning,
    UndefinedGain,
)
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
    loss_channel,
    partial_trace,
    vacuum_state,
    wigner_overlap_oracle,
)
from .protocol import (
    CoherentPrior,
    FidelityReport,
    GainReport,
    PurifierNetwork,
    average_fidelity,
    build_purifier,
    classical_baseline,
    estimate_gains,
    purified_fidelity,
    purified_variance,
    run_purification,
    single_shot_fidelity,
)
