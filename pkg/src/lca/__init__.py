"""Likelihood component analysis: simultaneous dimension reduction and
non-Gaussian latent component estimation by maximum likelihood."""

from .core import (
    WhitenedData,
    WhiteningTransform,
    center,
    estimate_mixing,
    symmetric_orthogonalize,
    whiten,
)
from .densities import LogisticDensity, TiltedGaussianDensity, bin_samples, fit_tilt
from .metrics import PmseResult, SignedPermutation, hungarian, match_components, pmse, snr

__all__ = [
    "WhitenedData",
    "WhiteningTransform",
    "center",
    "whiten",
    "symmetric_orthogonalize",
    "estimate_mixing",
    "LogisticDensity",
    "TiltedGaussianDensity",
    "bin_samples",
    "fit_tilt",
    "PmseResult",
    "SignedPermutation",
    "hungarian",
    "pmse",
    "snr",
    "match_components",
]

__version__ = "0.1.0"
