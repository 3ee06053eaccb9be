"""Sign- and permutation-invariant discrepancy measures for unmixing results.

Estimated components and mixing columns are only identified up to a signed
permutation, so plain matrix distances are useless for scoring or convergence
checks.  The central object here is ``pmse``: columns of both matrices are
scaled to unit norm, every (column, +/-column) pair gets a squared-distance
cost, and a linear assignment picks the best injective matching.  The same
machinery drives convergence tests inside the fitting loops and the
reliability matching of components across restarts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "SignedPermutation",
    "PmseResult",
    "hungarian",
    "pmse",
    "snr",
    "match_components",
]


@dataclass(frozen=True)
class SignedPermutation:
    """Injective column matching with per-column sign flips.

    ``mapping[q]`` is the 0-based column of the second matrix matched to
    column ``q`` of the first; ``signs[q]`` is the sign applied to that
    matched column.
    """

    mapping: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        mapping = np.asarray(self.mapping, dtype=int)
        signs = np.asarray(self.signs, dtype=int)
        if mapping.shape != signs.shape:
            raise ValueError("mapping and signs must have equal length")
        if len(np.unique(mapping)) != mapping.size:
            raise ValueError("mapping entries must be distinct")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "mapping", mapping)
        object.__setattr__(self, "signs", signs)


@dataclass(frozen=True)
class PmseResult:
    """Minimized discrepancy plus the signed permutation achieving it.

    ``value`` is the raw sum of matched squared distances between the
    unit-normalized columns (no 1/Q averaging).  ``per_component`` holds the
    individual matched squared distances, in the column order of the first
    matrix.
    """

    value: float
    perm: SignedPermutation
    per_component: np.ndarray


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost injective assignment of rows to columns.

    ``cost`` is Q x R with Q <= R; every row is assigned to a distinct
    column.  Returns ``(mapping, total)`` where ``mapping[q]`` is the column
    assigned to row ``q``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if cost.shape[0] > cost.shape[1]:
        raise ValueError(
            f"cost must have at least as many columns as rows, got {cost.shape}"
        )
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    rows, cols = linear_sum_assignment(cost)
    mapping = np.empty(cost.shape[0], dtype=int)
    mapping[rows] = cols
    return mapping, float(cost[rows, cols].sum())


def _unit_columns(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    norms = np.linalg.norm(M, axis=0)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ValueError(f"{name} has (near-)zero column {bad[0]}; cannot normalize")
    return M / norms


def pmse(M1: np.ndarray, M2: np.ndarray) -> PmseResult:
    """Sign- and permutation-invariant mean-squared error between column sets.

    Both inputs are interpreted column-wise (T x Q vs T x R with Q <= R) and
    scaled to unit column norm, so the measure is invariant to column scaling,
    sign flips and permutation.  For Q < R only the best-matching Q columns of
    ``M2`` participate.  Works equally on component matrices (V x Q).
    """
    A = _unit_columns(M1, "M1")
    B = _unit_columns(M2, "M2")
    if A.shape[0] != B.shape[0]:
        raise ValueError(
            f"row dimensions differ: {A.shape[0]} vs {B.shape[0]}"
        )
    if A.shape[1] > B.shape[1]:
        raise ValueError(
            "first matrix may not have more columns than second "
            f"({A.shape[1]} > {B.shape[1]})"
        )
    dots = A.T @ B
    # ||a - sb||^2 with the optimal sign s = sign(<a, b>) is 2 - 2|<a, b>|.
    cost = 2.0 - 2.0 * np.abs(dots)
    mapping, total = hungarian(cost)
    signs = np.where(dots[np.arange(A.shape[1]), mapping] >= 0.0, 1, -1)
    per_component = cost[np.arange(A.shape[1]), mapping].copy()
    return PmseResult(
        value=total,
        perm=SignedPermutation(mapping=mapping, signs=signs),
        per_component=per_component,
    )


def snr(signal_eigvals: np.ndarray, noise_eigvals: np.ndarray) -> float:
    """Total signal variance over total noise variance (eigenvalue sums)."""
    sig = np.asarray(signal_eigvals, dtype=float)
    noi = np.asarray(noise_eigvals, dtype=float)
    if np.any(sig < 0) or np.any(noi < 0):
        raise ValueError("eigenvalues must be nonnegative")
    denom = float(noi.sum())
    if denom <= 0.0:
        raise ZeroDivisionError("total noise variance is zero")
    return float(sig.sum()) / denom


def match_components(
    reference: np.ndarray, others: list[np.ndarray]
) -> list[PmseResult]:
    """Match each run's components to a reference run.

    Used for reliability analysis across restarts: the reference is usually
    the component matrix of the best-objective run, and every other run is
    matched to it with the signed-permutation assignment.  Returns one
    ``PmseResult`` per entry of ``others`` (same order), whose
    ``per_component`` distances quantify how reliably each reference
    component was reproduced.
    """
    reference = np.asarray(reference, dtype=float)
    return [pmse(reference, other) for other in others]
