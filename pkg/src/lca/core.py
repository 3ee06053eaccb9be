"""Linear-algebra substrate: centering, whitening, semi-orthogonalization.

Conventions used throughout the package:

* data matrices are V x T with rows as replicates and columns as variables;
* sample covariances divide by V (not V-1), which makes the Gaussian
  log-likelihood of any unit projection of whitened data exactly
  -(V/2)(log 2pi + 1);
* whitening is symmetric, z_v = L x_v with L = U diag(eigvals)^(-1/2) U';
* unmixing matrices W are Q x T with orthonormal rows, and components are
  recovered as S = Z W'.

All functions are pure and all returned containers are treated as immutable,
so concurrent use from multiple workers needs no synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConditioningError, RankError

__all__ = [
    "WhiteningTransform",
    "WhitenedData",
    "center",
    "sample_covariance",
    "whiten",
    "symmetric_orthogonalize",
    "is_semi_orthogonal",
    "estimate_mixing",
]

# Relative eigenvalue threshold below which the covariance is treated as
# singular; machine-precision guard for double-precision EVD.
COV_CONDITION_EPS = 1e-12

# Singular values below this are treated as rank deficiency.
RANK_EPS = 1e-12


@dataclass(frozen=True)
class WhiteningTransform:
    """Centering plus symmetric whitening map fitted to a data matrix.

    ``L`` reconstructs as ``eigvecs @ diag(eigvals**-0.5) @ eigvecs.T``;
    eigenvalues are sorted descending (ties broken by original index).
    """

    mean: np.ndarray      # (T,) column means subtracted before whitening
    L: np.ndarray         # (T, T) symmetric positive definite
    eigvals: np.ndarray   # (T,) covariance eigenvalues, descending
    eigvecs: np.ndarray   # (T, T) orthogonal, columns are eigenvectors

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Map rows of X into whitened coordinates: z_v = L (x_v - mean)."""
        X = np.asarray(X, dtype=float)
        return (X - self.mean) @ self.L  # L symmetric, so X L' = X L


@dataclass(frozen=True)
class WhitenedData:
    """Whitened observations together with the transform that produced them."""

    z: np.ndarray
    transform: WhiteningTransform

    @property
    def n_obs(self) -> int:
        return self.z.shape[0]

    @property
    def n_vars(self) -> int:
        return self.z.shape[1]


def _as_data_matrix(X: np.ndarray, min_rows: int = 1) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got ndim={X.ndim}")
    if X.shape[0] < min_rows or X.shape[1] < 1:
        raise ValueError(f"degenerate data matrix of shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix contains non-finite entries")
    return X


def center(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract column means; returns ``(centered, mean)``."""
    X = _as_data_matrix(X)
    mean = X.mean(axis=0)
    return X - mean, mean


def sample_covariance(X: np.ndarray) -> np.ndarray:
    """Divisor-V sample covariance of the (assumed centered) rows of X."""
    X = np.asarray(X, dtype=float)
    return X.T @ X / X.shape[0]


def whiten(X: np.ndarray) -> WhitenedData:
    """Center and symmetrically whiten a V x T data matrix (V >= T).

    The output satisfies ``sample_covariance(z) == I`` to floating precision,
    with the divisor-V convention.  Raises ``ConditioningError`` when the
    smallest covariance eigenvalue falls below ``COV_CONDITION_EPS`` times the
    largest.
    """
    X = _as_data_matrix(X)
    V, T = X.shape
    if V < T:
        raise ValueError(f"need at least as many rows as columns to whiten, got {V} < {T}")
    Xc, mean = center(X)
    cov = sample_covariance(Xc)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[-1] < COV_CONDITION_EPS * eigvals[0]:
        raise ConditioningError(
            f"covariance is numerically singular: smallest eigenvalue "
            f"{eigvals[-1]:.3e} < {COV_CONDITION_EPS:g} x largest {eigvals[0]:.3e}"
        )
    L = (eigvecs * (1.0 / np.sqrt(eigvals))) @ eigvecs.T
    transform = WhiteningTransform(mean=mean, L=L, eigvals=eigvals, eigvecs=eigvecs)
    return WhitenedData(z=Xc @ L, transform=transform)


def symmetric_orthogonalize(W: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal rows: SVD with singular values set to one.

    Raises ``RankError`` when W is numerically rank deficient, in which case
    the row space is not well defined.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] > W.shape[1]:
        raise ValueError(f"expected a Q x T matrix with Q <= T, got shape {W.shape}")
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    if s[-1] < RANK_EPS:
        raise RankError(
            f"matrix is rank deficient: smallest singular value {s[-1]:.3e}"
        )
    return U @ Vt


def is_semi_orthogonal(W: np.ndarray, tol: float = 1e-10) -> bool:
    """Check rows orthonormal: ||W W' - I||_F <= tol."""
    W = np.asarray(W, dtype=float)
    G = W @ W.T
    return bool(np.linalg.norm(G - np.eye(W.shape[0])) <= tol)


def estimate_mixing(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Least-squares mixing estimate: argmin_M sum_v ||x_v - M s_v||^2.

    ``X`` is the centered V x T data and ``S`` the V x Q component
    realizations; returns the T x Q solution of the normal equations.
    """
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float)
    if X.shape[0] != S.shape[0]:
        raise ValueError(f"row mismatch: X has {X.shape[0]} rows, S has {S.shape[0]}")
    gram = S.T @ S
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[-1] < RANK_EPS * max(1.0, sv[0]):
        raise RankError(
            f"components are rank deficient: smallest singular value {sv[-1]:.3e}"
        )
    # M' = (S'S)^{-1} S'X, transposed to T x Q.
    return np.linalg.solve(gram, S.T @ X).T
