"""Fitting engines for likelihood component analysis.

Both estimators maximize a likelihood over the manifold of semi-orthogonal
Q x T unmixing matrices applied to whitened data, using a symmetric
fixed-point iteration whose intermediate estimates are re-orthogonalized by
setting all singular values to one:

* the logistic variant fixes every component density to the standardized
  logistic and iterates the fixed-point update to convergence;
* the spline variant alternates refitting tilted-Gaussian densities to the
  current components with a single fixed-point step using the fitted score
  functions, maximizing the curvature-penalized likelihood.

Convergence of the unmixing iterates is declared with the same
sign/permutation-invariant discrepancy used for scoring accuracy, applied to
consecutive transposed iterates.  Multi-restart drivers own one RNG stream
per (seed, restart) pair, so restarts are reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _parallel
from .core import (
    WhitenedData,
    WhiteningTransform,
    center,
    estimate_mixing,
    is_semi_orthogonal,
    symmetric_orthogonalize,
    whiten,
)
from .densities import (
    LogisticDensity,
    TiltedGaussianDensity,
    bin_samples,
    fit_tilt,
)
from .exceptions import FitError, LcaError, RankError, RestartFailure
from .metrics import pmse

__all__ = [
    "LcaFit",
    "RestartConfig",
    "make_initial_W",
    "fixed_point_step",
    "eval_objective",
    "canonical_order",
    "fit_logis_lca",
    "fit_spline_lca",
]

GAUSS_ENTROPY_CONST = 0.5 * (math.log(2.0 * math.pi) + 1.0)


@dataclass(frozen=True)
class RestartConfig:
    """Multi-restart and convergence settings shared by the fitting engines."""

    n_restarts: int = 20
    n_principal_subspace: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    seed: int = 0
    check_iterates: bool = False  # assert semi-orthogonality of every iterate
    workers: int | None = None    # None = respect LCA_THREADS

    def __post_init__(self):
        if not 0 <= self.n_principal_subspace <= self.n_restarts:
            raise ValueError("need 0 <= n_principal_subspace <= n_restarts")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class LcaFit:
    """Complete fit result of one estimator run (best restart, canonically ordered)."""

    W_S: np.ndarray              # (Q, T) semi-orthogonal unmixing in whitened coords
    M_S: np.ndarray              # (T, Q) least-squares mixing estimate
    S: np.ndarray                # (V, Q) component realizations, S = Z W_S'
    densities: list              # per-component density models
    objective: float
    converged: bool
    iterations: int
    restart_id: int
    seed: int
    method: str = ""
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_components(self) -> int:
        return self.W_S.shape[0]


class _RestartAbort(LcaError):
    """Internal signal: this restart failed, try the others."""


def make_initial_W(
    T: int,
    q: int,
    principal_subspace: bool,
    transform: WhiteningTransform | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random semi-orthogonal initial unmixing matrix.

    Unconstrained draws orthogonalize a q x T standard-normal matrix.
    Principal-subspace draws rotate the top-q covariance eigenvectors
    (expressed in whitened coordinates) by a random q x q orthogonal matrix.
    """
    if q > T:
        raise ValueError(f"cannot draw {q} orthonormal rows in dimension {T}")
    if principal_subspace:
        if transform is None:
            raise ValueError("principal-subspace initialization needs the whitening transform")
        O = symmetric_orthogonalize(rng.standard_normal((q, q)))
        return O @ transform.eigvecs[:, :q].T
    return symmetric_orthogonalize(rng.standard_normal((q, T)))


def fixed_point_step(W: np.ndarray, Z, densities: list) -> np.ndarray:
    """One symmetric fixed-point update of the unmixing matrix.

    Each row moves to (1/V) sum_v { z_v h'(s_v) - h''(s_v) w }, with h the
    component's log density evaluated at s_v = w' z_v; the stacked rows are
    then symmetrically re-orthogonalized.  Raises ``_RestartAbort`` when the
    pre-orthogonalization matrix collapses in rank.
    """
    Zm = Z.z if isinstance(Z, WhitenedData) else np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    V = Zm.shape[0]
    S = Zm @ W.T
    H1 = np.column_stack([d.score(S[:, i]) for i, d in enumerate(densities)])
    mean_h2 = np.array([float(np.mean(d.score_deriv(S[:, i]))) for i, d in enumerate(densities)])
    W_star = (H1.T @ Zm) / V - mean_h2[:, None] * W
    try:
        return symmetric_orthogonalize(W_star)
    except RankError as exc:
        raise _RestartAbort(f"fixed-point update collapsed in rank: {exc}") from exc


def eval_objective(S: np.ndarray, densities: list, kind: str, n_vars: int | None = None) -> float:
    """Objective value of a fit.

    ``kind='logis'``: the logistic criterion
    -sum_v sum_q log(1 + exp(-s_vq / c)); constant terms that do not depend
    on the unmixing matrix are dropped.

    ``kind='spline'``: the curvature-penalized log-likelihood, per
    observation: the tilt terms (1/V) sum_v g_q(s_vq), minus the density
    normalization integrals and the curvature penalties, minus the Gaussian
    constant (T/2)(log 2pi + 1) contributed by all whitened directions.
    ``n_vars`` is the ambient dimension T.
    """
    S = np.asarray(S, dtype=float)
    if kind == "logis":
        u = S / LogisticDensity().scale
        return -float(np.logaddexp(0.0, -u).sum())
    if kind == "spline":
        if n_vars is None:
            raise ValueError("spline objective needs the ambient dimension n_vars")
        V = S.shape[0]
        total = -n_vars * GAUSS_ENTROPY_CONST
        for i, d in enumerate(densities):
            lam = d.penalty * d.bin_width  # continuous-scale curvature weight
            total += float(np.mean(d.tilt(S[:, i])))
            total -= d.normalization_integral()
            total -= lam * d.curvature_integral()
        return total
    raise ValueError(f"unknown objective kind {kind!r}")


def canonical_order(fit: LcaFit, whitened: WhitenedData | None = None) -> LcaFit:
    """Force positive sample third moments, then sort by component log-likelihood.

    Sign flips propagate to the unmixing row, the mixing column and the
    density (reflected); exact zero third moments keep their sign.  Sorting is
    by decreasing sum_v log f_q(s_vq), stable, so the result is idempotent and
    invariant to signed permutations of the input components.
    """
    S = fit.S.copy()
    W = fit.W_S.copy()
    M = fit.M_S.copy()
    densities = list(fit.densities)
    third = np.sum(S**3, axis=0)
    for i in np.flatnonzero(third < 0.0):
        S[:, i] = -S[:, i]
        W[i, :] = -W[i, :]
        M[:, i] = -M[:, i]
        densities[i] = densities[i].reflect()
    logliks = np.array([d.loglik(S[:, i]) for i, d in enumerate(densities)])
    order = np.argsort(-logliks, kind="stable")
    return replace(
        fit,
        S=S[:, order],
        W_S=W[order, :],
        M_S=M[:, order],
        densities=[densities[i] for i in order],
    )


# ---------------------------------------------------------------------------
# Restart runners
# ---------------------------------------------------------------------------

def _restart_rng(seed: int, restart_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, restart_id)))


def _converge_check(W_new: np.ndarray, W_old: np.ndarray) -> float:
    return pmse(W_new.T, W_old.T).value


def _run_logis_restart(args):
    Z, q, cfg, restart_id, transform = args
    rng = _restart_rng(cfg.seed, restart_id)
    W = make_initial_W(Z.shape[1], q, restart_id < cfg.n_principal_subspace, transform, rng)
    densities = [LogisticDensity()] * q
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        W_new = fixed_point_step(W, Z, densities)
        if cfg.check_iterates and not is_semi_orthogonal(W_new, 1e-8):
            raise AssertionError("iterate lost semi-orthogonality")
        delta = _converge_check(W_new, W)
        W = W_new
        if delta < cfg.tol:
            converged = True
            break
    S = Z @ W.T
    objective = eval_objective(S, densities, "logis")
    return {
        "W": W, "S": S, "densities": densities, "objective": objective,
        "converged": converged, "iterations": iterations,
        "restart_id": restart_id, "trace": np.array([objective]),
    }


def _run_spline_restart(args):
    Z, q, cfg, restart_id, transform, bins, df = args
    rng = _restart_rng(cfg.seed, restart_id)
    V, T = Z.shape
    W = make_initial_W(T, q, restart_id < cfg.n_principal_subspace, transform, rng)
    betas: list[float | None] = [None] * q
    converged = False
    iterations = 0
    trace = []

    def refit(S):
        out = []
        for i in range(q):
            d = fit_tilt(bin_samples(S[:, i], bins), V, df, beta_init=betas[i])
            betas[i] = d.penalty
            out.append(d)
        return out

    densities = None
    for iterations in range(1, cfg.max_iter + 1):
        S = Z @ W.T
        densities = refit(S)
        trace.append(eval_objective(S, densities, "spline", T))
        W_new = fixed_point_step(W, Z, densities)
        if cfg.check_iterates and not is_semi_orthogonal(W_new, 1e-8):
            raise AssertionError("iterate lost semi-orthogonality")
        delta = _converge_check(W_new, W)
        W = W_new
        if delta < cfg.tol:
            converged = True
            break
    # Refresh densities on the final components so the reported pair is coherent.
    S = Z @ W.T
    densities = refit(S)
    objective = eval_objective(S, densities, "spline", T)
    trace.append(objective)
    return {
        "W": W, "S": S, "densities": densities, "objective": objective,
        "converged": converged, "iterations": iterations,
        "restart_id": restart_id, "trace": np.array(trace),
    }


def _drive(data: np.ndarray, q: int, cfg: RestartConfig, runner, extra: tuple, method: str) -> LcaFit:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be a V x T matrix")
    T = data.shape[1]
    if not 1 <= q <= T:
        raise ValueError(f"number of components must be in [1, {T}], got {q}")
    wh = whiten(data)
    Xc = data - wh.transform.mean
    tasks = [(wh.z, q, cfg, r, wh.transform) + extra for r in range(cfg.n_restarts)]

    results, failures = [], []
    workers = _parallel.resolve_workers(cfg.workers)
    if workers > 1 and cfg.n_restarts > 1:
        raw = _parallel.pmap(_safe_run, [(runner, t) for t in tasks], workers=workers)
    else:
        raw = [_safe_run((runner, t)) for t in tasks]
    for r, outcome in enumerate(raw):
        if isinstance(outcome, dict):
            results.append(outcome)
        else:
            failures.append(f"restart {r}: {outcome}")
    if not results:
        raise RestartFailure(
            f"all {cfg.n_restarts} restarts failed", diagnostics=failures
        )
    best = results[0]
    for res in results[1:]:
        if res["objective"] > best["objective"]:
            best = res
    fit = LcaFit(
        W_S=best["W"],
        M_S=estimate_mixing(Xc, best["S"]),
        S=best["S"],
        densities=best["densities"],
        objective=best["objective"],
        converged=best["converged"],
        iterations=best["iterations"],
        restart_id=best["restart_id"],
        seed=cfg.seed,
        method=method,
        objective_trace=best["trace"],
    )
    return canonical_order(fit, wh)


def _safe_run(payload):
    runner, task = payload
    try:
        return runner(task)
    except (LcaError, FitError) as exc:
        return f"{type(exc).__name__}: {exc}"


def fit_logis_lca(data: np.ndarray, q: int, cfg: RestartConfig | None = None) -> LcaFit:
    """Fit the logistic-density model by multi-restart fixed-point iteration."""
    cfg = cfg or RestartConfig()
    return _drive(data, q, cfg, _run_logis_restart, (), "logis-lca")


def fit_spline_lca(
    data: np.ndarray,
    q: int,
    cfg: RestartConfig | None = None,
    bins: int = 100,
    df: float = 8.0,
) -> LcaFit:
    """Fit the tilted-Gaussian model: alternate density refits with fixed-point steps."""
    cfg = cfg or RestartConfig()
    return _drive(data, q, cfg, _run_spline_restart, (bins, df), "spline-lca")
