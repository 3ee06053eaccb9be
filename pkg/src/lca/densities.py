"""Univariate component-density models: standardized logistic and tilted Gaussian.

The tilted Gaussian family phi(x) * exp(g(x)) models each non-Gaussian
component with a cubic-spline tilt g.  Fitting discretizes the component
sample into equal-width bins and maximizes a penalized Poisson likelihood
whose mean at a bin midpoint is the density there (the "Poisson trick"); the
curvature penalty's weight is chosen by bisection so the effective degrees of
freedom of the smoother hits a user target.

Outside the binned support g is extended linearly, which keeps the curvature
penalty's null space intact and the tails integrable in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import log_ndtr, ndtr

from .exceptions import DfBracketError, FitError

__all__ = [
    "LOGISTIC_SCALE",
    "LogisticDensity",
    "logistic_logpdf",
    "logistic_score",
    "logistic_score_deriv",
    "BinnedTilt",
    "bin_samples",
    "TiltedGaussianDensity",
    "fit_tilt",
    "tilt_logpdf",
    "tilt_score",
    "tilt_score_deriv",
]

# Scale making the logistic density zero-mean, unit-variance.
LOGISTIC_SCALE = math.sqrt(3.0) / math.pi

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

SPLINE_DEGREE = 3
MAX_INTERIOR_KNOTS = 40
PENALTY_BRACKET = (1e-10, 1e10)


def _norm_logpdf(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI


# ---------------------------------------------------------------------------
# Logistic density
# ---------------------------------------------------------------------------

def logistic_logpdf(x):
    """Log density of the zero-mean unit-variance logistic."""
    u = np.asarray(x, dtype=float) / LOGISTIC_SCALE
    # log f = -u - log c - 2 log(1 + e^{-u}), stable for large |u|.
    return -u - math.log(LOGISTIC_SCALE) - 2.0 * np.logaddexp(0.0, -u)


def logistic_score(x):
    """Derivative of the logistic log density: -(1/c) tanh(x / 2c)."""
    x = np.asarray(x, dtype=float)
    return -np.tanh(x / (2.0 * LOGISTIC_SCALE)) / LOGISTIC_SCALE


def logistic_score_deriv(x):
    """Second derivative of the logistic log density."""
    u = np.clip(np.asarray(x, dtype=float) / (2.0 * LOGISTIC_SCALE), -350.0, 350.0)
    sech2 = 1.0 / np.cosh(u) ** 2
    return -sech2 / (2.0 * LOGISTIC_SCALE**2)


@dataclass(frozen=True)
class LogisticDensity:
    """Zero-mean unit-variance logistic component density."""

    scale: float = LOGISTIC_SCALE

    def logpdf(self, x):
        return logistic_logpdf(x)

    def score(self, x):
        return logistic_score(x)

    def score_deriv(self, x):
        return logistic_score_deriv(x)

    def loglik(self, s) -> float:
        return float(np.sum(logistic_logpdf(s)))

    def reflect(self) -> "LogisticDensity":
        return self  # symmetric

    def to_dict(self) -> dict:
        return {"kind": "logistic", "scale": self.scale}


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinnedTilt:
    """Equal-width binning of one component's realizations."""

    edges: np.ndarray      # (bins + 1,) strictly increasing, constant spacing
    midpoints: np.ndarray  # (bins,)
    counts: np.ndarray     # (bins,) nonnegative ints summing to V

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])


def bin_samples(s: np.ndarray, bins: int) -> BinnedTilt:
    """Bin samples into ``bins`` equal-width cells with 0.1-sd padded support."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size < 2:
        raise ValueError("need at least two samples to bin")
    if bins < 2:
        raise ValueError("need at least two bins")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples contain non-finite values")
    sd = float(s.std(ddof=1))
    if sd == 0.0:
        raise ValueError("samples are constant; binning support is degenerate")
    lo = float(s.min()) - 0.1 * sd
    hi = float(s.max()) + 0.1 * sd
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(s, edges)
    midpoints = 0.5 * (edges[:-1] + edges[1:])
    return BinnedTilt(edges=edges, midpoints=midpoints, counts=counts)


# ---------------------------------------------------------------------------
# Cubic B-spline helpers
# ---------------------------------------------------------------------------

def _knot_vector(midpoints: np.ndarray, support: tuple[float, float]) -> np.ndarray:
    """Clamped cubic knot vector: bin midpoints thinned to a stable count."""
    a, b = support
    n = len(midpoints)
    take = np.unique(np.round(np.linspace(0, n - 1, min(n, MAX_INTERIOR_KNOTS))).astype(int))
    interior = midpoints[take]
    return np.concatenate([[a] * (SPLINE_DEGREE + 1), interior, [b] * (SPLINE_DEGREE + 1)])


def _derivative_operator(t: np.ndarray, k: int) -> np.ndarray:
    """Matrix mapping degree-k spline coefficients to derivative coefficients."""
    n = len(t) - k - 1
    D = np.zeros((n - 1, n))
    for j in range(n - 1):
        dt = t[j + k + 1] - t[j + 1]
        D[j, j] = -k / dt
        D[j, j + 1] = k / dt
    return D


def _design_matrix(x: np.ndarray, t: np.ndarray, k: int) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), t[k], t[-k - 1])
    return BSpline.design_matrix(x, t, k, extrapolate=False).toarray()


def _second_deriv_design(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows evaluate g'' at x for coefficient vectors of the cubic basis."""
    D1 = _derivative_operator(t, SPLINE_DEGREE)
    D2 = _derivative_operator(t[1:-1], SPLINE_DEGREE - 1)
    A = _design_matrix(x, t[2:-2], SPLINE_DEGREE - 2)
    return A @ D2 @ D1


def _curvature_gram(t: np.ndarray) -> np.ndarray:
    """Exact Gram matrix of second derivatives: Omega_ij = int B_i'' B_j''.

    g'' is piecewise linear for cubic splines, so 2-point Gauss quadrature on
    each knot span is exact.
    """
    u = np.unique(t)
    lo, hi = u[:-1], u[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    gauss = 1.0 / math.sqrt(3.0)
    nodes = np.concatenate([mid - half * gauss, mid + half * gauss])
    weights = np.concatenate([half, half])
    A2 = _second_deriv_design(nodes, t)
    return (A2 * weights[:, None]).T @ A2


# ---------------------------------------------------------------------------
# Tilted Gaussian density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltedGaussianDensity:
    """Density phi(x) exp(g(x)) with a cubic B-spline tilt g.

    ``knots`` is the full clamped knot vector and ``coefficients`` the spline
    coefficients of g.  ``penalty`` is the curvature weight on the binned
    (Poisson) scale; the continuous-likelihood weight is ``penalty *
    bin_width``.  Beyond ``support`` the tilt continues linearly.
    """

    knots: np.ndarray
    coefficients: np.ndarray
    penalty: float
    support: tuple[float, float]
    bin_width: float
    effective_df: float = float("nan")

    @cached_property
    def _g(self) -> BSpline:
        return BSpline(self.knots, self.coefficients, SPLINE_DEGREE, extrapolate=False)

    @cached_property
    def _g1(self) -> BSpline:
        return self._g.derivative(1)

    @cached_property
    def _g2(self) -> BSpline:
        return self._g.derivative(2)

    def tilt(self, x):
        """g(x), continued linearly outside the support."""
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, *self.support)
        return self._g(xc) + self._g1(xc) * (x - xc)

    def tilt_deriv(self, x):
        x = np.asarray(x, dtype=float)
        return self._g1(np.clip(x, *self.support))

    def tilt_deriv2(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.support
        inside = (x >= a) & (x <= b)
        return np.where(inside, self._g2(np.clip(x, a, b)), 0.0)

    def logpdf(self, x):
        return _norm_logpdf(x) + self.tilt(x)

    def score(self, x):
        return -np.asarray(x, dtype=float) + self.tilt_deriv(x)

    def score_deriv(self, x):
        return -1.0 + self.tilt_deriv2(x)

    def loglik(self, s) -> float:
        return float(np.sum(self.logpdf(s)))

    @cached_property
    def _gram(self) -> np.ndarray:
        return _curvature_gram(self.knots)

    def curvature_integral(self) -> float:
        """int (g'')^2 over the support (g'' vanishes outside)."""
        return float(self.coefficients @ self._gram @ self.coefficients)

    def _tail_moments(self) -> tuple[float, float]:
        """(mass, first moment) of phi e^g over both linear-extrapolation tails."""
        a, b = self.support
        mass = 0.0
        first = 0.0
        for bound, left in ((a, True), (b, False)):
            slope = float(self._g1(bound))
            const = float(self._g(bound)) - slope * bound
            # int phi(x) e^{const + slope x} over the tail reduces to a shifted
            # normal: scale * Phi-tail with scale = exp(const + slope^2 / 2).
            log_scale = const + 0.5 * slope**2
            z = bound - slope
            if left:
                mass += math.exp(log_scale + log_ndtr(z))
                first += math.exp(log_scale) * (slope * ndtr(z) - _phi(z))
            else:
                mass += math.exp(log_scale + log_ndtr(-z))
                first += math.exp(log_scale) * (slope * ndtr(-z) + _phi(z))
        return mass, first

    def _interior_grid(self, n: int = 4001) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.support
        x = np.linspace(a, b, n)
        dens = np.exp(_norm_logpdf(x) + self._g(x))
        return x, dens

    def normalization_integral(self) -> float:
        """int phi(x) e^{g(x)} dx over the whole line."""
        x, dens = self._interior_grid()
        interior = _simpson(dens, x)
        return interior + self._tail_moments()[0]

    def mean_integral(self) -> float:
        """int x phi(x) e^{g(x)} dx over the whole line."""
        x, dens = self._interior_grid()
        interior = _simpson(x * dens, x)
        return interior + self._tail_moments()[1]

    def reflect(self) -> "TiltedGaussianDensity":
        """Density of -X: mirrored tilt, mirrored support."""
        a, b = self.support
        return TiltedGaussianDensity(
            knots=-self.knots[::-1],
            coefficients=self.coefficients[::-1].copy(),
            penalty=self.penalty,
            support=(-b, -a),
            bin_width=self.bin_width,
            effective_df=self.effective_df,
        )

    def to_dict(self) -> dict:
        return {
            "kind": "tilted_gaussian",
            "knots": self.knots.tolist(),
            "coefficients": self.coefficients.tolist(),
            "penalty": self.penalty,
            "support": list(self.support),
            "bin_width": self.bin_width,
            "effective_df": self.effective_df,
        }

    @staticmethod
    def from_dict(d: dict) -> "TiltedGaussianDensity":
        return TiltedGaussianDensity(
            knots=np.asarray(d["knots"], dtype=float),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            penalty=float(d["penalty"]),
            support=(float(d["support"][0]), float(d["support"][1])),
            bin_width=float(d["bin_width"]),
            effective_df=float(d.get("effective_df", float("nan"))),
        )


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _simpson(y: np.ndarray, x: np.ndarray) -> float:
    h = x[1] - x[0]
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


# ---------------------------------------------------------------------------
# Penalized Poisson fit of the tilt
# ---------------------------------------------------------------------------

class _TiltDesign:
    """Fixed quantities of one penalized Poisson tilt fit."""

    def __init__(self, binned: BinnedTilt, n_obs: int):
        self.binned = binned
        self.delta = binned.bin_width
        self.t = _knot_vector(binned.midpoints, binned.support)
        self.B = _design_matrix(binned.midpoints, self.t, SPLINE_DEGREE)
        self.omega = _curvature_gram(self.t)
        self.offset = _norm_logpdf(binned.midpoints)
        self.response = binned.counts / (n_obs * self.delta)

    @property
    def n_basis(self) -> int:
        return self.B.shape[1]

    def objective(self, theta: np.ndarray, beta: float) -> float:
        eta = self.B @ theta
        mu = np.exp(np.clip(self.offset + eta, -700.0, 40.0))
        ll = float(np.sum(self.response * (self.offset + eta) - mu))
        return ll - beta * float(theta @ self.omega @ theta)

    def irls(self, beta: float, theta0: np.ndarray | None = None,
             max_iter: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, float]:
        """Penalized IRLS; returns (theta, effective_df) at convergence."""
        theta = np.zeros(self.n_basis) if theta0 is None else theta0.copy()
        pen2 = 2.0 * beta * self.omega
        obj = self.objective(theta, beta)
        trace = [obj]
        for _ in range(max_iter):
            eta = self.B @ theta
            mu = np.exp(np.clip(self.offset + eta, -700.0, 40.0))
            grad = self.B.T @ (self.response - mu) - 2.0 * beta * (self.omega @ theta)
            H = self.B.T @ (mu[:, None] * self.B) + pen2
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            # Damped Newton: halve until the penalized objective improves.
            scale = 1.0
            for _ in range(30):
                cand = theta + scale * step
                cand_obj = self.objective(cand, beta)
                if cand_obj >= obj - 1e-12:
                    break
                scale *= 0.5
            moved = scale * float(np.max(np.abs(step)))
            theta = theta + scale * step
            improved = cand_obj - obj
            obj = cand_obj
            trace.append(obj)
            if moved < tol * (1.0 + float(np.max(np.abs(theta)))) or abs(improved) < 1e-12 * (1.0 + abs(obj)):
                break
        else:
            raise FitError(
                f"tilt IRLS did not converge in {max_iter} iterations; "
                f"objective trace tail: {trace[-5:]}"
            )
        mu = np.exp(np.clip(self.offset + self.B @ theta, -700.0, 40.0))
        BWB = self.B.T @ (mu[:, None] * self.B)
        df = float(np.trace(np.linalg.solve(BWB + pen2, BWB)))
        return theta, df


def fit_tilt(
    binned: BinnedTilt,
    n_obs: int,
    target_df: float = 8.0,
    df_tol: float = 0.1,
    beta_init: float | None = None,
) -> TiltedGaussianDensity:
    """Fit the spline tilt to binned samples at a target effective df.

    Maximizes the penalized Poisson objective whose response is
    ``counts / (V * bin_width)`` and whose mean is ``phi(x) e^{g(x)}`` at the
    bin midpoints.  The curvature weight is found by bisection on log-penalty
    (df is monotone decreasing in the penalty); ``beta_init`` warm-starts the
    search, which matters when refitting the same component across outer
    iterations of the alternating estimator.
    """
    if int(binned.counts.sum()) != int(n_obs):
        raise ValueError(
            f"bin counts sum to {int(binned.counts.sum())}, expected {n_obs}"
        )
    if not 2.0 < target_df < len(binned.midpoints):
        raise ValueError(f"target_df must lie in (2, bins), got {target_df}")

    design = _TiltDesign(binned, n_obs)
    lo, hi = PENALTY_BRACKET
    beta = float(np.clip(beta_init if beta_init is not None else 1.0, lo, hi))
    theta, df = design.irls(beta, None)
    for _ in range(80):
        if abs(df - target_df) <= df_tol:
            break
        if df > target_df:
            lo = beta
        else:
            hi = beta
        if hi / lo < 1.0 + 1e-12:
            raise DfBracketError(
                f"cannot reach effective df {target_df} within penalty bracket "
                f"{PENALTY_BRACKET}; closest df {df:.3f} at penalty {beta:.3e}"
            )
        beta = math.sqrt(lo * hi)
        theta, df = design.irls(beta, theta)
    else:
        raise DfBracketError(
            f"df bisection failed to reach {target_df} +/- {df_tol}; "
            f"last df {df:.3f} at penalty {beta:.3e}"
        )
    return TiltedGaussianDensity(
        knots=design.t,
        coefficients=theta,
        penalty=beta,
        support=binned.support,
        bin_width=design.delta,
        effective_df=df,
    )


# ---------------------------------------------------------------------------
# Module-level evaluation helpers (mirror the logistic trio)
# ---------------------------------------------------------------------------

def tilt_logpdf(density: TiltedGaussianDensity, x):
    return density.logpdf(x)


def tilt_score(density: TiltedGaussianDensity, x):
    return density.score(x)


def tilt_score_deriv(density: TiltedGaussianDensity, x):
    return density.score_deriv(x)
