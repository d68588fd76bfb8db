"""Reduction of coincidence curves to fringe fits, visibilities, loss per
cycle and CHSH parameters.

Fringes are fitted as C(theta1) = A + B sin^2(theta1 - theta0), which is
linear in (1, cos 2theta1, sin 2theta1); the fit is therefore a single
weighted linear solve.  Counts are weighted by 1 / max(count, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from loopqm.engine import CoincidenceCurve

SQRT2 = math.sqrt(2.0)


class DegenerateFitError(ValueError):
    """Fringe amplitude is zero, so its phase and visibility are undefined."""


@dataclass(frozen=True)
class FringeFit:
    offset: float                       # A, counts
    amplitude: float                    # B, counts
    phase: float                        # theta0, deg in [0, 180)
    cov: np.ndarray                     # (A, B, theta0[deg])
    rss: float                          # weighted residual sum of squares
    dof: int
    degenerate: bool = False

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    def __call__(self, theta1) -> np.ndarray:
        t = np.deg2rad(np.asarray(theta1, dtype=float) - self.phase)
        return self.offset + self.amplitude * np.sin(t) ** 2


@dataclass(frozen=True)
class VisibilityResult:
    V: float
    sigma_V: float


@dataclass(frozen=True)
class BellResult:
    S: float
    sigma_S: float

    @property
    def violated(self) -> bool:
        return self.S - 2 > 0

    @property
    def significance(self) -> float:
        """Violation in units of sigma_S."""
        return (self.S - 2) / self.sigma_S if self.sigma_S > 0 else math.inf


@dataclass(frozen=True)
class LossResult:
    loss: float
    sigma_loss: float
    slope: float
    intercept: float


def fit_fringe(curve_or_theta, counts: Optional[Sequence[float]] = None,
               degenerate_tol: float = 1e-9) -> FringeFit:
    """Poisson-weighted fit of A + B sin^2(theta1 - theta0).

    Accepts a CoincidenceCurve or (theta1_deg, counts) arrays.
    """
    if isinstance(curve_or_theta, CoincidenceCurve):
        theta, y = curve_or_theta.theta1, curve_or_theta.counts
    else:
        theta = np.asarray(curve_or_theta, dtype=float)
        y = np.asarray(counts, dtype=float)
    if theta.shape != y.shape:
        raise ValueError("theta and counts differ in length")
    if np.unique(theta % 180.0).size < 4:
        raise ValueError("fringe fit needs at least 4 distinct analyzer angles")
    if not np.any(y != 0):
        raise ValueError("all counts are zero: no fringe to fit")

    t = np.deg2rad(2 * theta)
    X = np.column_stack([np.ones_like(t), np.cos(t), np.sin(t)])
    w = 1.0 / np.maximum(y, 1.0)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    lin_cov = np.linalg.inv(X.T @ (X * w[:, None]))
    resid = y - X @ coef
    rss = float(np.sum(w * resid ** 2))

    a0, a1, a2 = coef
    r = math.hypot(a1, a2)
    B = 2 * r
    A = a0 - r
    degenerate = bool(r <= degenerate_tol * max(abs(a0), 1.0))
    if degenerate:
        phase = 0.0
        J = np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 0]])
    else:
        phase = (math.degrees(math.atan2(-a2, -a1)) / 2) % 180.0
        # d(theta0)/d(a1, a2) for theta0 = atan2(-a2, -a1) / 2, in degrees
        dth = np.array([-a2, a1]) / (2 * r * r) * (180.0 / math.pi)
        J = np.array([[1.0, -a1 / r, -a2 / r],
                      [0.0, 2 * a1 / r, 2 * a2 / r],
                      [0.0, dth[0], dth[1]]])
    cov = J @ lin_cov @ J.T
    return FringeFit(float(A), float(B), float(phase), cov, rss, len(y) - 3, degenerate)


def visibility(fit: FringeFit) -> VisibilityResult:
    """V = B / (B + 2A) with first-order error propagation."""
    if fit.degenerate:
        raise DegenerateFitError("zero-amplitude fringe has no visibility")
    A, B = fit.offset, fit.amplitude
    denom = B + 2 * A
    if denom <= 0:
        raise DegenerateFitError("fringe maximum is not positive")
    V = B / denom
    grad = np.array([-2 * B / denom ** 2, 2 * A / denom ** 2])
    var = float(grad @ fit.cov[:2, :2] @ grad)
    return VisibilityResult(float(V), math.sqrt(max(var, 0.0)))


def fit_loss(rates: Sequence[Sequence[float]]) -> LossResult:
    """Exponential fit of mean coincidence rate against cycle number.

    ``rates`` holds (n, rate) or (n, rate, sigma_rate) rows.  With sigmas the
    fit of log(rate) is weighted by (rate / sigma)^2 and errors are absolute;
    without them the fit is unweighted and errors come from the residual
    scatter.
    """
    arr = np.asarray(rates, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError("rates must be rows of (n, rate) or (n, rate, sigma)")
    n, r = arr[:, 0], arr[:, 1]
    if np.unique(n).size < 3:
        raise ValueError("loss fit needs at least 3 distinct cycle counts")
    if np.any(r <= 0):
        raise ValueError("rates must be positive for a log-linear fit")
    y = np.log(r)
    X = np.column_stack([np.ones_like(n), n])
    if arr.shape[1] == 3:
        w = (r / arr[:, 2]) ** 2
    else:
        w = np.ones_like(n)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    (intercept, slope) = cov @ (XtW @ y)
    if arr.shape[1] == 2:
        resid = y - X @ np.array([intercept, slope])
        dof = len(n) - 2
        cov = cov * (float(resid @ resid) / dof if dof > 0 else 0.0)
    sigma_slope = math.sqrt(max(cov[1, 1], 0.0))
    keep = math.exp(slope)
    return LossResult(1.0 - keep, keep * sigma_slope, float(slope), float(intercept))


def chsh_from_visibilities(v_hv: VisibilityResult, v_diag: VisibilityResult) -> BellResult:
    """S = sqrt(2) (V_hv + V_diag) for a maximally entangled state with
    reduced fringe contrast."""
    S = SQRT2 * (v_hv.V + v_diag.V)
    return BellResult(S, SQRT2 * math.hypot(v_hv.sigma_V, v_diag.sigma_V))


CHSH_A = (0.0, 45.0)
CHSH_B = (22.5, 67.5)


def chsh_settings() -> list[tuple[float, float]]:
    """The 16 (theta1, theta2) analyzer pairs used by chsh_from_counts."""
    out = []
    for a in CHSH_A:
        for b in CHSH_B:
            for da in (0.0, 90.0):
                for db in (0.0, 90.0):
                    out.append((a + da, b + db))
    return out


def correlation(counts: Mapping[tuple[float, float], float], a: float, b: float) -> tuple[float, float]:
    """E(a, b) from the four coincidence counts at a/a+90 and b/b+90, with error."""
    npp = counts[(a, b)]
    nmm = counts[(a + 90, b + 90)]
    npm = counts[(a, b + 90)]
    nmp = counts[(a + 90, b)]
    tot = npp + nmm + npm + nmp
    if tot <= 0:
        raise ValueError(f"no coincidences at settings ({a}, {b})")
    E = (npp + nmm - npm - nmp) / tot
    return E, math.sqrt(max(1 - E * E, 0.0) / tot)


def chsh_from_counts(counts: Mapping[tuple[float, float], float]) -> BellResult:
    """Direct CHSH estimate |E(a,b) - E(a,b') + E(a',b) + E(a',b')| from the
    16 coincidence counts at a = 0, a' = 45, b = 22.5, b' = 67.5 degrees."""
    (a, a2), (b, b2) = CHSH_A, CHSH_B
    e1, s1 = correlation(counts, a, b)
    e2, s2 = correlation(counts, a, b2)
    e3, s3 = correlation(counts, a2, b)
    e4, s4 = correlation(counts, a2, b2)
    S = abs(e1 - e2 + e3 + e4)
    return BellResult(S, math.sqrt(s1 ** 2 + s2 ** 2 + s3 ** 2 + s4 ** 2))


def fringe_shift(before: FringeFit, after: FringeFit) -> tuple[float, float]:
    """(theta0_after - theta0_before) mod 180 deg and its 1-sigma error."""
    if before.degenerate or after.degenerate:
        raise DegenerateFitError("fringe shift undefined for a zero-amplitude fit")
    shift = (after.phase - before.phase) % 180.0
    return shift, math.hypot(before.sigma[2], after.sigma[2])


def mean_rate(curve: CoincidenceCurve) -> tuple[float, float]:
    """Coincidences per pump pulse averaged over the sweep, with Poisson error."""
    total = curve.counts.sum()
    exposure = curve.exposure.sum()
    return total / exposure, math.sqrt(max(total, 1.0)) / exposure
