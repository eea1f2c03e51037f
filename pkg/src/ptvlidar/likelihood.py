"""Poisson negative log-likelihoods for time tags and binned counts.

Two equivalent losses are provided: the point-process NLL evaluated on raw
time tags, and the binned form used by the solver.  For a rate image that
is piecewise constant on its own grid the two agree exactly, which is also
why the solver never needs the raw tags once counts are binned at the
solution resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .core import CountImage, RateImage, TimeTagStream
from .errors import (
    DimensionError,
    DomainError,
    FitConvergenceError,
    InfiniteLikelihoodError,
    InsufficientDataError,
)

# Floor applied inside log terms only where the paired count is zero; a zero
# rate under a positive count is a modeling failure and raises instead.
LOG_RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianParams:
    """Amplitude A (Hz), center mu (s), width sigma (s), background b (Hz)."""

    A: float
    mu: float
    sigma: float
    b: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError("sigma must be > 0")
        if self.A < 0 or self.b < 0:
            raise DomainError("A and b must be >= 0")

    def rate(self, t):
        t = np.asarray(t, dtype=np.float64)
        z = (t - self.mu) / self.sigma
        return self.A * np.exp(-0.5 * z * z) + self.b


def _check_grids(rate: RateImage, counts: CountImage):
    if rate.shape != counts.shape:
        raise DimensionError(
            f"rate grid {rate.shape} does not match counts grid {counts.shape}")
    rw, cw = rate.resolution.tof_width, counts.resolution.tof_width
    if abs(rw - cw) > 1e-9 * max(rw, cw):
        raise DimensionError(
            f"rate bin width {rw} does not match counts bin width {cw}")


def discrete_nll(rate: RateImage, counts: CountImage) -> float:
    """Binned Poisson NLL: sum of N_q rho dt - y ln(rho) over the grid."""
    _check_grids(rate, counts)
    rho = rate.rates
    y = counts.counts
    dt = rate.resolution.tof_width
    exposure = counts.shots_per_column.astype(np.float64) * dt
    term1 = float(rho.sum(axis=0) @ exposure)
    pos = y > 0
    if pos.any():
        bad = pos & (rho <= 0.0)
        if bad.any():
            p, q = np.argwhere(bad)[0]
            raise InfiniteLikelihoodError(
                f"zero rate under {y[p, q]} counts at cell ({p}, {q})",
                cell=(int(p), int(q)))
        term2 = float((y[pos] * np.log(rho[pos])).sum())
    else:
        term2 = 0.0
    return term1 - term2


def discrete_nll_grad(rate: RateImage, counts: CountImage) -> np.ndarray:
    """Gradient of :func:`discrete_nll` in the rates: N_q dt - y / rho."""
    _check_grids(rate, counts)
    rho = rate.rates
    y = counts.counts
    dt = rate.resolution.tof_width
    g = np.tile(counts.shots_per_column.astype(np.float64) * dt,
                (rho.shape[0], 1))
    pos = y > 0
    if pos.any():
        bad = pos & (rho <= 0.0)
        if bad.any():
            p, q = np.argwhere(bad)[0]
            raise InfiniteLikelihoodError(
                f"zero rate under {y[p, q]} counts at cell ({p}, {q})",
                cell=(int(p), int(q)))
        g[pos] -= y[pos] / rho[pos]
    return g


def time_tag_nll(rate: RateImage, tags: TimeTagStream) -> float:
    """Point-process NLL of raw tags under a piecewise-constant rate image.

    The per-shot integral term is exact for the piecewise-constant rate:
    sum of rho dt over the column's bins.  Every tag must land in a grid
    cell with positive rate; the rate is zero outside its grid.
    """
    spec = tags.spec
    tpb = rate.resolution.ticks_per_bin(spec)
    n_bins, n_cols = rate.shape
    spc = rate.resolution.shots_per_col
    if n_cols * spc != spec.shots_total:
        raise DimensionError(
            f"rate grid covers {n_cols * spc} shots but the stream has "
            f"{spec.shots_total}")
    if n_bins * tpb > spec.tof_bins_total:
        raise DimensionError("rate grid extends beyond the acquisition window")

    dt = rate.resolution.tof_width
    integral = float(rate.rates.sum()) * spc * dt

    if tags.n_records == 0:
        return integral
    p = tags.ticks // tpb
    q = tags.shots // spc
    outside = p >= n_bins
    if outside.any():
        i = int(np.argmax(outside))
        raise InfiniteLikelihoodError(
            f"tag at tick {tags.ticks[i]} falls outside the rate grid "
            f"(zero rate)", cell=(int(p[i]), int(q[i])))
    vals = rate.rates[p, q]
    if (vals <= 0.0).any():
        i = int(np.argmax(vals <= 0.0))
        raise InfiniteLikelihoodError(
            f"zero rate at a tag location, cell ({p[i]}, {q[i]})",
            cell=(int(p[i]), int(q[i])))
    return integral - float(np.log(vals).sum())


def gauss_cum_integral(params: GaussianParams, t: float) -> float:
    """Integral of the Gaussian-plus-background rate from 0- to t.

    (1/2) A sigma sqrt(2 pi) [1 + erf((t - mu)/(sigma sqrt 2))] + b t;
    the Gaussian part is measured from -infinity, which cancels in any
    difference of two evaluations.
    """
    z = (t - params.mu) / (params.sigma * math.sqrt(2.0))
    gauss = 0.5 * params.A * params.sigma * math.sqrt(2.0 * math.pi) \
        * (1.0 + special.erf(z))
    return gauss + params.b * t


def gaussian_time_tag_nll(params: GaussianParams, tags: TimeTagStream) -> float:
    """Time-tag NLL of the Gaussian-plus-background rate model."""
    spec = tags.spec
    per_shot = gauss_cum_integral(params, spec.shot_period) \
        - gauss_cum_integral(params, 0.0)
    integral = spec.shots_total * per_shot
    if tags.n_records == 0:
        return integral
    rates = params.rate(tags.times())
    if (rates <= 0.0).any():
        raise InfiniteLikelihoodError(
            "model rate is zero at an observed tag (A and b both vanish "
            "there)")
    return integral - float(np.log(rates).sum())


@dataclass(frozen=True)
class GaussianFit:
    params: GaussianParams
    nll: float
    n_iter: int


def moment_init(tags: TimeTagStream) -> GaussianParams:
    """Moment-based starting point: peak from tag mean/std, background
    from a nominal 20% of counts spread over the window."""
    if tags.n_records == 0:
        raise InsufficientDataError("cannot initialize a fit from zero tags")
    t = tags.times()
    n = tags.spec.shots_total
    window = tags.spec.shot_period
    mu0 = float(t.mean())
    sigma0 = max(float(t.std()), tags.spec.clock_period)
    total = tags.n_records
    a0 = max(0.8 * total / (n * sigma0 * math.sqrt(2 * math.pi)), 1e-30)
    b0 = max(0.2 * total / (n * window), 1e-30)
    return GaussianParams(a0, mu0, sigma0, b0)


def fit_gaussian_mle(tags: TimeTagStream, init: GaussianParams | None = None,
                     max_iter: int = 10000) -> GaussianFit:
    """Maximum-likelihood Gaussian fit directly to the time tags.

    Optimizes (ln A, mu, ln sigma, ln b) with Nelder-Mead so positivity
    needs no explicit constraints; mu is scaled by the initial sigma so
    every coordinate has comparable magnitude and the 1e-8 step tolerance
    is a relative one.  Raises on an empty stream; raises a diagnostic
    error carrying the best iterate if the iteration budget is exhausted
    first.
    """
    if tags.n_records == 0:
        raise InsufficientDataError("cannot fit a rate model to zero tags")
    if init is None:
        init = moment_init(tags)
    t_scale = max(init.sigma, tags.spec.clock_period)
    theta0 = np.array([math.log(max(init.A, 1e-30)), init.mu / t_scale,
                       math.log(init.sigma), math.log(max(init.b, 1e-30))])
    times = tags.times()
    spec = tags.spec

    def nll_of(theta):
        a, mu, sigma, b = math.exp(theta[0]), theta[1] * t_scale, \
            math.exp(theta[2]), math.exp(theta[3])
        z_hi = (spec.shot_period - mu) / (sigma * math.sqrt(2.0))
        z_lo = (0.0 - mu) / (sigma * math.sqrt(2.0))
        per_shot = 0.5 * a * sigma * math.sqrt(2 * math.pi) \
            * (special.erf(z_hi) - special.erf(z_lo)) + b * spec.shot_period
        zz = (times - mu) / sigma
        rates = a * np.exp(-0.5 * zz * zz) + b
        return spec.shots_total * per_shot - float(np.log(rates).sum())

    # fatol must sit above the float noise floor of the NLL magnitude
    fatol = 1e-9 * max(1.0, abs(nll_of(theta0)))
    result = optimize.minimize(
        nll_of, theta0, method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": fatol, "maxiter": max_iter,
                 "maxfev": 4 * max_iter})
    theta = result.x
    params = GaussianParams(math.exp(theta[0]), float(theta[1]) * t_scale,
                            math.exp(theta[2]), math.exp(theta[3]))
    if not result.success:
        raise FitConvergenceError(
            f"Gaussian fit did not converge in {max_iter} iterations",
            best_params=params, best_nll=float(result.fun))
    return GaussianFit(params, float(result.fun), int(result.nit))
