"""Forward model: square-pulse smearing plus per-column background.

The detected rate is the backscatter rate convolved along time-of-flight
with a unit-area square pulse, plus a background that is constant within
each shot column.  Zero-padding is used at the window boundaries, so the
first ``pulse_contaminated_bins`` bins of any output only see part of the
pulse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CountImage, RateImage, Resolution, TimeTagStream
from .errors import ConfigError, DimensionError, DomainError
from .likelihood import LOG_RATE_FLOOR, discrete_nll, discrete_nll_grad


@dataclass(frozen=True)
class PulseKernel:
    """Square laser pulse of the given duration (seconds).

    The kernel is normalized to unit area, so convolving a rate image
    preserves its units and total photon budget; a width of zero means an
    ideal (delta) pulse.
    """

    width: float

    def __post_init__(self):
        if self.width < 0:
            raise DomainError("pulse width must be >= 0")

    @classmethod
    def delta(cls) -> "PulseKernel":
        return cls(0.0)

    def weights(self, tof_width: float) -> np.ndarray:
        """Dimensionless convolution weights at bin width ``tof_width``.

        weights[j] is the fraction of the pulse overlapping bin j; they
        sum to one, with a partial last tap when the width is not a
        multiple of the bin.
        """
        if tof_width <= 0:
            raise DomainError("tof_width must be > 0")
        if self.width == 0.0:
            return np.array([1.0])
        m = int(np.ceil(self.width / tof_width - 1e-9))
        edges = np.arange(m + 1) * tof_width
        w = (np.minimum(edges[1:], self.width) - edges[:-1]) / self.width
        return w / w.sum()

    def taps(self, tof_width: float) -> np.ndarray:
        """Unit-area taps (1/s): sum(taps) * tof_width == 1."""
        return self.weights(tof_width) / tof_width

    def n_taps(self, tof_width: float) -> int:
        return self.weights(tof_width).size


def pulse_contaminated_bins(kernel: PulseKernel, tof_width: float) -> int:
    """Leading output bins whose value partly depends on zero padding."""
    return kernel.n_taps(tof_width) - 1


@dataclass(frozen=True)
class Background:
    """Per-shot-column background rates (Hz)."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64)
        if r.ndim != 1:
            raise DimensionError("background rates must be a 1-D per-column array")
        if r.size and r.min() < 0:
            raise DomainError("background rates must be >= 0")
        r = r.copy()
        r.flags.writeable = False
        object.__setattr__(self, "rates", r)

    @classmethod
    def zero(cls, n_cols: int) -> "Background":
        return cls(np.zeros(n_cols))

    @classmethod
    def constant(cls, value: float, n_cols: int) -> "Background":
        return cls(np.full(n_cols, float(value)))

    def at_shot_scale(self, k: int) -> "Background":
        """Average the per-column rates over groups of k columns."""
        if k == 1:
            return self
        if self.rates.size % k:
            raise DimensionError(
                f"{self.rates.size} columns not divisible into groups of {k}")
        return Background(self.rates.reshape(-1, k).mean(axis=1))


def _conv_columns(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Causal convolution along axis 0 with zero padding."""
    out = np.zeros_like(x)
    n = x.shape[0]
    for j, wj in enumerate(w):
        if j == 0:
            out += wj * x
        else:
            out[j:, :] += wj * x[: n - j, :]
    return out


def _corr_columns(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_conv_columns`: correlation with zero padding."""
    out = np.zeros_like(g)
    n = g.shape[0]
    for j, wj in enumerate(w):
        if j == 0:
            out += wj * g
        else:
            out[: n - j, :] += wj * g[j:, :]
    return out


def _bg_array(bg, n_cols: int) -> np.ndarray:
    if bg is None:
        return np.zeros(n_cols)
    rates = bg.rates if isinstance(bg, Background) else np.asarray(bg, float)
    if rates.size != n_cols:
        raise DimensionError(
            f"background has {rates.size} columns, image has {n_cols}")
    return rates


def apply_forward(x: RateImage, kernel: PulseKernel | None = None,
                  bg: Background | None = None) -> RateImage:
    """Detected rate image: pulse-convolved backscatter plus background."""
    kernel = kernel or PulseKernel.delta()
    w = kernel.weights(x.resolution.tof_width)
    if w.size > x.shape[0]:
        raise ConfigError(
            f"pulse spans {w.size} bins but the image has only {x.shape[0]}")
    out = _conv_columns(x.rates, w)
    out += _bg_array(bg, x.shape[1])[np.newaxis, :]
    return RateImage(out, x.resolution)


def apply_adjoint(g: np.ndarray, kernel: PulseKernel | None,
                  tof_width: float) -> np.ndarray:
    """Adjoint of the pulse convolution applied to a gradient image."""
    kernel = kernel or PulseKernel.delta()
    w = kernel.weights(tof_width)
    g = np.asarray(g, dtype=np.float64)
    if w.size > g.shape[0]:
        raise ConfigError(
            f"pulse spans {w.size} bins but the image has only {g.shape[0]}")
    return _corr_columns(g, w)


def composed_nll_grad(x: RateImage, counts: CountImage,
                      kernel: PulseKernel | None = None,
                      bg: Background | None = None) -> tuple[float, np.ndarray]:
    """NLL of the forward-modeled rates and its gradient in x (chain rule)."""
    detected = apply_forward(x, kernel, bg)
    value = discrete_nll(detected, counts)
    g_detected = discrete_nll_grad(detected, counts)
    g_x = apply_adjoint(g_detected, kernel, x.resolution.tof_width)
    return value, g_x


def composed_nll(x: RateImage, counts: CountImage,
                 kernel: PulseKernel | None = None,
                 bg: Background | None = None) -> float:
    """NLL of the forward-modeled rates (no gradient, cheaper in line search)."""
    return discrete_nll(apply_forward(x, kernel, bg), counts)


def estimate_background(tags: TimeTagStream, region: tuple[float, float],
                        shots_per_col: int, etas=None,
                        solver_config=None) -> Background:
    """Estimate per-column background from a signal-free time-of-flight region.

    Bins the region's counts to one cell per shot column, splits fit and
    validation data by alternating shots, and solves a one-row PTV problem
    (total variation along the column axis only), picking the penalty that
    minimizes the validation NLL.  Returned rates are floored at
    ``LOG_RATE_FLOOR``.
    """
    from .solver import SolverConfig, spiral_solve
    from .coarse2fine import select_eta
    from .simulate import manual_thin

    spec = tags.spec
    clock = spec.clock_period
    lo = int(np.ceil(region[0] / clock - 1e-9))
    hi = int(np.ceil(region[1] / clock - 1e-9))
    lo = max(lo, 0)
    hi = min(hi, spec.tof_bins_total)
    if hi <= lo:
        raise ConfigError(f"background region {region} contains no ticks")
    if shots_per_col % 2:
        raise ConfigError("shots_per_col must be even to thin by alternate shots")
    duration = (hi - lo) * clock

    split = manual_thin(tags)
    half = shots_per_col // 2

    def region_counts(stream):
        n_cols = stream.spec.shots_total // half
        sel = (stream.ticks >= lo) & (stream.ticks < hi)
        cols = stream.shots[sel] // half
        keep = cols < n_cols
        counts = np.bincount(cols[keep], minlength=n_cols).reshape(1, -1)
        res = Resolution(1, 1, duration, half)
        return CountImage(counts, res, np.full(n_cols, half, dtype=np.int64))

    fit_counts = region_counts(split.fit)
    val_counts = region_counts(split.validation)
    n_cols = fit_counts.shape[1]

    exposure = half * duration
    if etas is None:
        etas = np.concatenate([[0.0], exposure * np.logspace(-2, 2, 9)])
    cfg = solver_config or SolverConfig()

    mean_rate = max(fit_counts.total / (exposure * n_cols), LOG_RATE_FLOOR)
    x0 = RateImage(np.full((1, n_cols), mean_rate), fit_counts.resolution)
    candidates = []
    for eta in etas:
        sol, _ = spiral_solve(x0, fit_counts, None, None,
                              cfg.with_eta(float(eta)))
        candidates.append((float(eta), sol))
    chosen = select_eta(candidates, val_counts, None, None)
    return Background(np.maximum(chosen.solution.rates[0], LOG_RATE_FLOOR))
