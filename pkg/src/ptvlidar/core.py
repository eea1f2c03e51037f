"""Core data types for photon-counting lidar images and the histogram estimator.

Conventions used throughout the package:

* Rate images are photon arrival rates in Hz; expected counts are
  dimensionless.  A cell's expected count is ``rate * shots * bin_width``.
* Image axes are (time-of-flight bin p, shot column q), so arrays have
  shape ``(P, Q)``.
* Time-of-flight bins are half-open intervals ``[t_p, t_p + dt)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

log = logging.getLogger(__name__)

# Relative tolerance when checking that one duration is an integer multiple
# of another; absorbs float rounding in values like 5e-9 / 1e-9.
_DIV_RTOL = 1e-9


def _exact_multiple(numer: float, denom: float) -> int | None:
    """Integer ratio numer/denom, or None if it is not an integer."""
    ratio = numer / denom
    rounded = round(ratio)
    if rounded < 1 or abs(ratio - rounded) > _DIV_RTOL * max(ratio, 1.0):
        return None
    return int(rounded)


@dataclass(frozen=True)
class AcquisitionSpec:
    """Timing layout of a time-tagged acquisition.

    clock_period
        Seconds per time-of-flight tick (acquisition clock).
    shot_period
        Seconds between laser shots (repetition period).
    tof_bins_total
        Number of clock ticks recorded per shot.
    shots_total
        Number of laser shots in the stream.
    """

    clock_period: float
    shot_period: float
    tof_bins_total: int
    shots_total: int

    def __post_init__(self):
        if self.clock_period <= 0:
            raise DomainError(f"clock_period must be > 0, got {self.clock_period}")
        if self.tof_bins_total < 1 or self.shots_total < 1:
            raise DomainError("tof_bins_total and shots_total must be >= 1")
        window = self.clock_period * self.tof_bins_total
        if self.shot_period < window * (1.0 - _DIV_RTOL):
            raise DomainError(
                f"shot_period {self.shot_period} is shorter than the "
                f"recorded time-of-flight window {window}"
            )

    @property
    def tof_window(self) -> float:
        """Duration of the recorded time-of-flight span, seconds."""
        return self.clock_period * self.tof_bins_total


@dataclass(frozen=True)
class TimeTagStream:
    """Per-photon arrival records, sorted by (shot, time-of-flight tick).

    ``shots`` and ``ticks`` are parallel int64 arrays; entry i says photon i
    arrived ``ticks[i]`` clock ticks after the start of shot ``shots[i]``.
    """

    shots: np.ndarray
    ticks: np.ndarray
    spec: AcquisitionSpec

    def __post_init__(self):
        shots = np.asarray(self.shots, dtype=np.int64)
        ticks = np.asarray(self.ticks, dtype=np.int64)
        if shots.ndim != 1 or ticks.ndim != 1 or shots.shape != ticks.shape:
            raise DimensionError("shots and ticks must be 1-D arrays of equal length")
        if shots.size:
            if shots.min() < 0 or shots.max() >= self.spec.shots_total:
                raise DomainError("shot index outside [0, shots_total)")
            if ticks.min() < 0 or ticks.max() >= self.spec.tof_bins_total:
                raise DomainError("tof tick outside [0, tof_bins_total)")
            order = shots[1:] - shots[:-1]
            if order.size and order.min() < 0:
                raise DomainError("records not sorted by shot index")
            same = order == 0
            if same.any() and (ticks[1:][same] - ticks[:-1][same]).min() < 0:
                raise DomainError("records not sorted by tick within a shot")
        shots.flags.writeable = False
        ticks.flags.writeable = False
        object.__setattr__(self, "shots", shots)
        object.__setattr__(self, "ticks", ticks)

    @classmethod
    def from_records(cls, records, spec: AcquisitionSpec) -> "TimeTagStream":
        """Build a stream from an iterable of (shot, tick) pairs (sorts them)."""
        arr = np.asarray(list(records), dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        return cls(arr[order, 0], arr[order, 1], spec)

    @property
    def n_records(self) -> int:
        return int(self.shots.size)

    def times(self) -> np.ndarray:
        """Arrival times in seconds at tick centers."""
        return (self.ticks + 0.5) * self.spec.clock_period


@dataclass(frozen=True)
class Resolution:
    """Grid resolution expressed as integer multipliers of a base grid.

    The bin width is ``tof_scale * base_tof_width`` seconds and each shot
    column aggregates ``shot_scale * base_shots_per_col`` laser shots.
    """

    tof_scale: int
    shot_scale: int
    base_tof_width: float
    base_shots_per_col: int

    def __post_init__(self):
        if self.tof_scale < 1 or self.shot_scale < 1 or self.base_shots_per_col < 1:
            raise DomainError("resolution multipliers must be >= 1")
        if self.base_tof_width <= 0:
            raise DomainError("base_tof_width must be > 0")

    @property
    def tof_width(self) -> float:
        """Time-of-flight bin width in seconds."""
        return self.tof_scale * self.base_tof_width

    @property
    def shots_per_col(self) -> int:
        """Laser shots aggregated into one shot column."""
        return self.shot_scale * self.base_shots_per_col

    def scaled(self, k_tof: int, k_shot: int) -> "Resolution":
        """Coarser resolution with multipliers grown by (k_tof, k_shot)."""
        return Resolution(self.tof_scale * k_tof, self.shot_scale * k_shot,
                          self.base_tof_width, self.base_shots_per_col)

    def refined(self, k_tof: int, k_shot: int) -> "Resolution":
        """Finer resolution with multipliers divided by (k_tof, k_shot)."""
        if self.tof_scale % k_tof or self.shot_scale % k_shot:
            raise DimensionError(
                f"scales ({self.tof_scale},{self.shot_scale}) not divisible "
                f"by ({k_tof},{k_shot})"
            )
        return Resolution(self.tof_scale // k_tof, self.shot_scale // k_shot,
                          self.base_tof_width, self.base_shots_per_col)

    def ticks_per_bin(self, spec: AcquisitionSpec) -> int:
        """Clock ticks per time-of-flight bin; error if not an integer."""
        per_base = _exact_multiple(self.base_tof_width, spec.clock_period)
        if per_base is None:
            raise DimensionError(
                f"base_tof_width {self.base_tof_width} is not an integer "
                f"multiple of the clock period {spec.clock_period}"
            )
        return per_base * self.tof_scale

    def with_shots_per_col(self, base_shots_per_col: int) -> "Resolution":
        return Resolution(self.tof_scale, self.shot_scale,
                          self.base_tof_width, base_shots_per_col)


@dataclass(frozen=True)
class CountImage:
    """Photon counts on a (tof bin, shot column) grid.

    ``shots_per_column`` records how many laser shots fed each column; it is
    the exposure bookkeeping used by the Poisson likelihood.
    """

    counts: np.ndarray
    resolution: Resolution
    shots_per_column: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DimensionError("counts must be 2-D (tof bins x shot columns)")
        if counts.size and counts.min() < 0:
            raise DomainError("counts must be nonnegative")
        counts = counts.astype(np.uint32)
        spc = np.asarray(self.shots_per_column, dtype=np.int64)
        if spc.ndim != 1 or spc.size != counts.shape[1]:
            raise DimensionError("shots_per_column must have one entry per column")
        if spc.size and spc.min() < 1:
            raise DomainError("shots_per_column entries must be >= 1")
        counts.flags.writeable = False
        spc.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "shots_per_column", spc)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum(dtype=np.int64))


@dataclass(frozen=True)
class RateImage:
    """Nonnegative photon arrival rates (Hz) on a (tof bin, shot column) grid."""

    rates: np.ndarray
    resolution: Resolution

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=np.float64)
        if rates.ndim != 2:
            raise DimensionError("rates must be 2-D (tof bins x shot columns)")
        if rates.size and not np.isfinite(rates).all():
            raise DomainError("rates must be finite")
        if rates.size and rates.min() < 0:
            raise DomainError("rates must be nonnegative")
        rates = rates.copy()
        rates.flags.writeable = False
        object.__setattr__(self, "rates", rates)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rates.shape

    @classmethod
    def constant(cls, value: float, shape: tuple[int, int],
                 resolution: Resolution) -> "RateImage":
        return cls(np.full(shape, float(value)), resolution)


def bin_time_tags(tags: TimeTagStream, res: Resolution) -> CountImage:
    """Histogram a time-tag stream onto the grid described by ``res``.

    Bins are half-open in time-of-flight; a tag exactly on an edge belongs
    to the upper bin.  Trailing ticks or shots that do not fill a complete
    bin or column are dropped with a logged warning.
    """
    spec = tags.spec
    tpb = res.ticks_per_bin(spec)
    n_bins = spec.tof_bins_total // tpb
    if n_bins < 1:
        raise DimensionError(
            f"bin width of {tpb} ticks exceeds the {spec.tof_bins_total}-tick window"
        )
    spc = res.shots_per_col
    n_cols = spec.shots_total // spc
    if n_cols < 1:
        raise DimensionError(
            f"column width of {spc} shots exceeds the {spec.shots_total}-shot stream"
        )
    if spec.tof_bins_total % tpb:
        log.warning("dropping %d trailing ticks not filling a %d-tick bin",
                    spec.tof_bins_total % tpb, tpb)
    if spec.shots_total % spc:
        log.warning("dropping %d trailing shots not filling a %d-shot column",
                    spec.shots_total % spc, spc)

    p = tags.ticks // tpb
    q = tags.shots // spc
    keep = (p < n_bins) & (q < n_cols)
    flat = p[keep] * n_cols + q[keep]
    counts = np.bincount(flat, minlength=n_bins * n_cols).reshape(n_bins, n_cols)
    return CountImage(counts, res, np.full(n_cols, spc, dtype=np.int64))


def downsample_counts(img: CountImage, k_tof: int, k_shot: int) -> CountImage:
    """Sum counts over k_tof x k_shot blocks (exact, count-conserving)."""
    if k_tof < 1 or k_shot < 1:
        raise DomainError("downsample factors must be >= 1")
    p, q = img.shape
    if p % k_tof or q % k_shot:
        raise DimensionError(
            f"image shape {img.shape} not divisible by blocks ({k_tof},{k_shot})"
        )
    c = img.counts.astype(np.int64)
    c = c.reshape(p // k_tof, k_tof, q // k_shot, k_shot).sum(axis=(1, 3))
    spc = img.shots_per_column.reshape(q // k_shot, k_shot).sum(axis=1)
    return CountImage(c, img.resolution.scaled(k_tof, k_shot), spc)


def upsample_rates(img: RateImage, k_tof: int, k_shot: int) -> RateImage:
    """Replicate each cell into a k_tof x k_shot block (rates are intensive)."""
    if k_tof < 1 or k_shot < 1:
        raise DomainError("upsample factors must be >= 1")
    rates = np.repeat(np.repeat(img.rates, k_tof, axis=0), k_shot, axis=1)
    return RateImage(rates, img.resolution.refined(k_tof, k_shot))


def standard_estimate(img: CountImage) -> RateImage:
    """Histogram rate estimator: counts divided by exposure, y / (N dt)."""
    dt = img.resolution.tof_width
    exposure = img.shots_per_column.astype(np.float64) * dt
    return RateImage(img.counts / exposure[np.newaxis, :], img.resolution)


def snr(alpha):
    """Signal-to-noise ratio of a Poisson count with mean ``alpha``: sqrt(alpha)."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.size and a.min() < 0:
        raise DomainError("expected counts must be nonnegative")
    out = np.sqrt(a)
    return float(out) if np.isscalar(alpha) or out.ndim == 0 else out


def mean_flux(alpha, n_shots: int, dt: float):
    """Mean photon flux over an acquisition interval: alpha / (N dt), in Hz."""
    if n_shots < 1:
        raise DomainError("n_shots must be >= 1")
    if dt <= 0:
        raise DomainError("dt must be > 0")
    a = np.asarray(alpha, dtype=np.float64)
    out = a / (n_shots * dt)
    return float(out) if np.isscalar(alpha) or out.ndim == 0 else out
