"""Scene models, Poisson point-process sampling, and holdout thinning.

All random draws use counter-based Philox streams keyed on an explicit
seed, so results are reproducible across platforms and each laser shot
gets its own substream derived from (seed, shot index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AcquisitionSpec, CountImage, RateImage, Resolution, TimeTagStream
from .errors import DomainError, InsufficientDataError

# Domain-separation constants so different operations sharing a seed do not
# share a Philox stream.
_STREAM_BERNOULLI = 0xB3A91E5D17C0FFEE
_STREAM_BINOMIAL = 0x5EEDFACE00C0DE01
_STREAM_PATCHES = 0x00D1CE0FDA7A5EED


def _rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class RectPatch:
    """Axis-aligned rectangle of extra arrival rate.

    Half-open bounds: time-of-flight in [tof_start, tof_end) seconds, shot
    index in [shot_start, shot_end).
    """

    tof_start: float
    tof_end: float
    shot_start: int
    shot_end: int
    rate: float


@dataclass(frozen=True)
class RectPatchScene:
    """Uniform background plus additive rectangular patches.

    Overlapping patches sum.  ``tof_extent`` (seconds) and ``shot_extent``
    (shots) bound all patches; ``seed`` records the generating seed when the
    scene came from :func:`random_patch_scene`.
    """

    background_rate: float
    patches: tuple[RectPatch, ...]
    tof_extent: float
    shot_extent: int
    seed: int | None = None

    def __post_init__(self):
        if self.background_rate < 0:
            raise DomainError("background_rate must be >= 0")
        object.__setattr__(self, "patches", tuple(self.patches))
        for p in self.patches:
            if p.rate < 0:
                raise DomainError("patch rates must be >= 0")
            if not (0 <= p.tof_start < p.tof_end <= self.tof_extent * (1 + 1e-12)):
                raise DomainError(f"patch tof bounds {p.tof_start}..{p.tof_end} "
                                  "outside scene extent")
            if not (0 <= p.shot_start < p.shot_end <= self.shot_extent):
                raise DomainError(f"patch shot bounds {p.shot_start}..{p.shot_end} "
                                  "outside scene extent")

    def rate_at(self, t: float, shot: int) -> float:
        r = self.background_rate
        for p in self.patches:
            if p.tof_start <= t < p.tof_end and p.shot_start <= shot < p.shot_end:
                r += p.rate
        return r

    def rate_on_ticks(self, spec: AcquisitionSpec, shot: int) -> np.ndarray:
        """Arrival rate at every tick midpoint of one shot."""
        rates = np.full(spec.tof_bins_total, self.background_rate)
        dt = spec.clock_period
        for p in self.patches:
            if not (p.shot_start <= shot < p.shot_end):
                continue
            # tick midpoints (j + 0.5) dt inside [tof_start, tof_end)
            lo = int(np.ceil(p.tof_start / dt - 0.5 - 1e-9))
            hi = int(np.ceil(p.tof_end / dt - 0.5 - 1e-9))
            lo = max(lo, 0)
            hi = min(hi, spec.tof_bins_total)
            if hi > lo:
                rates[lo:hi] += p.rate
        return rates


@dataclass(frozen=True)
class GaussianScene:
    """Gaussian pulse of amplitude A at mu with width sigma over background b."""

    A: float
    mu: float
    sigma: float
    b: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError("sigma must be > 0")
        if self.A < 0 or self.b < 0:
            raise DomainError("A and b must be >= 0")

    def rate_at(self, t, shot: int = 0):
        t = np.asarray(t, dtype=np.float64)
        z = (t - self.mu) / self.sigma
        out = self.A * np.exp(-0.5 * z * z) + self.b
        return float(out) if out.ndim == 0 else out

    def rate_on_ticks(self, spec: AcquisitionSpec, shot: int = 0) -> np.ndarray:
        centers = (np.arange(spec.tof_bins_total) + 0.5) * spec.clock_period
        return self.rate_at(centers)


def eval_scene(scene, t: float, shot: int) -> float:
    """Arrival rate (Hz) of a scene at time-of-flight ``t`` during ``shot``."""
    return scene.rate_at(t, shot)


def random_patch_scene(background_rate: float, tof_extent: float,
                       shot_extent: int, seed: int, n_patches: int = 8,
                       rate_factor_range: tuple[float, float] = (0.1, 10.0),
                       size_frac_range: tuple[float, float] = (0.05, 0.5),
                       align_tof: float | None = None,
                       align_shot: int = 1) -> RectPatchScene:
    """Generate a seeded scene of random rectangular patches.

    Patch rates are log-uniform in ``rate_factor_range`` times the
    background; each side length is a uniform fraction of its axis extent
    in ``size_frac_range``.  ``align_tof`` (seconds) and ``align_shot``
    snap patch bounds to a grid so the scene is exactly representable on
    images at that resolution.
    """
    rng = _rng(seed, _STREAM_PATCHES)
    lo, hi = rate_factor_range
    patches = []
    for _ in range(n_patches):
        rate = background_rate * math.exp(rng.uniform(math.log(lo), math.log(hi)))
        w_t = rng.uniform(*size_frac_range) * tof_extent
        w_s = rng.uniform(*size_frac_range) * shot_extent
        t0 = rng.uniform(0, tof_extent - w_t)
        s0 = rng.uniform(0, shot_extent - w_s)
        t1, s1 = t0 + w_t, s0 + w_s
        if align_tof:
            t0 = round(t0 / align_tof) * align_tof
            t1 = round(t1 / align_tof) * align_tof
            if t1 <= t0:
                t1 = t0 + align_tof
        s0 = int(round(s0 / align_shot)) * align_shot
        s1 = int(round(s1 / align_shot)) * align_shot
        if s1 <= s0:
            s1 = s0 + align_shot
        t1 = min(t1, tof_extent)
        s1 = min(s1, shot_extent)
        patches.append(RectPatch(t0, t1, s0, s1, rate))
    return RectPatchScene(background_rate, tuple(patches), tof_extent,
                          shot_extent, seed=seed)


def scene_truth_image(scene, spec: AcquisitionSpec, res: Resolution):
    """Mean arrival rate of a scene on the grid of ``res``.

    Averages the per-tick rates the sampler uses, so it is the exact
    expectation of ``standard_estimate(bin_time_tags(sample, res))``.
    """
    tpb = res.ticks_per_bin(spec)
    n_bins = spec.tof_bins_total // tpb
    spc = res.shots_per_col
    n_cols = spec.shots_total // spc
    out = np.zeros((n_bins, n_cols))
    for q in range(n_cols):
        acc = np.zeros(n_bins)
        for s in range(q * spc, (q + 1) * spc):
            ticks = scene.rate_on_ticks(spec, s)[: n_bins * tpb]
            acc += ticks.reshape(n_bins, tpb).mean(axis=1)
        out[:, q] = acc / spc
    return RateImage(out, res)


def sample_time_tags(scene, spec: AcquisitionSpec, seed: int) -> TimeTagStream:
    """Draw one realization of the scene's Poisson point process.

    Counts per clock tick are Poisson with mean rate * clock_period
    (exact for piecewise-constant scenes whose edges sit on tick
    boundaries).  A tick may yield more than one photon; duplicates are
    emitted as repeated records.
    """
    shot_chunks = []
    tick_chunks = []
    for shot in range(spec.shots_total):
        rng = _rng(seed, shot)
        mu = scene.rate_on_ticks(spec, shot) * spec.clock_period
        counts = rng.poisson(mu)
        nz = np.nonzero(counts)[0]
        if nz.size:
            ticks = np.repeat(nz, counts[nz])
            tick_chunks.append(ticks)
            shot_chunks.append(np.full(ticks.size, shot, dtype=np.int64))
    if shot_chunks:
        shots = np.concatenate(shot_chunks)
        ticks = np.concatenate(tick_chunks)
    else:
        shots = np.empty(0, dtype=np.int64)
        ticks = np.empty(0, dtype=np.int64)
    return TimeTagStream(shots, ticks, spec)


@dataclass(frozen=True)
class ThinSplit:
    """Fit/validation pair produced by a thinning method.

    ``shots_fit`` and ``shots_val`` are the laser-shot exposures backing
    each side; for per-count splits both sides keep the full shot count
    and the thinned rates scale by the split probability instead.
    """

    fit: object
    validation: object
    shots_fit: int
    shots_val: int


def bernoulli_thin(tags: TimeTagStream, p_val: float, seed: int) -> ThinSplit:
    """Send each time tag to validation with probability ``p_val``.

    Both output streams keep the full acquisition spec; the fit stream is
    a Poisson process with rate scaled by (1 - p_val).
    """
    if not 0.0 <= p_val <= 1.0:
        raise DomainError(f"p_val must be in [0, 1], got {p_val}")
    rng = _rng(seed, _STREAM_BERNOULLI)
    to_val = rng.random(tags.n_records) < p_val
    fit = TimeTagStream(tags.shots[~to_val], tags.ticks[~to_val], tags.spec)
    val = TimeTagStream(tags.shots[to_val], tags.ticks[to_val], tags.spec)
    return ThinSplit(fit, val, tags.spec.shots_total, tags.spec.shots_total)


def binomial_split(img: CountImage, p_val: float, seed: int) -> ThinSplit:
    """Split counts per cell: validation ~ Binomial(y, p_val), fit = y - val."""
    if not 0.0 <= p_val <= 1.0:
        raise DomainError(f"p_val must be in [0, 1], got {p_val}")
    rng = _rng(seed, _STREAM_BINOMIAL)
    val_counts = rng.binomial(img.counts.astype(np.int64), p_val)
    fit_counts = img.counts.astype(np.int64) - val_counts
    fit = CountImage(fit_counts, img.resolution, img.shots_per_column)
    val = CountImage(val_counts, img.resolution, img.shots_per_column)
    n = int(img.shots_per_column.sum())
    return ThinSplit(fit, val, n, n)


def manual_thin(tags: TimeTagStream) -> ThinSplit:
    """Alternate-shot split: even shots fit, odd shots validation.

    Shot indices are re-densified within each stream so downstream binning
    sees contiguous shots; the split works for any noise model because no
    Poisson assumption is used.
    """
    spec = tags.spec
    if spec.shots_total < 2:
        raise InsufficientDataError("manual thinning needs at least 2 shots")
    n_fit = (spec.shots_total + 1) // 2
    n_val = spec.shots_total // 2
    fit_spec = AcquisitionSpec(spec.clock_period, spec.shot_period,
                               spec.tof_bins_total, n_fit)
    val_spec = AcquisitionSpec(spec.clock_period, spec.shot_period,
                               spec.tof_bins_total, n_val)
    even = (tags.shots % 2) == 0
    fit = TimeTagStream(tags.shots[even] // 2, tags.ticks[even], fit_spec)
    val = TimeTagStream(tags.shots[~even] // 2, tags.ticks[~even], val_spec)
    return ThinSplit(fit, val, n_fit, n_val)
