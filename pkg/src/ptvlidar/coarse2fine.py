"""Coarse-to-fine driver: solve at successively finer resolutions with warm
starts, selecting the TV penalty at each step by holdout validation.

The raw tags are split by alternating laser shots into fit and validation
halves.  Fit counts are re-binned from the tags at every resolution step;
each step's candidate solutions are scored by upsampling to the finest
(base) resolution, applying the forward model, and evaluating the Poisson
NLL against validation counts binned at that base resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CountImage,
    RateImage,
    Resolution,
    TimeTagStream,
    bin_time_tags,
    downsample_counts,
    standard_estimate,
    upsample_rates,
)
from .errors import ConfigError, DimensionError, PtvError
from .forward import (
    Background,
    PulseKernel,
    apply_forward,
    estimate_background,
)
from .likelihood import discrete_nll
from .simulate import manual_thin
from .solver import SolverConfig, SolveTrace, spiral_solve


@dataclass(frozen=True)
class CfSchedule:
    """Ordered resolution steps as (tof_scale, shot_scale) multipliers of
    ``base``.  ``steps`` halves both axes; ``time_only_tail`` holds the
    remaining single-axis refinement once the other axis reaches scale 1.
    """

    base: Resolution
    steps: tuple[tuple[int, int], ...]
    time_only_tail: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        allsteps = self.all_steps
        if not allsteps:
            raise ConfigError("schedule has no steps")
        if allsteps[-1] != (1, 1):
            raise ConfigError(f"schedule must end at (1, 1), got {allsteps[-1]}")
        for (t0, s0), (t1, s1) in zip(allsteps, allsteps[1:]):
            if t0 % t1 or s0 % s1:
                raise ConfigError(
                    f"step ({t1},{s1}) does not divide its predecessor "
                    f"({t0},{s0})")
            if t1 > t0 or s1 > s0 or (t1, s1) == (t0, s0):
                raise ConfigError("schedule steps must strictly refine")

    @property
    def all_steps(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.steps) + tuple(self.time_only_tail)


def make_schedule(base: Resolution, ratio: tuple[int, int] = (1, 1),
                  start_rule="nonzero",
                  fit_counts: CountImage | None = None,
                  refine_factor: int = 2) -> CfSchedule:
    """Build a power-of-``refine_factor`` schedule for a time:range ratio.

    ``ratio`` is (time multiplier, range multiplier): the shot axis starts
    ``ratio[0] * m`` coarser than base and the time-of-flight axis
    ``ratio[1] * m`` coarser, where the start multiplier m is either the
    integer ``start_rule`` or, with ``start_rule="nonzero"``, the smallest
    power of ``refine_factor`` whose binning leaves no empty fit bin
    (``fit_counts`` at base resolution is required for that rule).
    Each subsequent step divides every axis still above 1 by
    ``refine_factor`` until both reach base scale.
    """
    a_time, b_range = int(ratio[0]), int(ratio[1])
    if a_time < 1 or b_range < 1:
        raise ConfigError("ratio components must be >= 1")
    if refine_factor < 2:
        raise ConfigError("refine_factor must be >= 2")

    shape = fit_counts.shape if fit_counts is not None else None

    def divides_grid(tof_scale, shot_scale):
        if shape is None:
            return True
        return shape[0] % tof_scale == 0 and shape[1] % shot_scale == 0

    if start_rule == "nonzero":
        if fit_counts is None:
            raise ConfigError(
                "the all-bins-nonzero start rule needs fit counts at base "
                "resolution")
        m = 1
        chosen = None
        while divides_grid(b_range * m, a_time * m) \
                and b_range * m <= shape[0] and a_time * m <= shape[1]:
            coarse = downsample_counts(fit_counts, b_range * m, a_time * m)
            if coarse.counts.min() > 0:
                chosen = m
                break
            m *= refine_factor
        if chosen is None:
            raise ConfigError(
                "no start resolution has all fit bins nonzero; use a fixed "
                "start rule or coarser ratio")
        m = chosen
    else:
        m = int(start_rule)
        if m < 1:
            raise ConfigError("fixed start multiplier must be >= 1")

    tof_scale, shot_scale = b_range * m, a_time * m
    if not divides_grid(tof_scale, shot_scale):
        raise ConfigError(
            f"start scales ({tof_scale},{shot_scale}) do not divide the "
            f"base grid {shape}")
    steps = [(tof_scale, shot_scale)]
    while (tof_scale, shot_scale) != (1, 1):
        if tof_scale > 1:
            tof_scale = max(tof_scale // refine_factor, 1)
        if shot_scale > 1:
            shot_scale = max(shot_scale // refine_factor, 1)
        steps.append((tof_scale, shot_scale))
    split_at = next(i for i, (t, s) in enumerate(steps) if min(t, s) == 1)
    return CfSchedule(base, tuple(steps[: split_at + 1]),
                      tuple(steps[split_at + 1:]))


@dataclass(frozen=True)
class EtaGrid:
    """Log-spaced TV-penalty candidates, optionally re-centered on the
    previous step's winner after the first step."""

    lo: float = 1e-3
    hi: float = 1e3
    count: int = 13
    recenter: bool = True
    recenter_decades: float = 2.0
    values: tuple[float, ...] | None = None

    def values_for_step(self, step_index: int, prev_eta: float | None):
        if self.values is not None:
            return [float(v) for v in self.values]
        if step_index > 0 and self.recenter and prev_eta and prev_eta > 0:
            lo = math.log10(prev_eta) - self.recenter_decades
            hi = math.log10(prev_eta) + self.recenter_decades
            return list(np.logspace(lo, hi, self.count))
        return list(np.logspace(math.log10(self.lo), math.log10(self.hi),
                                self.count))


@dataclass(frozen=True)
class EtaSelection:
    eta: float
    solution: RateImage
    val_nll: float
    candidates: tuple[tuple[float, float], ...]  # (eta, validation NLL)


def validation_nll(solution: RateImage, val_counts: CountImage,
                   kernel: PulseKernel | None = None,
                   bg: Background | None = None) -> float:
    """NLL of a candidate on held-out counts at the validation resolution.

    The candidate is upsampled to the validation grid and passed through
    the forward model first.
    """
    sres, vres = solution.resolution, val_counts.resolution
    if sres.tof_scale % vres.tof_scale or sres.shot_scale % vres.shot_scale:
        raise DimensionError(
            f"candidate scales ({sres.tof_scale},{sres.shot_scale}) do not "
            f"refine to validation scales ({vres.tof_scale},{vres.shot_scale})")
    k_t = sres.tof_scale // vres.tof_scale
    k_s = sres.shot_scale // vres.shot_scale
    up = upsample_rates(solution, k_t, k_s)
    detected = apply_forward(up, kernel, bg)
    return discrete_nll(detected, val_counts)


def select_eta(candidates, val_counts: CountImage,
               kernel: PulseKernel | None = None,
               bg: Background | None = None) -> EtaSelection:
    """Pick the candidate minimizing validation NLL; ties go to the larger
    penalty (the simpler image)."""
    if not candidates:
        raise ConfigError("select_eta needs at least one candidate")
    scored = [(validation_nll(img, val_counts, kernel, bg), float(eta), img)
              for eta, img in candidates]
    best_nll, best_eta, best_img = scored[0]
    for nll, eta, img in scored[1:]:
        if nll < best_nll or (nll == best_nll and eta > best_eta):
            best_nll, best_eta, best_img = nll, eta, img
    return EtaSelection(best_eta, best_img, best_nll,
                        tuple((eta, nll) for nll, eta, _ in scored))


@dataclass(frozen=True)
class CfStepResult:
    tof_scale: int
    shot_scale: int
    eta: float
    val_nll: float
    solution: RateImage
    candidates: tuple[tuple[float, float], ...]
    trace: SolveTrace


@dataclass(frozen=True)
class CfResult:
    steps: tuple[CfStepResult, ...]
    final: RateImage | None
    schedule: CfSchedule
    background: Background | None
    shots_fit: int
    shots_val: int
    aborted: str | None = None

    @property
    def final_val_nll(self) -> float:
        if not self.steps:
            return math.nan
        return self.steps[-1].val_nll


def half_columns(res: Resolution) -> Resolution:
    """Resolution describing the same wall-clock columns fed by half the
    shots (after alternate-shot thinning)."""
    if res.base_shots_per_col % 2 == 0:
        return Resolution(res.tof_scale, res.shot_scale,
                          res.base_tof_width, res.base_shots_per_col // 2)
    if res.shot_scale % 2 == 0:
        return Resolution(res.tof_scale, res.shot_scale // 2,
                          res.base_tof_width, res.base_shots_per_col)
    raise ConfigError(
        "alternate-shot thinning needs an even number of shots per column")


def run_cf(tags: TimeTagStream, schedule: CfSchedule,
           kernel: PulseKernel | None = None,
           bg_region: tuple[float, float] | None = None,
           eta_grid: EtaGrid | None = None,
           cfg: SolverConfig | None = None) -> CfResult:
    """Run the coarse-to-fine pipeline on a time-tag stream.

    Thins by alternate shots, estimates the background from the fit half
    when a signal-free region is given, then for each schedule step bins
    the fit tags, warm-starts from the previous solution (a constant
    ``cfg.init_rate`` at the first step), solves once per TV penalty in
    the grid, and carries forward the candidate with the lowest
    validation NLL.  A step that fails a precondition aborts the run and
    returns the completed steps with ``aborted`` set.
    """
    cfg = cfg or SolverConfig()
    eta_grid = eta_grid or EtaGrid()
    half_base = half_columns(schedule.base)

    split = manual_thin(tags)
    val_counts = bin_time_tags(split.validation, half_base)

    bg = None
    if bg_region is not None:
        bg = estimate_background(split.fit, bg_region,
                                 shots_per_col=half_base.shots_per_col)

    prev_sol = None
    prev_scales = None
    prev_eta = None
    results = []
    aborted = None
    for idx, (k_tof, k_shot) in enumerate(schedule.all_steps):
        try:
            step_res = half_base.scaled(k_tof, k_shot)
            fit_counts = bin_time_tags(split.fit, step_res)
            if prev_sol is None:
                x0 = RateImage.constant(cfg.init_rate, fit_counts.shape,
                                        step_res)
            else:
                x0 = upsample_rates(prev_sol, prev_scales[0] // k_tof,
                                    prev_scales[1] // k_shot)
                if x0.shape != fit_counts.shape:
                    raise DimensionError(
                        f"warm start shape {x0.shape} does not match step "
                        f"grid {fit_counts.shape}")
            step_bg = bg.at_shot_scale(k_shot) if bg is not None else None
            solved = []
            for eta in eta_grid.values_for_step(idx, prev_eta):
                sol, trace = spiral_solve(x0, fit_counts, kernel, step_bg,
                                          cfg.with_eta(eta))
                solved.append((eta, sol, trace))
            chosen = select_eta([(eta, sol) for eta, sol, _ in solved],
                                val_counts, kernel, bg)
            trace = next(t for eta, _, t in solved if eta == chosen.eta)
        except PtvError as err:
            aborted = f"step {idx} at scales ({k_tof},{k_shot}): {err}"
            break
        results.append(CfStepResult(k_tof, k_shot, chosen.eta, chosen.val_nll,
                                    chosen.solution, chosen.candidates, trace))
        prev_sol, prev_scales, prev_eta = chosen.solution, (k_tof, k_shot), \
            chosen.eta
    return CfResult(tuple(results), prev_sol, schedule, bg,
                    shots_fit=split.shots_fit, shots_val=split.shots_val,
                    aborted=aborted)


def adjusted_nll(values) -> np.ndarray:
    """Shift values so the minimum sits at 1 (log-axis friendly)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ConfigError("adjusted_nll needs at least one value")
    return v - v.min() + 1.0


def rmse(est: RateImage, truth: RateImage) -> float:
    """Root of the mean squared rate difference on a shared grid."""
    if est.shape != truth.shape:
        raise DimensionError(
            f"grids differ: {est.shape} vs {truth.shape}")
    diff = est.rates - truth.rates
    return float(np.sqrt((diff * diff).mean()))


@dataclass(frozen=True)
class HistSweepRow:
    scale: int
    val_nll: float
    rmse: float | None


def hist_sweep(tags: TimeTagStream, scales, base: Resolution,
               truth: RateImage | None = None,
               rate_floor: float | None = None) -> list[HistSweepRow]:
    """Histogram-estimator baseline swept over bin scales.

    For each scale the fit counts are binned at (scale x scale), converted
    by the standard estimator, upsampled to base resolution, and scored
    against validation counts; RMSE against ``truth`` is included when
    available.  Empty fit bins would make the validation NLL infinite, so
    estimates are floored: by default at half a count over the scale's
    exposure (a continuity correction), or at ``rate_floor`` when given.
    """
    half_base = half_columns(base)
    split = manual_thin(tags)
    val_counts = bin_time_tags(split.validation, half_base)
    rows = []
    for scale in scales:
        k = int(scale)
        if k < 1:
            raise ConfigError(f"scale must be >= 1, got {scale}")
        fit_counts = bin_time_tags(split.fit, half_base.scaled(k, k))
        est = standard_estimate(fit_counts)
        up = upsample_rates(est, k, k)
        if rate_floor is None:
            exposure = (float(fit_counts.shots_per_column.min())
                        * fit_counts.resolution.tof_width)
            floor = 0.5 / exposure
        else:
            floor = rate_floor
        floored = RateImage(np.maximum(up.rates, floor), up.resolution)
        nll = discrete_nll(floored, val_counts)
        err = rmse(up, truth) if truth is not None else None
        rows.append(HistSweepRow(k, nll, err))
    return rows


@dataclass(frozen=True)
class TrajectoryRow:
    ratio: tuple[int, int]
    result: CfResult

    @property
    def final_val_nll(self) -> float:
        return self.result.final_val_nll


@dataclass(frozen=True)
class TrajectoryComparison:
    rows: tuple[TrajectoryRow, ...]
    best_index: int

    @property
    def best(self) -> TrajectoryRow:
        return self.rows[self.best_index]


def compare_trajectories(tags: TimeTagStream, ratios, base: Resolution,
                         kernel: PulseKernel | None = None,
                         bg_region: tuple[float, float] | None = None,
                         eta_grid: EtaGrid | None = None,
                         cfg: SolverConfig | None = None,
                         start_rule="nonzero") -> TrajectoryComparison:
    """Run the coarse-to-fine pipeline once per time:range ratio and flag
    the one with the lowest final validation NLL."""
    if not ratios:
        raise ConfigError("compare_trajectories needs at least one ratio")
    half_base = half_columns(base)
    fit_counts_base = None
    if start_rule == "nonzero":
        split = manual_thin(tags)
        fit_counts_base = bin_time_tags(split.fit, half_base)
    rows = []
    for ratio in ratios:
        schedule = make_schedule(base, tuple(ratio), start_rule,
                                 fit_counts_base)
        result = run_cf(tags, schedule, kernel, bg_region, eta_grid, cfg)
        rows.append(TrajectoryRow(tuple(ratio), result))
    finals = [r.final_val_nll for r in rows]
    best = int(np.nanargmin(finals))
    return TrajectoryComparison(tuple(rows), best)
