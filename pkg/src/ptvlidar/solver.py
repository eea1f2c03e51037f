"""Proximal-gradient solver for the TV-penalized Poisson objective.

Each outer iteration proposes a Barzilai-Borwein step size, takes a
gradient step through the forward model, applies the TV prox, and accepts
the candidate against the worst of the last few accepted objectives minus
a quadratic sufficient-decrease margin.  Rejected steps double the inverse
step size and retry.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .core import CountImage, RateImage
from .errors import DomainError, SolverDivergenceError
from .forward import (
    Background,
    PulseKernel,
    _bg_array,
    _conv_columns,
    _corr_columns,
    composed_nll,
)
from .tv import TvConfig, fgp_prox, tv_norm


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings.

    tau is the inverse step size: larger tau means a smaller gradient
    step.  BB proposals are clamped to tau_bounds; backtracking doubles
    tau up to max_backtracks times per iteration.
    """

    eta: float = 0.0
    tau_init: float = 1.0
    tau_bounds: tuple[float, float] = (1e-8, 1e8)
    accept_sigma: float = 0.1
    accept_window: int = 10
    max_backtracks: int = 30
    max_outer_iters: int = 500
    outer_tol: float = 1e-6
    plateau_iters: int = 3
    rate_floor: float = 1e-12
    init_rate: float = 1e3
    prox_max_iters: int = 50
    prox_tol: float = 1e-5

    def __post_init__(self):
        lo, hi = self.tau_bounds
        if not (0 < lo <= hi):
            raise DomainError("tau_bounds must satisfy 0 < lo <= hi")
        if not (0 < self.accept_sigma < 1):
            raise DomainError("accept_sigma must be in (0, 1)")
        if self.outer_tol <= 0:
            raise DomainError("outer_tol must be > 0")
        if self.eta < 0:
            raise DomainError("eta must be >= 0")

    def with_eta(self, eta: float) -> "SolverConfig":
        return replace(self, eta=eta)

    def tv_config(self) -> TvConfig:
        return TvConfig(eta=self.eta, max_inner_iters=self.prox_max_iters,
                        inner_tol=self.prox_tol, nonneg=True)


@dataclass
class SolveTrace:
    """One row per attempted step (accepted or rejected backtrack)."""

    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    tv: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    stop_reason: str = ""

    def append(self, k, obj, nll, tv, tau, accepted):
        self.iteration.append(int(k))
        self.objective.append(float(obj))
        self.nll.append(float(nll))
        self.tv.append(float(tv))
        self.tau.append(float(tau))
        self.accepted.append(bool(accepted))

    def accepted_objectives(self) -> np.ndarray:
        mask = np.asarray(self.accepted, dtype=bool)
        return np.asarray(self.objective)[mask]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "objective", "nll", "tv", "tau",
                         "accepted"])
        for row in zip(self.iteration, self.objective, self.nll, self.tv,
                       self.tau, self.accepted):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]),
                             repr(row[4]), int(row[5])])
        return buf.getvalue()


def objective(x: RateImage, counts: CountImage,
              kernel: PulseKernel | None = None,
              bg: Background | None = None, eta: float = 0.0) -> float:
    """Penalized objective: forward-model NLL plus eta * TV of x."""
    return composed_nll(x, counts, kernel, bg) + eta * tv_norm(x.rates)


class _Problem:
    """Precomputed pieces of one solve: counts, exposures, kernel weights.

    Iterates stay at or above the rate floor and the pulse weights have a
    positive leading tap, so the detected rate is strictly positive and
    the log terms never need masking.
    """

    def __init__(self, counts: CountImage, kernel, bg, floor: float):
        self.y = counts.counts.astype(np.float64)
        dt = counts.resolution.tof_width
        self.exposure = (counts.shots_per_column.astype(np.float64)
                         * dt)[np.newaxis, :]
        kernel = kernel or PulseKernel.delta()
        w = kernel.weights(dt)
        self.weights = None if w.size == 1 else w
        self.bg = _bg_array(bg, counts.shape[1])[np.newaxis, :]
        self.floor = floor

    def detect(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            return x + self.bg
        return _conv_columns(x, self.weights) + self.bg

    def nll(self, detected: np.ndarray) -> float:
        term1 = float((detected * self.exposure).sum())
        term2 = float((self.y * np.log(detected)).sum())
        return term1 - term2

    def grad(self, detected: np.ndarray) -> np.ndarray:
        g = self.exposure - self.y / detected
        if self.weights is None:
            return g
        return _corr_columns(g, self.weights)


def bb_step(x_prev, x_cur, g_prev, g_cur, tau_init: float,
            bounds: tuple[float, float]) -> float:
    """Barzilai-Borwein inverse step size <dg, dx> / <dx, dx>, clamped.

    Returns tau_init when the iterate difference is degenerate (first
    iteration or a stalled step).
    """
    dx = np.asarray(x_cur, float) - np.asarray(x_prev, float)
    dg = np.asarray(g_cur, float) - np.asarray(g_prev, float)
    denom = float((dx * dx).sum())
    if denom <= 0.0 or not np.isfinite(denom):
        return float(tau_init)
    tau = float((dg * dx).sum()) / denom
    if not np.isfinite(tau):
        return float(tau_init)
    return float(min(max(tau, bounds[0]), bounds[1]))


def spiral_solve(x0: RateImage, counts: CountImage,
                 kernel: PulseKernel | None = None,
                 bg: Background | None = None,
                 cfg: SolverConfig | None = None
                 ) -> tuple[RateImage, SolveTrace]:
    """Minimize the TV-penalized Poisson NLL from x0; returns the
    best-objective iterate and the iteration trace.

    Iterates are kept at or above cfg.rate_floor so log terms stay finite
    in the sparse regime.
    """
    cfg = cfg or SolverConfig()
    tv_cfg = cfg.tv_config()
    res = x0.resolution
    floor = cfg.rate_floor
    if x0.shape != counts.shape:
        raise DomainError(
            f"x0 grid {x0.shape} does not match counts grid {counts.shape}")
    problem = _Problem(counts, kernel, bg, floor)

    def value_of(arr):
        v_nll = problem.nll(problem.detect(arr))
        v_tv = tv_norm(arr)
        return v_nll + cfg.eta * v_tv, v_nll, v_tv

    x = np.maximum(np.asarray(x0.rates, float), floor)
    obj, nll, tv = value_of(x)
    if not np.isfinite(obj):
        raise SolverDivergenceError("objective is non-finite at the start",
                                    trace=SolveTrace())
    g = problem.grad(problem.detect(x))

    trace = SolveTrace()
    trace.append(0, obj, nll, tv, cfg.tau_init, True)
    window = deque([obj], maxlen=cfg.accept_window)
    best_obj, best_x = obj, x.copy()
    x_prev = None
    g_prev = None
    dual = None  # warm-started FGP dual variables
    plateau = 0

    for k in range(1, cfg.max_outer_iters + 1):
        if x_prev is None:
            tau = float(cfg.tau_init)
        else:
            tau = bb_step(x_prev, x, g_prev, g, cfg.tau_init, cfg.tau_bounds)

        accepted = False
        cand = None
        c_obj = c_nll = c_tv = np.inf
        for _ in range(cfg.max_backtracks + 1):
            step = x - g / tau
            prox_out, dual = fgp_prox(step, cfg.eta / tau, tv_cfg,
                                      dual_init=dual, return_dual=True)
            cand = np.maximum(prox_out, floor)
            c_obj, c_nll, c_tv = value_of(cand)
            margin = cfg.accept_sigma * (tau / 2.0) * float(
                ((cand - x) ** 2).sum())
            threshold = max(window) - margin
            ok = np.isfinite(c_obj) and c_obj <= threshold
            trace.append(k, c_obj, c_nll, c_tv, tau, ok)
            if ok:
                accepted = True
                break
            tau *= 2.0
        if not accepted:
            if not np.isfinite(c_obj):
                raise SolverDivergenceError(
                    f"non-finite objective after {cfg.max_backtracks} "
                    "backtracks", trace=trace)
            trace.stop_reason = "backtracking stalled"
            break

        prev_obj = obj
        x_prev, g_prev = x, g
        x = cand
        obj, nll, tv = c_obj, c_nll, c_tv
        g = problem.grad(problem.detect(x))
        window.append(obj)
        if obj < best_obj:
            best_obj, best_x = obj, x.copy()
        if not np.any(x != x_prev):
            trace.stop_reason = "iterate fixed point"
            break
        rel_change = abs(obj - prev_obj) / max(abs(prev_obj), 1e-30)
        # BB iterations plateau and then move again, so require the change
        # to stay below tolerance for a few consecutive accepted steps
        plateau = plateau + 1 if rel_change < cfg.outer_tol else 0
        if plateau >= cfg.plateau_iters:
            trace.stop_reason = "objective change below tolerance"
            break
    else:
        trace.stop_reason = "iteration budget exhausted"

    return RateImage(best_x, res), trace
