"""Flat key=value run configuration.

The config file is plain text: one ``key = value`` per line, ``#`` starts
a comment, keys are dotted names.  See the README for the full key list.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .coarse2fine import EtaGrid
from .core import AcquisitionSpec, Resolution
from .errors import ConfigError
from .forward import PulseKernel
from .simulate import GaussianScene, RectPatch, RectPatchScene, random_patch_scene
from .solver import SolverConfig


def parse_kv_file(path) -> dict[str, str]:
    """Parse a flat key=value file into a string dict."""
    table: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got "
                              f"{raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        table[key] = value.strip()
    return table


@dataclass
class RunConfig:
    """Typed view over a parsed config table; missing keys fall back to
    documented defaults, mandatory ones raise ConfigError on access."""

    table: dict[str, str]
    path: str | None = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls(parse_kv_file(path), str(path))

    # -- typed getters -----------------------------------------------------
    def _get(self, key: str, default=None, required: bool = False):
        if key in self.table:
            return self.table[key]
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_float(self, key, default=None, required=False):
        raw = self._get(key, default, required)
        if raw is None:
            return None
        try:
            return float(raw)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"config key {key!r}: {err}") from err

    def get_int(self, key, default=None, required=False):
        raw = self._get(key, default, required)
        if raw is None:
            return None
        try:
            return int(raw)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"config key {key!r}: {err}") from err

    def get_str(self, key, default=None, required=False):
        raw = self._get(key, default, required)
        return None if raw is None else str(raw)

    def get_bool(self, key, default=False):
        raw = self._get(key, default)
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")

    # -- assembled objects --------------------------------------------------
    def acquisition(self) -> AcquisitionSpec:
        return AcquisitionSpec(
            clock_period=self.get_float("acq.clock_period", required=True),
            shot_period=self.get_float("acq.shot_period", required=True),
            tof_bins_total=self.get_int("acq.tof_bins_total", required=True),
            shots_total=self.get_int("acq.shots_total", required=True),
        )

    def base_resolution(self) -> Resolution:
        return Resolution(
            tof_scale=self.get_int("base.tof_scale", 1),
            shot_scale=self.get_int("base.shot_scale", 1),
            base_tof_width=self.get_float(
                "base.tof_width", self.get_float("acq.clock_period",
                                                 required=True)),
            base_shots_per_col=self.get_int("base.shots_per_col", 1),
        )

    def scene(self):
        kind = self.get_str("scene.kind", required=True)
        if kind == "gaussian":
            return GaussianScene(
                A=self.get_float("scene.A", required=True),
                mu=self.get_float("scene.mu", required=True),
                sigma=self.get_float("scene.sigma", required=True),
                b=self.get_float("scene.b", 0.0),
            )
        if kind != "patches":
            raise ConfigError(f"unknown scene.kind {kind!r} "
                              "(want 'patches' or 'gaussian')")
        spec = self.acquisition()
        background = self.get_float("scene.background_rate", required=True)
        explicit = sorted(k for k in self.table if k.startswith("scene.patch."))
        if explicit:
            patches = []
            for key in explicit:
                parts = [p.strip() for p in self.table[key].split(",")]
                if len(parts) != 5:
                    raise ConfigError(
                        f"config key {key!r}: want tof_start,tof_end,"
                        "shot_start,shot_end,rate")
                patches.append(RectPatch(float(parts[0]), float(parts[1]),
                                         int(parts[2]), int(parts[3]),
                                         float(parts[4])))
            return RectPatchScene(background, tuple(patches),
                                  spec.tof_window, spec.shots_total)
        return random_patch_scene(
            background_rate=background,
            tof_extent=spec.tof_window,
            shot_extent=spec.shots_total,
            seed=self.get_int("scene.seed", self.get_int("seed", 0)),
            n_patches=self.get_int("scene.n_patches", 8),
            rate_factor_range=(self.get_float("scene.rate_factor_min", 0.1),
                               self.get_float("scene.rate_factor_max", 10.0)),
            size_frac_range=(self.get_float("scene.size_frac_min", 0.05),
                             self.get_float("scene.size_frac_max", 0.5)),
            align_tof=self.base_resolution().tof_width,
            align_shot=self.base_resolution().shots_per_col,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            tau_init=self.get_float("solver.tau_init", 1.0),
            tau_bounds=(self.get_float("solver.tau_min", 1e-8),
                        self.get_float("solver.tau_max", 1e8)),
            accept_sigma=self.get_float("solver.accept_sigma", 0.1),
            accept_window=self.get_int("solver.accept_window", 10),
            max_backtracks=self.get_int("solver.max_backtracks", 30),
            max_outer_iters=self.get_int("solver.max_outer_iters", 500),
            outer_tol=self.get_float("solver.outer_tol", 1e-6),
            plateau_iters=self.get_int("solver.plateau_iters", 3),
            rate_floor=self.get_float("solver.rate_floor", 1e-12),
            init_rate=self.get_float("solver.init_rate", 1e3),
            prox_max_iters=self.get_int("solver.prox_max_iters", 50),
            prox_tol=self.get_float("solver.prox_tol", 1e-5),
        )

    def eta_grid(self) -> EtaGrid:
        values = self.get_str("eta.values")
        if values:
            return EtaGrid(values=tuple(float(v) for v in values.split(",")))
        return EtaGrid(
            lo=self.get_float("eta.lo", 1e-3),
            hi=self.get_float("eta.hi", 1e3),
            count=self.get_int("eta.count", 13),
            recenter=self.get_bool("eta.recenter", True),
            recenter_decades=self.get_float("eta.recenter_decades", 2.0),
        )

    def kernel(self) -> PulseKernel:
        return PulseKernel(self.get_float("kernel.width", 0.0))

    def bg_region(self):
        raw = self.get_str("background.region")
        if not raw:
            return None
        parts = raw.split(",")
        if len(parts) != 2:
            raise ConfigError("background.region wants 'lo,hi' in seconds")
        return (float(parts[0]), float(parts[1]))

    def ratio(self) -> tuple[int, int]:
        raw = self.get_str("schedule.ratio", "1:1")
        try:
            a, b = raw.split(":")
            return (int(a), int(b))
        except ValueError as err:
            raise ConfigError(
                f"schedule.ratio wants 'time:range', got {raw!r}") from err

    def ratios(self) -> list[tuple[int, int]]:
        raw = self.get_str("ratios")
        if not raw:
            return [self.ratio()]
        out = []
        for token in raw.split(","):
            a, b = token.strip().split(":")
            out.append((int(a), int(b)))
        return out

    def start_rule(self):
        raw = self.get_str("schedule.start_rule", "nonzero")
        if raw == "nonzero":
            return "nonzero"
        try:
            return int(raw)
        except ValueError as err:
            raise ConfigError(
                f"schedule.start_rule wants 'nonzero' or an integer, got "
                f"{raw!r}") from err

    def scales(self) -> list[int]:
        raw = self.get_str("scales")
        if not raw:
            raise ConfigError("missing required config key 'scales'")
        return [int(s) for s in raw.split(",")]

    def seed(self, override: int | None = None) -> int:
        if override is not None:
            return int(override)
        value = self.get_int("seed")
        if value is None:
            raise ConfigError(
                "a seed is required (config key 'seed' or --seed)")
        return value

    def echo(self) -> dict[str, str]:
        """Config contents for the run summary, minus output paths."""
        return {k: v for k, v in sorted(self.table.items()) if k != "out"}
