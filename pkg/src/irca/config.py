"""JSON run configuration shared by the command-line subcommands."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .estimator import IrcaConfig
from .lm import LmConfig
from .model import WaveRegime, WavenumberGrid
from .simulator import DeviceLayout, LayoutError, NoiseModel, build_layout


class ConfigError(ValueError):
    pass


IRCA_KEYS = {"degree", "regime", "initializer", "oversampling", "kernel", "percentile", "pixels",
             "jobs", "fixed_gain", "paper_reflectivity_inversion", "opd_tolerance", "opd_interval",
             "flat_field", "max_iterations"}
TOP_KEYS = {"layout", "grid", "truth", "noise", "power", "irca", "regimes", "out", "seed"}


@dataclass
class RunConfig:
    layout: dict | None = None
    grid: dict | None = None
    truth: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    power: str = "constant"
    irca: dict = field(default_factory=dict)
    regimes: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0

    @classmethod
    def load(cls, path: str | Path | None) -> RunConfig:
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in data.items()})
        bad = set(cfg.irca) - IRCA_KEYS
        if bad:
            raise ConfigError(f"unknown irca keys: {sorted(bad)}")
        return cfg

    # -- builders, each raising ConfigError on invalid values -------------------
    def build_layout(self) -> DeviceLayout:
        if self.layout is None:
            raise ConfigError("configuration has no 'layout' section")
        try:
            return build_layout(self.layout)
        except (LayoutError, TypeError, ValueError) as exc:
            raise ConfigError(f"layout: {exc}") from None

    def build_grid(self) -> WavenumberGrid:
        spec = self.grid
        if spec is None:
            raise ConfigError("configuration has no 'grid' section")
        try:
            if "values" in spec:
                return WavenumberGrid(spec["values"])
            lo, hi = float(spec["min"]), float(spec["max"])
            if "count" in spec:
                return WavenumberGrid.regular(lo, hi, int(spec["count"]))
            if "step" in spec:
                step = float(spec["step"])
                if step <= 0:
                    raise ValueError("grid step must be positive")
                return WavenumberGrid(np.arange(lo, hi + step / 2, step))
            raise ValueError("grid needs 'values', or 'min'/'max' with 'count' or 'step'")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None

    def build_noise(self) -> NoiseModel:
        kind = self.noise.get("kind", "gaussian" if self.noise.get("relative_std") else "none")
        try:
            if kind == "none":
                return NoiseModel.none()
            if kind == "gaussian":
                return NoiseModel.gaussian(float(self.noise.get("relative_std", 0.0)))
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from None
        raise ConfigError(f"noise: unknown kind {kind!r}")

    def truth_regime(self) -> WaveRegime:
        return parse_regime(self.truth.get("regime", "infinite"))

    def build_irca(self) -> IrcaConfig:
        c = self.irca
        try:
            lm = LmConfig(max_iterations=int(c.get("max_iterations", 100)))
            interval = c.get("opd_interval")
            return IrcaConfig(
                degree=int(c.get("degree", 5)),
                regime=parse_regime(c.get("regime", "infinite")),
                initializer=c.get("initializer", "ml"),
                oversampling=int(c.get("oversampling", 8)),
                fixed_gain=bool(c.get("fixed_gain", False)),
                paper_reflectivity=bool(c.get("paper_reflectivity_inversion", False)),
                opd_tolerance=float(c.get("opd_tolerance", 0.1)),
                opd_interval=tuple(interval) if interval is not None else None,
                gain_lm=lm, refine_lm=lm)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"irca: {exc}") from None

    def validate_extraction(self) -> None:
        kernel, pct = self.irca.get("kernel", 11), self.irca.get("percentile", 90)
        if not isinstance(kernel, int) or kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"kernel must be an odd integer >= 1, got {kernel!r}")
        if not 0 < float(pct) <= 100:
            raise ConfigError(f"percentile must lie in (0, 100], got {pct!r}")
        if self.irca.get("pixels", "central") not in ("central", "all"):
            raise ConfigError("pixels must be 'central' or 'all'")
        if self.irca.get("flat_field", "global") not in ("global", "subimage"):
            raise ConfigError("flat_field must be 'global' or 'subimage'")
        jobs = self.irca.get("jobs")
        if jobs is not None and (not isinstance(jobs, int) or jobs < 1):
            raise ConfigError("jobs must be a positive integer")


def parse_regime(text: str) -> WaveRegime:
    try:
        return WaveRegime.parse(str(text))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
