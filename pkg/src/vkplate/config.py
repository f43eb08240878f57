"""Experiment configuration: one JSON file with nested sections.

Sections: model (spring constants), domain (rectangle bounds), regime
(thin: layer count grows as eps^-beta; ultrathin: fixed layer count),
resolutions (strictly decreasing eps list), initial (named presets with
amplitudes), forcing (named preset), run controls (T, snapshot cadence,
dt_scale, static tolerance), basis size and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .lattice import Domain


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": {"k_nn": 1.0, "k_nnn": 1.0, "surf_extra": 1.0, "smoothing": False},
    "domain": {"type": "rect", "bounds": [0.0, 1.0, 0.0, 1.0]},
    "regime": {"kind": "ultrathin", "nu": 3},
    "resolutions": [0.125, 0.0625],
    "initial": {"u0": "zero", "u0_amplitude": 0.0, "v0": "zero",
                "v0_amplitude": 0.0, "v1": "zero", "v1_amplitude": 0.0,
                "power": 3},
    "forcing": {"preset": "zero", "amplitude": 0.0, "power": 3,
                "time_profile": "constant"},
    "T": 0.5,
    "snapshot_every": 0.025,
    "dt_scale": 1.0,
    "static_tol": 1e-7,
    "basis_k": 4,
    "basis_margin": 0.1,
    "seed": 1234,
    "out": "out",
}


@dataclass
class ExperimentConfig:
    raw: dict

    def __post_init__(self):
        cfg = {}
        for key, val in DEFAULTS.items():
            if isinstance(val, dict):
                cfg[key] = {**val, **self.raw.get(key, {})}
            else:
                cfg[key] = self.raw.get(key, val)
        unknown = set(self.raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.cfg = cfg
        self._validate()

    def _validate(self):
        res = self.cfg["resolutions"]
        if not res or any(b >= a for a, b in zip(res, res[1:])):
            raise ConfigError("resolutions must be a strictly decreasing eps list")
        if any(e <= 0 for e in res):
            raise ConfigError("resolutions must be positive")
        reg = self.cfg["regime"]
        if reg["kind"] == "ultrathin":
            if int(reg.get("nu", 0)) < 2:
                raise ConfigError("ultrathin regime needs nu >= 2")
        elif reg["kind"] == "thin":
            beta = float(reg.get("beta", 0.0))
            if not (0.0 < beta <= 1.0):
                raise ConfigError("thin regime needs beta in (0, 1]")
            for eps in res:
                if self.nu_for(eps) < 2:
                    raise ConfigError(
                        f"thin regime rule gives nu < 2 at eps = {eps}")
        else:
            raise ConfigError(f"unknown regime kind {reg['kind']!r}")
        if self.cfg["domain"]["type"] != "rect":
            raise ConfigError("config files support rectangular domains")
        if self.cfg["T"] <= 0 or self.cfg["snapshot_every"] <= 0:
            raise ConfigError("T and snapshot_every must be positive")
        if self.cfg["basis_k"] < 1:
            raise ConfigError("basis_k must be >= 1")

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return ExperimentConfig(raw)

    def nu_for(self, eps: float) -> int:
        reg = self.cfg["regime"]
        if reg["kind"] == "ultrathin":
            return int(reg["nu"])
        return max(2, int(round(eps ** (-float(reg["beta"])))))

    def nu_limit(self) -> float:
        """Layer count entering the limit operators (inf for the thin regime)."""
        reg = self.cfg["regime"]
        return float(reg["nu"]) if reg["kind"] == "ultrathin" else math.inf

    def domain(self) -> Domain:
        return Domain.rect(*self.cfg["domain"]["bounds"])

    def bounds(self) -> tuple:
        return tuple(self.cfg["domain"]["bounds"])

    def canonical_dict(self) -> dict:
        return self.cfg
