"""Scenario and array configuration shared by every module."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import yaml

ULA = "ULA"
UPA = "UPA"


class InvalidArgument(ValueError):
    """Raised for malformed arguments (bad shapes, sizes, geometries)."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class ArrayGeometry:
    kind: str = ULA
    n_x: int = 1
    n_y: int = 1
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if self.kind not in (ULA, UPA):
            raise InvalidArgument(f"unknown array kind {self.kind!r}")
        if self.n_x < 1 or self.n_y < 1:
            raise InvalidArgument("array dimensions must be positive")
        if self.kind == ULA and self.n_y != 1:
            raise InvalidArgument("a ULA has n_y = 1")

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    @classmethod
    def ula(cls, n: int, spacing: float = 0.5) -> "ArrayGeometry":
        return cls(ULA, n, 1, spacing)

    @classmethod
    def upa(cls, n_x: int, n_y: int, spacing: float = 0.5) -> "ArrayGeometry":
        return cls(UPA, n_x, n_y, spacing)


@dataclass(frozen=True)
class PathLossModel:
    rho_a: float = 61.4
    rho_b: float = 2.0
    sigma_xi: float = 5.8

    def __post_init__(self):
        if self.rho_b <= 0:
            raise InvalidArgument("rho_b must be positive")
        if self.sigma_xi < 0:
            raise InvalidArgument("sigma_xi must be non-negative")


@dataclass(frozen=True)
class PathSpec:
    n_paths: int = 3
    gain_scale_los: float = 1.0
    gain_scale_nlos: float = 0.1

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidArgument("n_paths must be >= 1")

    def scales(self):
        return [self.gain_scale_los] + [self.gain_scale_nlos] * (self.n_paths - 1)


def _square(m: int) -> tuple[int, int]:
    r = int(round(math.sqrt(m)))
    if r * r != m:
        raise InvalidArgument(f"M={m} is not a square; give ris_nx/ris_ny explicitly")
    return r, r


@dataclass(frozen=True)
class SystemConfig:
    """Scenario constants. Powers are held in watts; dBm only at the file boundary."""

    n_t: int = 8
    n_users: int = 2
    ris_geometry: ArrayGeometry = ArrayGeometry.upa(4, 4)
    p_max: float = dbm_to_watts(30.0)
    noise_power: float = dbm_to_watts(-85.0)
    weights: tuple[float, ...] = (0.5, 0.5)
    bs_position: tuple[float, float] = (0.0, 0.0)
    ris_positions: tuple[tuple[float, float], ...] = ((30.0, 25.0), (30.0, -25.0))
    user_region: tuple[float, float, float, float] = (40.0, 50.0, -25.0, 25.0)
    paths_bs_ris: PathSpec = PathSpec()
    paths_ris_user: PathSpec = PathSpec()
    pathloss: PathLossModel = PathLossModel()
    bs_spacing: float = 0.5

    def __post_init__(self):
        if self.n_t < 1 or self.n_users < 1 or self.n_ris < 1:
            raise InvalidArgument("n_t, n_users and RIS count must be positive")
        if self.p_max <= 0 or self.noise_power <= 0:
            raise InvalidArgument("p_max and noise_power must be positive")
        if len(self.weights) != self.n_users:
            raise InvalidArgument("need one weight per user")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise InvalidArgument("weights must be positive and sum to 1")
        if self.ris_geometry.kind != UPA:
            raise InvalidArgument("RIS arrays are UPAs")
        x0, x1, y0, y1 = self.user_region
        if x1 < x0 or y1 < y0:
            raise InvalidArgument("user_region must be (x_min, x_max, y_min, y_max)")

    @property
    def n_ris(self) -> int:
        return len(self.ris_positions)

    @property
    def n_elements(self) -> int:
        return self.ris_geometry.size

    @property
    def bs_geometry(self) -> ArrayGeometry:
        return ArrayGeometry.ula(self.n_t, self.bs_spacing)

    @property
    def p_max_dbm(self) -> float:
        return watts_to_dbm(self.p_max)

    @property
    def noise_dbm(self) -> float:
        return watts_to_dbm(self.noise_power)

    def replace(self, **changes) -> "SystemConfig":
        """Copy with changes; `n_users` changes reset the weights to equal."""
        if "n_users" in changes and "weights" not in changes:
            k = changes["n_users"]
            changes["weights"] = tuple([1.0 / k] * k)
        return dataclasses.replace(self, **changes)

    def with_power_dbm(self, dbm: float) -> "SystemConfig":
        return self.replace(p_max=dbm_to_watts(dbm))

    def with_elements(self, m: int) -> "SystemConfig":
        return self.replace(ris_geometry=ArrayGeometry.upa(*_square(m)))

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_t": self.n_t,
            "n_users": self.n_users,
            "ris_nx": self.ris_geometry.n_x,
            "ris_ny": self.ris_geometry.n_y,
            "ris_spacing": self.ris_geometry.spacing_over_wavelength,
            "bs_spacing": self.bs_spacing,
            "p_max_dbm": self.p_max_dbm,
            "noise_dbm": self.noise_dbm,
            "weights": list(self.weights),
            "bs_position": list(self.bs_position),
            "ris_positions": [list(p) for p in self.ris_positions],
            "user_region": list(self.user_region),
            "paths_bs_ris": dataclasses.asdict(self.paths_bs_ris),
            "paths_ris_user": dataclasses.asdict(self.paths_ris_user),
            "pathloss": dataclasses.asdict(self.pathloss),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemConfig":
        d = dict(d or {})
        base = cls()
        known = set(base.to_dict()) | {"n_elements"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for key in ("n_t", "n_users"):
            if key in d:
                kw[key] = int(d[key])
        geom = base.ris_geometry
        if "n_elements" in d:
            geom = ArrayGeometry.upa(*_square(int(d["n_elements"])))
        if "ris_nx" in d or "ris_ny" in d:
            geom = ArrayGeometry.upa(int(d.get("ris_nx", geom.n_x)), int(d.get("ris_ny", geom.n_y)))
        if "ris_spacing" in d:
            geom = dataclasses.replace(geom, spacing_over_wavelength=float(d["ris_spacing"]))
        kw["ris_geometry"] = geom
        if "bs_spacing" in d:
            kw["bs_spacing"] = float(d["bs_spacing"])
        if "p_max_dbm" in d:
            kw["p_max"] = dbm_to_watts(float(d["p_max_dbm"]))
        if "noise_dbm" in d:
            kw["noise_power"] = dbm_to_watts(float(d["noise_dbm"]))
        if "weights" in d:
            kw["weights"] = tuple(float(w) for w in d["weights"])
        elif "n_users" in d:
            kw["weights"] = tuple([1.0 / kw["n_users"]] * kw["n_users"])
        if "bs_position" in d:
            kw["bs_position"] = tuple(float(v) for v in d["bs_position"])
        if "ris_positions" in d:
            kw["ris_positions"] = tuple(tuple(float(v) for v in p) for p in d["ris_positions"])
        if "user_region" in d:
            kw["user_region"] = tuple(float(v) for v in d["user_region"])
        for key, typ in (("paths_bs_ris", PathSpec), ("paths_ris_user", PathSpec), ("pathloss", PathLossModel)):
            if key in d:
                kw[key] = typ(**d[key])
        return cls(**kw)


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return SystemConfig.from_dict(yaml.safe_load(fh) or {})


def dump_config(cfg: SystemConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
