"""Run configuration: flat `key = value` files with dotted section paths.

Grammar, line by line:

* blank lines and lines starting with ``#`` are ignored; a ``#`` after
  the value starts a trailing comment;
* everything else must be ``key = value`` with a key from the table
  below; unknown or duplicate keys are hard errors;
* scalars parse as float/int/bool (true/false/yes/no/1/0); vector
  values are comma-separated numbers; gain matrices accept a single
  scalar (isotropic) or a comma triple (diagonal).

Keys: dt, duration, seed, out_dir, erg_enabled, f_z_min,
robot.{m_B, I_B, g, r_min, r_max},
ground.{k_gz, k_dz, mu_s, mu_c, mu_v, v_s},
gait.{period, n_steps, swing_height, step_ahead, v_target, x0, y0, z0,
settle}, erg.{alpha_r, alpha_t, alpha_n, P, constraint_margin}, pd.{K_p, K_d},
pid.{k_p, k_i, k_d}.

`duration` is derived from the gait (settle + n_steps * period) and may
only be given explicitly if it agrees with that value.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .contact import GroundParams
from .dynamics import RobotParams
from .gait import GaitConfig, PidGains
from .governor import ErgGains
from .grf import PdGains

__all__ = ["ConfigError", "SimConfig", "load_config", "make_config", "read_entries"]


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class SimConfig:
    robot: RobotParams
    ground: GroundParams
    gait: GaitConfig
    erg: ErgGains
    pd: PdGains
    pid: PidGains
    dt: float = 1e-3
    duration: float | None = None
    seed: int = 0
    out_dir: str = "runs"
    erg_enabled: bool = True
    f_z_min: float = 1.0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")
        derived = self.gait.settle + self.gait.n_steps * self.gait.period
        if self.duration is None:
            self.duration = derived
        elif abs(self.duration - derived) > 1e-6:
            raise ConfigError(
                f"duration = {self.duration} disagrees with "
                f"settle + n_steps * period = {derived}"
            )
        if self.f_z_min <= 0.0:
            raise ConfigError("f_z_min must be positive")

    @property
    def n_sim_steps(self) -> int:
        return int(round(self.duration / self.dt))


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected integer, got {s}")
    return int(v)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected boolean, got {s!r}")


def _str(s: str) -> str:
    return s


def _vec(s: str, n: int) -> np.ndarray:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated values, got {len(parts)}")
    return np.array([float(p) for p in parts])


def _vec3(s: str) -> np.ndarray:
    return _vec(s, 3)


def _diag3(s: str) -> np.ndarray:
    return np.diag(_vec(s, 3))


def _gain3(s: str) -> np.ndarray:
    """Scalar -> isotropic 3x3; comma triple -> diagonal."""
    if "," in s:
        return _diag3(s)
    return float(s) * np.identity(3)


def _weight6(s: str) -> np.ndarray:
    if "," in s:
        return np.diag(_vec(s, 6))
    return float(s) * np.identity(6)


# key -> (section, field, parser); section None = top level
_KEYS = {
    "dt": (None, "dt", _float),
    "duration": (None, "duration", _float),
    "seed": (None, "seed", _int),
    "out_dir": (None, "out_dir", _str),
    "erg_enabled": (None, "erg_enabled", _bool),
    "f_z_min": (None, "f_z_min", _float),
    "robot.m_B": ("robot", "m_B", _float),
    "robot.I_B": ("robot", "I_B", _diag3),
    "robot.g": ("robot", "g", _vec3),
    "robot.r_min": ("robot", "r_min", _float),
    "robot.r_max": ("robot", "r_max", _float),
    "ground.k_gz": ("ground", "k_gz", _float),
    "ground.k_dz": ("ground", "k_dz", _float),
    "ground.mu_s": ("ground", "mu_s", _float),
    "ground.mu_c": ("ground", "mu_c", _float),
    "ground.mu_v": ("ground", "mu_v", _float),
    "ground.v_s": ("ground", "v_s", _float),
    "gait.period": ("gait", "period", _float),
    "gait.n_steps": ("gait", "n_steps", _int),
    "gait.swing_height": ("gait", "swing_height", _float),
    "gait.step_ahead": ("gait", "step_ahead", _float),
    "gait.v_target": ("gait", "v_target", _float),
    "gait.x0": ("gait", "x0", _float),
    "gait.y0": ("gait", "y0", _float),
    "gait.z0": ("gait", "z0", _float),
    "gait.settle": ("gait", "settle", _float),
    "erg.alpha_r": ("erg", "alpha_r", _float),
    "erg.alpha_t": ("erg", "alpha_t", _float),
    "erg.alpha_n": ("erg", "alpha_n", _float),
    "erg.P": ("erg", "P", _weight6),
    "erg.constraint_margin": ("erg", "constraint_margin", _float),
    "pd.K_p": ("pd", "K_p", _gain3),
    "pd.K_d": ("pd", "K_d", _gain3),
    "pid.k_p": ("pid", "k_p", _float),
    "pid.k_i": ("pid", "k_i", _float),
    "pid.k_d": ("pid", "k_d", _float),
}

_SECTIONS = {
    "robot": RobotParams,
    "ground": GroundParams,
    "gait": GaitConfig,
    "erg": ErgGains,
    "pd": PdGains,
    "pid": PidGains,
}


def read_entries(path) -> dict[str, str]:
    """Parse a config file into a raw key -> value-string map."""
    entries: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def make_config(entries: dict[str, str]) -> SimConfig:
    """Build a validated SimConfig from a raw key map (defaults filled in)."""
    staged: dict[str | None, dict] = {sec: {} for sec in _SECTIONS}
    staged[None] = {}
    for key, value in entries.items():
        try:
            section, field, parser = _KEYS[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None
        try:
            staged[section][field] = parser(value)
        except ValueError as err:
            raise ConfigError(f"bad value for {key!r}: {err}") from None

    dt = staged[None].get("dt", 1e-3)
    if not dt > 0.0:
        raise ConfigError("dt must be positive")
    staged["erg"]["dt"] = dt  # governor runs once per simulation step
    parts = {}
    for section, cls in _SECTIONS.items():
        try:
            parts[section] = cls(**staged[section])
        except (ValueError, TypeError) as err:
            raise ConfigError(f"invalid [{section}] settings: {err}") from None
    try:
        return SimConfig(**parts, **staged[None])
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> SimConfig:
    return make_config(read_entries(path))
