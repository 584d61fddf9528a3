"""Scenario configuration: nested dataclasses addressed by dotted paths.

Config files are plain text, one ``dotted.key = value`` per line, ``#``
starts a comment.  Values are coerced to the type of the field they set.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass
from pathlib import Path

from .protocols import SecurityParams


class ConfigError(ValueError):
    """Unknown key or bad value in a scenario configuration."""


@dataclass(frozen=True)
class TelescopeConfig:
    diameter: float
    obstruction: float = 0.0
    beam_fwhm: float | None = None      # transmitter only; None = source default

    def __post_init__(self):
        if self.diameter <= 0:
            raise ConfigError("telescope diameter must be > 0")
        if not 0 <= self.obstruction < 1:
            raise ConfigError("obstruction must be in [0, 1)")


@dataclass(frozen=True)
class SourceConfig:
    kind: str = "wcp"                   # wcp | entangled
    rate: float | None = None           # Hz; None = 300 MHz WCP, 100 MHz entangled
    mu: float = 0.5
    nu: float = 0.1
    signal_fraction: float = 0.9
    epsilon: float = 0.22
    alice_efficiency: float | None = None   # None = detector curve at the wavelength
    visibility: float = 0.98            # intrinsic polarisation contrast

    def __post_init__(self):
        if self.kind not in ("wcp", "entangled"):
            raise ConfigError("source.kind must be 'wcp' or 'entangled'")
        if self.rate is not None and self.rate <= 0:
            raise ConfigError("source rate must be > 0")
        if not self.mu > self.nu > 0:
            raise ConfigError("need source.mu > source.nu > 0")

    @property
    def repetition_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        return 300e6 if self.kind == "wcp" else 100e6


@dataclass(frozen=True)
class DetectorConfig:
    dark_rate: float = 20.0
    window: float = 0.5e-9
    efficiency: float | None = None     # None = bundled APD curve at the wavelength

    def __post_init__(self):
        if self.dark_rate < 0 or self.window <= 0:
            raise ConfigError("dark_rate must be >= 0 and window > 0")
        if self.efficiency is not None and not 0 < self.efficiency <= 1:
            raise ConfigError("detector efficiency must be in (0, 1]")


@dataclass(frozen=True)
class BackgroundConfig:
    h_nat: float = 1.5e-7
    h_art: float = 2.5e-7
    fov: float = 50e-6
    filter_bandwidth: float = 1.0
    moon_phase: float = 0.5
    moon_elevation_deg: float = 45.0
    earth_albedo: float = 0.3


@dataclass(frozen=True)
class TeleportConfig:
    epsilon: float | None = None        # None = 0.41 downlink, 0.55 uplink
    alpha: float | None = None          # None = 0.07 downlink, 0.14 uplink
    cutoff: int = 3

    def resolved(self, direction: str):
        eps, alpha = (0.41, 0.07) if direction == "downlink" else (0.55, 0.14)
        return (self.epsilon if self.epsilon is not None else eps,
                self.alpha if self.alpha is not None else alpha)


@dataclass(frozen=True)
class GridConfig:
    loss_step_db: float = 0.5
    background_steps: int = 10
    spotcheck: bool = False
    spotcheck_fraction: float = 0.01
    spotcheck_tolerance: float = 0.01


@dataclass(frozen=True)
class ScenarioConfig:
    experiment: str = "qkd"             # qkd | bell | teleport
    direction: str = "downlink"
    wavelength: float = 670.0
    tx: TelescopeConfig = TelescopeConfig(0.10)
    rx: TelescopeConfig = TelescopeConfig(0.50)
    pointing_sigma: float = 2e-6
    altitude: float = 600e3
    year: int = 2026
    days: float = 365.0
    site_lat: float = 45.30
    site_lon: float = -75.90
    source: SourceConfig = SourceConfig()
    detector: DetectorConfig = DetectorConfig()
    background: BackgroundConfig = BackgroundConfig()
    teleport: TeleportConfig = TeleportConfig()
    security: SecurityParams = SecurityParams()
    grid: GridConfig = GridConfig()
    cloud_fraction: float = 0.5
    data_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in ("qkd", "bell", "teleport"):
            raise ConfigError("experiment must be 'qkd', 'bell' or 'teleport'")
        if self.direction not in ("downlink", "uplink"):
            raise ConfigError("direction must be 'downlink' or 'uplink'")
        if not 0 <= self.cloud_fraction <= 1:
            raise ConfigError("cloud_fraction must be in [0, 1]")
        if self.pointing_sigma < 0:
            raise ConfigError("pointing_sigma must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def site(self):
        return (self.site_lat, self.site_lon)


def _coerce(text: str, tp):
    hints = typing.get_args(tp) or (tp,)
    s = text.strip()
    if type(None) in hints and s.lower() in ("none", "null", ""):
        return None
    for h in hints:
        if h is type(None):
            continue
        if h is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            continue
        try:
            if h is int:
                return int(s)
            if h is float:
                v = float(s)
                if not math.isfinite(v):
                    raise ValueError
                return v
            if h is str:
                return s
        except ValueError:
            continue
    raise ConfigError(f"cannot interpret {text!r} as {tp}")


def _field_types(cls):
    return typing.get_type_hints(cls)


def set_path(cfg, path: str, value):
    """Return a copy of ``cfg`` with the dotted ``path`` set to ``value``.

    String values are coerced to the target field's type.
    """
    head, _, rest = path.partition(".")
    if not dataclasses.is_dataclass(cfg):
        raise ConfigError(f"cannot descend into {path!r}")
    names = {f.name for f in dataclasses.fields(cfg)}
    if head not in names:
        raise ConfigError(f"unknown config key {head!r}; expected one of {sorted(names)}")
    if rest:
        new = set_path(getattr(cfg, head), rest, value)
    else:
        tp = _field_types(type(cfg))[head]
        if dataclasses.is_dataclass(getattr(cfg, head)):
            raise ConfigError(f"{path!r} is a section, not a value")
        new = _coerce(value, tp) if isinstance(value, str) else value
    try:
        return dataclasses.replace(cfg, **{head: new})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def get_path(cfg, path: str):
    obj = cfg
    for part in path.split("."):
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, part):
            raise ConfigError(f"unknown config key {path!r}")
        obj = getattr(obj, part)
    return obj


def parse_overrides(lines, base: ScenarioConfig | None = None) -> ScenarioConfig:
    cfg = base or ScenarioConfig()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        cfg = set_path(cfg, key.strip(), val.strip())
    return cfg


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    return parse_overrides(Path(path).read_text().splitlines(), base)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg, prefix: str = "") -> list[str]:
    """Flatten to ``key = value`` lines that ``parse_overrides`` reads back."""
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out += dump_config(v, key + ".")
        else:
            out.append(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
    return out

