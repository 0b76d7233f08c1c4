"""Scenario files: YAML with one section per subsystem, plus dotted overrides."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .dynamics import CHANNELS, GAUSSIAN, IMPULSE, UNIFORM, DisturbanceModel, VehicleParams
from .mppi import MPPI, RA_MPPI, MppiParams
from .risk import RiskParams
from .track import Arc, CostWeights, Obstacle, Straight, Track, place_obstacles, stadium


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


@dataclass(frozen=True)
class TrackSpec:
    layout: str = "stadium"
    length: float = 10.9
    short_straight: float = 1.5
    corner_radius: float = 0.3
    half_width: float = 0.3
    # explicit layout: ("straight", length) or ("arc", radius, degrees, "left"|"right")
    segments: tuple = ()
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    obstacle_count: int = 10
    obstacle_radius: float = 0.1
    obstacle_seed: int = 0
    corridor: float = 0.15
    obstacle_spacing: float = 0.6
    # explicit obstacles as (x, y, r); overrides the seeded placement when set
    obstacles: tuple = ()

    def build(self) -> Track:
        if self.layout == "stadium":
            base = stadium(self.length, self.short_straight, self.corner_radius, self.half_width)
        elif self.layout == "segments":
            segs = []
            for item in self.segments:
                if item[0] == "straight":
                    segs.append(Straight(float(item[1])))
                elif item[0] == "arc":
                    segs.append(Arc(float(item[1]), math.radians(float(item[2])), str(item[3])))
                else:
                    raise ConfigError("track.segments", f"unknown segment type {item[0]!r}")
            base = Track(tuple(segs), self.half_width, (), tuple(self.start))
        else:
            raise ConfigError("track.layout", f"unknown layout {self.layout!r}")
        if self.obstacles:
            obs = tuple(Obstacle((float(x), float(y)), float(r)) for x, y, r in self.obstacles)
        elif self.obstacle_count > 0:
            obs = place_obstacles(base, self.obstacle_count, self.obstacle_radius,
                                  self.obstacle_seed, self.corridor, self.obstacle_spacing)
        else:
            obs = ()
        return base.with_obstacles(obs)


@dataclass(frozen=True)
class CostSpec:
    c1: float = 2.0
    c2: float = 1.0
    c3: float = 0.1
    c4: float = 12.0  # offset only; large enough that the clamp never binds
    c5: float = 2.0
    progress_unit: str = "m"

    def weights(self) -> CostWeights:
        return CostWeights(self.c1, self.c2, self.c3, self.c4, self.c5)


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = RA_MPPI
    K: int = 30
    M: int = 256
    lam: float = 0.35
    gamma: float = 0.0
    eta: float = 0.2
    sigma_eps: tuple[float, float] = (1.0, 0.04)
    rho: float = 0.0

    def params(self) -> MppiParams:
        return MppiParams(self.K, self.M, self.lam, self.gamma, self.eta, self.sigma_eps, self.rho)


@dataclass(frozen=True)
class PlantSpec:
    """Plant disturbance in normalized units, mapped to simulator units by ``unit_scale``.

    gaussian: variance ``variance`` per channel; uniform: half-width
    ``half_width``; impulse: jump of ``magnitude`` with ``probability`` per
    step. Simulator-unit values are the normalized ones times ``unit_scale``
    (squared for the variance).
    """

    kind: str = GAUSSIAN
    variance: float = 0.2
    half_width: float = 0.2
    probability: float = 0.02
    magnitude: float = 0.45
    unit_scale: tuple[float, float, float, float] = (0.05, 0.05, 0.005, 0.005)
    mask: tuple[str, ...] = ()

    def model(self) -> DisturbanceModel:
        unit = np.asarray(self.unit_scale, dtype=float)
        mask = tuple(self.mask) or None
        if self.kind == GAUSSIAN:
            return DisturbanceModel(GAUSSIAN, covariance=self.variance * unit**2, mask=mask)
        if self.kind == UNIFORM:
            return DisturbanceModel(UNIFORM, half_width=self.half_width * unit, mask=mask)
        if self.kind == IMPULSE:
            m = DisturbanceModel(IMPULSE, probability=self.probability, mask=mask)
            scales = {float(unit[CHANNELS.index(c)]) for c in m.mask}
            if len(scales) > 1:
                raise ConfigError("plant.unit_scale", "impulse channels need a common unit scale")
            return dataclasses.replace(m, magnitude=self.magnitude * scales.pop())
        raise ConfigError("plant.kind", f"unknown disturbance kind {self.kind!r}")


@dataclass(frozen=True)
class RunSpec:
    laps: int = 20
    seed: int = 0
    initial_state: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    stuck_timeout: float = 30.0

    def __post_init__(self):
        if self.laps < 1:
            raise ValueError("laps must be at least 1")


@dataclass(frozen=True)
class Scenario:
    track: TrackSpec = field(default_factory=TrackSpec)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    costs: CostSpec = field(default_factory=CostSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    risk: RiskParams = field(default_factory=RiskParams)
    plant: PlantSpec = field(default_factory=PlantSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def to_dict(self) -> dict:
        return {f.name: _section_to_dict(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict | None) -> "Scenario":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("<root>", "scenario must be a mapping of sections")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        return cls(**{name: _section_from_dict(name, data.get(name) or {}) for name in SECTIONS})

    def validate(self) -> None:
        """Build every runtime object once so bad values surface as ConfigError."""
        for name, build in (("track", lambda: self.track.build()),
                            ("costs", lambda: self.costs.weights()),
                            ("controller", lambda: self.controller.params()),
                            ("plant", lambda: self.plant.model())):
            try:
                build()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(name, str(exc)) from exc
        if self.controller.kind not in (MPPI, RA_MPPI):
            raise ConfigError("controller.kind", f"unknown controller {self.controller.kind!r}")
        if self.costs.progress_unit not in ("lap", "m"):
            raise ConfigError("costs.progress_unit", "must be 'lap' or 'm'")

    def with_overrides(self, overrides) -> "Scenario":
        data = self.to_dict()
        for item in overrides:
            key, value = parse_override(item)
            section, name = resolve_key(key)
            data[section][name] = value
        return Scenario.from_dict(data)


SECTIONS = {
    "track": TrackSpec,
    "vehicle": VehicleParams,
    "costs": CostSpec,
    "controller": ControllerSpec,
    "risk": RiskParams,
    "plant": PlantSpec,
    "run": RunSpec,
}

# file key -> dataclass field
_RENAMES = {("controller", "lambda"): "lam"}
_FILE_NAMES = {(s, v): k for (s, k), v in _RENAMES.items()}


def _file_key(section: str, name: str) -> str:
    return _FILE_NAMES.get((section, name), name)


def _plain(value):
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _section_to_dict(obj) -> dict:
    section = next(k for k, v in SECTIONS.items() if isinstance(obj, v))
    return {_file_key(section, f.name): _plain(getattr(obj, f.name)) for f in fields(obj)}


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _coerce(key: str, default, value):
    # the field default fixes the expected type
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, (bool, str)):
                raise TypeError
            return float(value)
        if isinstance(default, str) and not isinstance(value, str):
            raise TypeError
        if isinstance(default, tuple) and not isinstance(value, tuple):
            raise TypeError
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(key, f"bad value {value!r}") from None
    return value


def _section_from_dict(section: str, data: dict):
    cls = SECTIONS[section]
    if not isinstance(data, dict):
        raise ConfigError(section, "section must be a mapping")
    names = {_file_key(section, f.name): f for f in fields(cls) if f.init}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
        f = names[key]
        kwargs[f.name] = _coerce(f"{section}.{key}", f.default, _tupled(value))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from exc


def _leaf_index() -> dict[str, list[tuple[str, str]]]:
    index: dict[str, list[tuple[str, str]]] = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            if f.init:
                index.setdefault(_file_key(section, f.name), []).append((section, f.name))
    return index


# bare section names stand for their selector field
_SECTION_ALIASES = {"controller": ("controller", "kind"), "plant": ("plant", "kind")}


def resolve_key(key: str) -> tuple[str, str]:
    """Map ``risk.alpha``, a unique bare key like ``alpha``, or ``controller`` to a field."""
    if "." in key:
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(key, "unknown section")
        for f in fields(SECTIONS[section]):
            if f.init and _file_key(section, f.name) == name:
                return section, name
        raise ConfigError(key, "unknown key")
    if key in _SECTION_ALIASES:
        return _SECTION_ALIASES[key][0], _file_key(*_SECTION_ALIASES[key])
    hits = _leaf_index().get(key, [])
    if len(hits) != 1:
        raise ConfigError(key, "unknown key" if not hits else "ambiguous key, use section.key")
    section, name = hits[0]
    return section, _file_key(section, name)


class _Loader(yaml.SafeLoader):
    pass


# plain "inf" / "1e-3" are valid scenario numbers
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^(?:[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)|[-+]?\.?inf)$"),
    list("-+0123456789.iI"),
)


def parse_override(item: str):
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(item, "override must look like key=value")
    try:
        value = yaml.load(raw, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}") from exc
    return key, value


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file. Read failures propagate as OSError."""
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    sc = Scenario.from_dict(data)
    sc.validate()
    return sc


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False)
