"""Simulator-neutral condition documents for regenerating test sequences.

Document layout (YAML)::

    condition: camera_light
    linear_velocity: 0.75      # m/s
    angular_velocity: 0.8      # rad/s
    light_setup:
      - kind: directional      # point | directional
        attached_to: camera    # world | camera
        intensity: 1.0
        vector: [0.0, 0.0, -1.0]   # position (point) or direction (directional)
    light_schedule:            # dynamic_lights only
      - waypoint: 0
        light_setup: [...]

Mapping to a Habitat-style lighting layout: each ``light_setup`` entry becomes
one light with ``type`` = kind, ``position`` = vector, ``intensity`` = intensity
and ``position_model`` = "camera" or "global" following ``attached_to``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

from .conditions import ConditionKind
from .errors import SchemaError
from .ingest.manifest import read_structured

NOMINAL_LINEAR_VELOCITY = 0.75  # m/s
NOMINAL_ANGULAR_VELOCITY = 0.8  # rad/s
VELOCITY_FACTOR = 2.0


class LightKind(str, Enum):
    POINT = "point"
    DIRECTIONAL = "directional"


class Attachment(str, Enum):
    WORLD = "world"
    CAMERA = "camera"


@dataclass(frozen=True)
class Light:
    kind: LightKind
    attached_to: Attachment
    intensity: float
    vector: tuple
    placeholder: bool = False

    def to_dict(self):
        d = {"kind": self.kind.value, "attached_to": self.attached_to.value,
             "intensity": self.intensity, "vector": list(self.vector)}
        if self.placeholder:
            d["placeholder"] = True
        return d


@dataclass(frozen=True)
class ScheduleEntry:
    waypoint: int
    light_setup: tuple


@dataclass(frozen=True)
class ConditionConfig:
    condition: ConditionKind
    light_setup: tuple = ()
    light_schedule: tuple = ()
    linear_velocity: float = NOMINAL_LINEAR_VELOCITY
    angular_velocity: float = NOMINAL_ANGULAR_VELOCITY

    def __post_init__(self):
        if self.condition is ConditionKind.DYNAMIC_LIGHTS and not self.light_schedule:
            raise SchemaError("dynamic_lights needs a non-empty light_schedule")
        if self.condition is ConditionKind.NOMINAL_LIGHTS and self.light_setup:
            raise SchemaError("nominal_lights must not add light sources")

    def to_dict(self) -> dict:
        doc = {
            "condition": self.condition.value,
            "linear_velocity": self.linear_velocity,
            "angular_velocity": self.angular_velocity,
            "light_setup": [light.to_dict() for light in self.light_setup],
        }
        if self.light_schedule:
            doc["light_schedule"] = [
                {"waypoint": e.waypoint, "light_setup": [light.to_dict() for light in e.light_setup]}
                for e in self.light_schedule]
        return doc

    def warnings(self) -> list:
        out = []
        if any(light.placeholder for light in self.light_setup):
            out.append(f"{self.condition.value}: light_setup still holds placeholder lights; "
                       "fill in the scene's static light positions and intensities")
        return out


def _default_scene_lights():
    # Placeholder pair standing in for the scene's own static light sources.
    return (Light(LightKind.POINT, Attachment.WORLD, 1.0, (0.0, 2.5, 0.0), placeholder=True),
            Light(LightKind.POINT, Attachment.WORLD, 0.6, (3.0, 2.5, -2.0), placeholder=True))


def _dynamic_schedule():
    warm = (Light(LightKind.POINT, Attachment.WORLD, 1.2, (0.0, 2.5, 0.0)),)
    dim = (Light(LightKind.POINT, Attachment.WORLD, 0.3, (0.0, 2.5, 0.0)),)
    side = (Light(LightKind.DIRECTIONAL, Attachment.WORLD, 0.8, (1.0, -1.0, 0.0)),)
    return (ScheduleEntry(0, warm), ScheduleEntry(10, dim), ScheduleEntry(20, side))


def emit_condition_config(kind, base: ConditionConfig | None = None) -> ConditionConfig:
    """Default document for one of the five test conditions.

    ``base`` supplies the nominal velocities and, for baseline, the scene's
    static lights.
    """
    kind = ConditionKind.parse(kind)
    lin = base.linear_velocity if base else NOMINAL_LINEAR_VELOCITY
    ang = base.angular_velocity if base else NOMINAL_ANGULAR_VELOCITY
    if kind is ConditionKind.BASELINE:
        lights = base.light_setup if base and base.light_setup else _default_scene_lights()
        return ConditionConfig(kind, tuple(lights), (), lin, ang)
    if kind is ConditionKind.NOMINAL_LIGHTS:
        return ConditionConfig(kind, (), (), lin, ang)
    if kind is ConditionKind.CAMERA_LIGHT:
        lamp = Light(LightKind.DIRECTIONAL, Attachment.CAMERA, 1.0, (0.0, 0.0, -1.0))
        return ConditionConfig(kind, (lamp,), (), lin, ang)
    if kind is ConditionKind.DYNAMIC_LIGHTS:
        schedule = base.light_schedule if base and base.light_schedule else _dynamic_schedule()
        return ConditionConfig(kind, schedule[0].light_setup, tuple(schedule), lin, ang)
    return ConditionConfig(kind, (), (), lin * VELOCITY_FACTOR, ang * VELOCITY_FACTOR)


def _light_from_dict(d, where):
    try:
        vector = tuple(float(v) for v in d["vector"])
        if len(vector) != 3:
            raise ValueError("vector needs 3 components")
        return Light(LightKind(d["kind"]), Attachment(d["attached_to"]), float(d["intensity"]),
                     vector, bool(d.get("placeholder", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad light: {exc}", field=where) from None


def config_from_dict(doc) -> ConditionConfig:
    if not isinstance(doc, dict):
        raise SchemaError("condition config must be a mapping")
    try:
        kind = ConditionKind.parse(doc["condition"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad condition: {exc}", field="condition") from None
    lights = tuple(_light_from_dict(d, f"light_setup[{i}]")
                   for i, d in enumerate(doc.get("light_setup") or ()))
    schedule = []
    for i, e in enumerate(doc.get("light_schedule") or ()):
        setup = tuple(_light_from_dict(d, f"light_schedule[{i}]")
                      for d in e.get("light_setup") or ())
        schedule.append(ScheduleEntry(int(e["waypoint"]), setup))
    return ConditionConfig(kind, lights, tuple(schedule),
                           float(doc.get("linear_velocity", NOMINAL_LINEAR_VELOCITY)),
                           float(doc.get("angular_velocity", NOMINAL_ANGULAR_VELOCITY)))


def dump_condition_config(cfg: ConditionConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def write_condition_config(path, cfg: ConditionConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_condition_config(cfg), encoding="utf-8")


def load_condition_config(path) -> ConditionConfig:
    return config_from_dict(read_structured(path))
