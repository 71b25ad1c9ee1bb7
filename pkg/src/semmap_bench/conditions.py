from enum import Enum


class ConditionKind(str, Enum):
    """Test-sequence variants: four lighting setups plus doubled velocity."""

    BASELINE = "baseline"
    NOMINAL_LIGHTS = "nominal_lights"
    CAMERA_LIGHT = "camera_light"
    DYNAMIC_LIGHTS = "dynamic_lights"
    VELOCITY = "velocity"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "nominallights": cls.NOMINAL_LIGHTS,
            "cameralight": cls.CAMERA_LIGHT,
            "dynamiclights": cls.DYNAMIC_LIGHTS,
            "dynamic_lighting": cls.DYNAMIC_LIGHTS,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def title(self):
        return {
            "baseline": "Baseline",
            "nominal_lights": "Nominal Lights",
            "camera_light": "Camera Light",
            "dynamic_lights": "Dynamic Lights",
            "velocity": "Velocity",
        }[self.value]


# Column order used by the rendered tables.
CONDITION_ORDER = (
    ConditionKind.BASELINE,
    ConditionKind.CAMERA_LIGHT,
    ConditionKind.DYNAMIC_LIGHTS,
    ConditionKind.NOMINAL_LIGHTS,
    ConditionKind.VELOCITY,
)
