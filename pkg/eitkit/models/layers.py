from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple
import math

from eitkit.utils.validators import ValidationError

INSULATING = 0.0
CONDUCTING = math.inf


def _encode(value: float) -> Any:
    if value == INSULATING:
        return 'insulating'
    if value == CONDUCTING:
        return 'conducting'
    return value


def _decode(value: Any) -> float:
    if value == 'insulating':
        return INSULATING
    if value == 'conducting':
        return CONDUCTING
    return float(value)


@dataclass(frozen=True)
class RadialLayers:
    """
    Concentric layers of the unit disk.

    Layer i occupies radii[i-1] < r < radii[i] (radii[-1] is 0) and has
    conductivity values[i]. Only the innermost layer may be extreme:
    0.0 for insulating, math.inf for conducting.
    """
    radii: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'radii', tuple(float(r) for r in self.radii))
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))

        if not self.radii or len(self.radii) != len(self.values):
            raise ValidationError("Radial layers need one value per radius and at least one layer")
        if abs(self.radii[-1] - 1.0) > 1e-14:
            raise ValidationError(f"The outermost radius must be 1, got {self.radii[-1]}")
        if self.radii[0] <= 0 or any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValidationError(f"Radii must be positive and strictly increasing, got {self.radii}")

        for i, value in enumerate(self.values):
            if math.isnan(value) or value < 0:
                raise ValidationError(f"Layer {i} has invalid conductivity {value}")
            if i > 0 and (value == INSULATING or value == CONDUCTING):
                raise ValidationError(f"Only the innermost layer may be extreme, layer {i} is {_encode(value)}")

    @classmethod
    def homogeneous(cls, value: float = 1.0) -> 'RadialLayers':
        return cls((1.0,), (value,))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[float, float]]) -> 'RadialLayers':
        """Build from (outer radius, value) pairs listed from the center outwards"""
        return cls(tuple(r for r, _ in pairs), tuple(v for _, v in pairs))

    @property
    def n_layers(self) -> int:
        return len(self.radii)

    @property
    def inner_kind(self) -> str:
        return {INSULATING: 'insulating', CONDUCTING: 'conducting'}.get(self.values[0], 'finite')

    def with_inner(self, value: float) -> 'RadialLayers':
        return RadialLayers(self.radii, (value,) + self.values[1:])

    def to_dict(self) -> Dict[str, Any]:
        return {'radii': list(self.radii), 'values': [_encode(v) for v in self.values]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RadialLayers':
        try:
            return cls(tuple(data['radii']), tuple(_decode(v) for v in data['values']))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Invalid radial layers {data!r}: {e}")
