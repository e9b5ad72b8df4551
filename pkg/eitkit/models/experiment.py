from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple
import json
import logging
import os

from eitkit.models.reconstruction import IndefinitePhantom, Pipeline, TestConfig, TestMode
from eitkit.models.region import PixelGrid, RegionSpec
from eitkit.utils.validators import ValidationError, validate_decreasing, validate_target_h

logger = logging.getLogger(__name__)

SECTIONS = ('mesh', 'basis', 'phantom', 'test', 'pixels', 'sweeps', 'dictionary', 'bounds', 'output')


def _region(data: Optional[Dict[str, Any]]) -> RegionSpec:
    return RegionSpec.empty() if data is None else RegionSpec.from_dict(data)


def _optional_region(region: RegionSpec) -> Optional[Dict[str, Any]]:
    return None if region.is_empty else region.to_dict()


@dataclass(frozen=True)
class BoundsSpec:
    """Inputs of a monotonicity-bounds check; see verify_monotonicity_bounds for the cases"""
    case: str = 'finite'
    sigma1: float = 1.0
    sigma2: Optional[float] = None
    c0: RegionSpec = field(default_factory=RegionSpec.empty)
    cinf: RegionSpec = field(default_factory=RegionSpec.empty)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case': self.case,
            'sigma1': self.sigma1,
            'sigma2': self.sigma2,
            'c0': _optional_region(self.c0),
            'cinf': _optional_region(self.cinf),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BoundsSpec':
        return cls(
            case=str(data.get('case', 'finite')),
            sigma1=float(data.get('sigma1', 1.0)),
            sigma2=None if data.get('sigma2') is None else float(data['sigma2']),
            c0=_region(data.get('c0')),
            cinf=_region(data.get('cinf')),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: mesh, boundary basis, phantom, test method and outputs.

    Serialized as JSON with one section per concern (mesh, basis, phantom,
    test, pixels, sweeps, dictionary, bounds, output).
    """
    target_h: float = 0.05
    gamma_arc: Optional[Tuple[float, float]] = None
    basis_kind: str = 'fourier'
    basis_size: int = 8
    background: float = 1.0
    phantom: IndefinitePhantom = field(default_factory=IndefinitePhantom)
    method: Pipeline = Pipeline.LINEARIZED
    test: TestConfig = field(default_factory=TestConfig)
    required: str = 'both'
    pixels: PixelGrid = field(default_factory=lambda: PixelGrid(20, 20))
    eps_sweep: Tuple[float, ...] = ()
    h_sweep: Tuple[float, ...] = ()
    dictionary: Optional[Tuple[RegionSpec, ...]] = None
    bounds: Optional[BoundsSpec] = None
    output_dir: str = 'results'
    name: str = 'experiment'
    write_pgm: bool = True

    def validate(self) -> None:
        """Check cross-field invariants; errors name the offending section.field"""
        is_valid, error = validate_target_h(self.target_h)
        if not is_valid:
            raise ValidationError(f"mesh.target_h: {error}")
        if self.basis_size < 1:
            raise ValidationError(f"basis.size: must be at least 1, got {self.basis_size}")
        if not self.background > 0:
            raise ValidationError(f"phantom.background: must be positive, got {self.background}")

        try:
            self.phantom.check_contrast(self.background, self.background)
        except ValidationError as e:
            raise ValidationError(f"phantom: {e}")

        if self.method == Pipeline.INDEFINITE:
            if self.test.mode != TestMode.INDEFINITE:
                raise ValidationError("test.mode: the indefinite method needs mode 'indefinite'")
        else:
            if self.test.mode == TestMode.INDEFINITE:
                raise ValidationError(f"test.mode: the {self.method.value} method needs 'insulating' or 'conducting'")
            try:
                self.test.resolve_beta(self.background, self.method)
            except ValidationError as e:
                raise ValidationError(f"test.beta: {e}")

        if self.required not in ('both', 'insulating', 'conducting'):
            raise ValidationError(f"test.required: must be 'both', 'insulating' or 'conducting', got '{self.required}'")

        if self.eps_sweep:
            is_valid, error = validate_decreasing('sweeps.eps', self.eps_sweep, 3)
            if not is_valid:
                raise ValidationError(error)
        if self.h_sweep:
            is_valid, error = validate_decreasing('sweeps.h', self.h_sweep, 2)
            if not is_valid:
                raise ValidationError(error)

        if self.dictionary is not None and not self.dictionary:
            raise ValidationError("dictionary.regions: must not be empty (omit the section for the default)")

    def to_dict(self) -> Dict[str, Any]:
        test = self.test.to_dict()
        test.update(method=self.method.value, required=self.required)
        return {
            'mesh': {'target_h': self.target_h, 'gamma_arc': list(self.gamma_arc) if self.gamma_arc else None},
            'basis': {'kind': self.basis_kind, 'size': self.basis_size},
            'phantom': dict(self.phantom.to_dict(), background=self.background),
            'test': test,
            'pixels': self.pixels.to_dict(),
            'sweeps': {'eps': list(self.eps_sweep), 'h': list(self.h_sweep)},
            'dictionary': None if self.dictionary is None else {'regions': [r.to_dict() for r in self.dictionary]},
            'bounds': None if self.bounds is None else self.bounds.to_dict(),
            'output': {'directory': self.output_dir, 'name': self.name, 'pgm': self.write_pgm},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Build and validate a config; unknown sections and malformed fields are rejected"""
        if not isinstance(data, dict):
            raise ValidationError("Experiment config must be a JSON object")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ValidationError(f"Unknown config section(s): {', '.join(unknown)}")

        def section(name):
            value = data.get(name) or {}
            if not isinstance(value, dict):
                raise ValidationError(f"{name}: section must be an object")
            return value

        def parse(name, build):
            try:
                return build(section(name))
            except ValidationError as e:
                raise ValidationError(str(e) if str(e).startswith(name) else f"{name}: {e}")
            except (KeyError, TypeError, ValueError) as e:
                raise ValidationError(f"{name}: invalid value ({e})")

        test = section('test')
        gamma_arc = parse('mesh', lambda s: tuple(float(v) for v in s['gamma_arc']) if s.get('gamma_arc') else None)
        dictionary = None
        if data.get('dictionary') is not None:
            dictionary = parse('dictionary', lambda s: tuple(RegionSpec.from_dict(r) for r in s.get('regions', [])))

        config = cls(
            target_h=parse('mesh', lambda s: float(s.get('target_h', 0.05))),
            gamma_arc=gamma_arc,
            basis_kind=parse('basis', lambda s: str(s.get('kind', 'fourier'))),
            basis_size=parse('basis', lambda s: int(s.get('size', 8))),
            background=parse('phantom', lambda s: float(s.get('background', 1.0))),
            phantom=parse('phantom', IndefinitePhantom.from_dict),
            method=parse('test', lambda s: Pipeline(s.get('method', 'linearized'))),
            test=parse('test', TestConfig.from_dict),
            required=str(test.get('required', 'both')),
            pixels=parse('pixels', lambda s: PixelGrid.from_dict(s) if s else PixelGrid(20, 20)),
            eps_sweep=parse('sweeps', lambda s: tuple(float(v) for v in s.get('eps', []))),
            h_sweep=parse('sweeps', lambda s: tuple(float(v) for v in s.get('h', []))),
            dictionary=dictionary,
            bounds=parse('bounds', BoundsSpec.from_dict) if data.get('bounds') is not None else None,
            output_dir=parse('output', lambda s: str(s.get('directory', 'results'))),
            name=parse('output', lambda s: str(s.get('name', 'experiment'))),
            write_pgm=parse('output', lambda s: bool(s.get('pgm', True))),
        )
        config.validate()
        return config

    @classmethod
    def load(cls, path: str) -> 'ExperimentConfig':
        """Load an experiment file; JSON syntax errors report the line and column"""
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ValidationError(f"{path}: config file not found")
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")

        config = cls.from_dict(data)
        logger.info(f"Loaded experiment '{config.name}' from {path}")
        return config

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w') as f:
            f.write(self.to_json() + "\n")
        logger.info(f"Saved experiment '{self.name}' to {path}")
