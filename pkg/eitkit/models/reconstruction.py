from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Tuple
import io
import json

import numpy as np

from eitkit.models.region import PixelGrid, RegionSpec
from eitkit.utils.validators import ValidationError


class TestMode(str, Enum):
    __test__ = False

    INSULATING = 'insulating'
    CONDUCTING = 'conducting'
    INDEFINITE = 'indefinite'


class Pipeline(str, Enum):
    LINEARIZED = 'linearized'
    NONLINEAR = 'nonlinear'
    INDEFINITE = 'indefinite'


@dataclass(frozen=True)
class TestConfig:
    """
    Parameters of a semidefiniteness test.

    `beta` defaults to half the infimum of the background when left unset;
    `tau` defaults to the tolerance derived from the background map plus
    `allowance`.
    """
    __test__ = False

    mode: TestMode = TestMode.INSULATING
    beta: Optional[float] = None
    tau: Optional[float] = None
    allowance: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'mode', TestMode(self.mode))
        if self.beta is not None and not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if self.tau is not None and self.tau < 0:
            raise ValidationError(f"tau must be nonnegative, got {self.tau}")
        if self.allowance is not None and self.allowance < 0:
            raise ValidationError(f"allowance must be nonnegative, got {self.allowance}")

    def resolve_beta(self, inf_gamma0: float, pipeline: Pipeline) -> float:
        """Return beta, checking it against the range the pipeline allows"""
        beta = 0.5 * inf_gamma0 if self.beta is None else self.beta
        pipeline = Pipeline(pipeline)

        if self.mode == TestMode.INSULATING and pipeline == Pipeline.NONLINEAR and not beta < inf_gamma0:
            raise ValidationError(
                f"Nonlinear insulating test needs 0 < beta < inf(gamma0) = {inf_gamma0:g}, got beta = {beta:g}")
        if pipeline == Pipeline.LINEARIZED and not beta <= inf_gamma0:
            raise ValidationError(
                f"Linearized test needs 0 < beta <= inf(gamma0) = {inf_gamma0:g}, got beta = {beta:g}")
        return beta

    def to_dict(self) -> Dict[str, Any]:
        return {'mode': self.mode.value, 'beta': self.beta, 'tau': self.tau, 'allowance': self.allowance}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TestConfig':
        try:
            return cls(
                mode=TestMode(data.get('mode', 'insulating')),
                beta=None if data.get('beta') is None else float(data['beta']),
                tau=None if data.get('tau') is None else float(data['tau']),
                allowance=None if data.get('allowance') is None else float(data['allowance']),
            )
        except ValueError as e:
            raise ValidationError(f"Invalid test configuration: {e}")


@dataclass(frozen=True)
class TestOutcome:
    """Result of one Loewner comparison; unpacks as (passed, min_eig)"""
    __test__ = False

    passed: bool
    min_eig: float
    tau: float = 0.0

    @property
    def marginal(self) -> bool:
        return self.passed and abs(self.min_eig) < self.tau

    def __iter__(self) -> Iterator[Any]:
        return iter((self.passed, self.min_eig))


@dataclass(frozen=True)
class IndefiniteOutcome:
    """
    Result of the two-sided test Λ₀(C) ⪰ Λ ⪰ Λ∞(C); unpacks as
    (passed, (min_eig_insulating, min_eig_conducting)).

    `required` is 'both', 'insulating' or 'conducting' and says which of the
    inequalities decided `passed`.
    """
    insulating: TestOutcome
    conducting: TestOutcome
    required: str = 'both'

    @property
    def passed(self) -> bool:
        if self.required == 'insulating':
            return self.insulating.passed
        if self.required == 'conducting':
            return self.conducting.passed
        return self.insulating.passed and self.conducting.passed

    @property
    def min_eigs(self) -> Tuple[float, float]:
        return (self.insulating.min_eig, self.conducting.min_eig)

    @property
    def marginal(self) -> bool:
        return self.passed and (self.insulating.marginal or self.conducting.marginal)

    def witness(self) -> float:
        """Smallest eigenvalue among the inequalities that were required"""
        if self.required == 'insulating':
            return self.insulating.min_eig
        if self.required == 'conducting':
            return self.conducting.min_eig
        return min(self.min_eigs)

    def __iter__(self) -> Iterator[Any]:
        return iter((self.passed, self.min_eigs))


PHANTOM_REGION_IDS = {'d0': 1, 'dinf': 2, 'dminus': 3, 'dplus': 4}


@dataclass(frozen=True)
class IndefinitePhantom:
    """Inclusion D split into insulating, conducting and finite parts"""
    d0: RegionSpec = field(default_factory=RegionSpec.empty)
    dinf: RegionSpec = field(default_factory=RegionSpec.empty)
    dminus: RegionSpec = field(default_factory=RegionSpec.empty)
    dplus: RegionSpec = field(default_factory=RegionSpec.empty)
    gamma_minus: Optional[float] = None
    gamma_plus: Optional[float] = None

    def __post_init__(self):
        if not self.dminus.is_empty and self.gamma_minus is None:
            raise ValidationError("D_F- is nonempty but gamma_minus is not set")
        if not self.dplus.is_empty and self.gamma_plus is None:
            raise ValidationError("D_F+ is nonempty but gamma_plus is not set")

    def tagged_regions(self) -> List[Tuple[int, RegionSpec]]:
        return [(PHANTOM_REGION_IDS[name], getattr(self, name))
                for name in ('d0', 'dinf', 'dminus', 'dplus') if not getattr(self, name).is_empty]

    def support(self) -> RegionSpec:
        return RegionSpec.union(self.d0, self.dinf, self.dminus, self.dplus)

    @property
    def is_empty(self) -> bool:
        return self.support().is_empty

    def check_contrast(self, gamma0_min: float, gamma0_max: float) -> None:
        """Require γ₋ below and γ₊ above the background on their parts"""
        if not self.dminus.is_empty and not self.gamma_minus < gamma0_min:
            raise ValidationError(f"gamma_minus = {self.gamma_minus:g} must lie below the background "
                                  f"(inf = {gamma0_min:g}) on D_F-")
        if not self.dplus.is_empty and not self.gamma_plus > gamma0_max:
            raise ValidationError(f"gamma_plus = {self.gamma_plus:g} must lie above the background "
                                  f"(sup = {gamma0_max:g}) on D_F+")
        if self.gamma_minus is not None and not self.gamma_minus > 0:
            raise ValidationError(f"gamma_minus must be positive, got {self.gamma_minus}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'd0': self.d0.to_dict(),
            'dinf': self.dinf.to_dict(),
            'dminus': self.dminus.to_dict(),
            'dplus': self.dplus.to_dict(),
            'gamma_minus': self.gamma_minus,
            'gamma_plus': self.gamma_plus,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'IndefinitePhantom':
        def region(name):
            return RegionSpec.from_dict(data[name]) if name in data else RegionSpec.empty()

        return cls(
            d0=region('d0'),
            dinf=region('dinf'),
            dminus=region('dminus'),
            dplus=region('dplus'),
            gamma_minus=None if data.get('gamma_minus') is None else float(data['gamma_minus']),
            gamma_plus=None if data.get('gamma_plus') is None else float(data['gamma_plus']),
        )


@dataclass
class ReconstructionResult:
    """Pixel indicator grid with per-pixel test diagnostics, indexed [iy, ix]"""
    grid: PixelGrid
    indicator: np.ndarray
    min_eig: np.ndarray
    method: str
    marginal: Optional[np.ndarray] = None
    vacuous: bool = False
    passed_sets: List[str] = field(default_factory=list)
    tau: float = 0.0
    tests: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=np.int8)
        self.min_eig = np.asarray(self.min_eig, dtype=float)
        if self.marginal is None:
            self.marginal = np.zeros(self.grid.shape, dtype=bool)
        for name in ('indicator', 'min_eig', 'marginal'):
            if getattr(self, name).shape != self.grid.shape:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, grid is {self.grid.shape}")

    @property
    def n_inside(self) -> int:
        return int(self.indicator.sum())

    def indicator_csv(self) -> str:
        buffer = io.StringIO()
        np.savetxt(buffer, self.indicator, delimiter=',', fmt='%d')
        return buffer.getvalue()

    def min_eig_csv(self) -> str:
        buffer = io.StringIO()
        np.savetxt(buffer, self.min_eig, delimiter=',', fmt='%.17g')
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        finite = self.min_eig[np.isfinite(self.min_eig)]
        return {
            'method': self.method,
            'grid': self.grid.to_dict(),
            'pixels_inside': self.n_inside,
            'pixels_marginal': int(self.marginal.sum()),
            'min_eig_range': [float(finite.min()), float(finite.max())] if finite.size else None,
            'vacuous_intersection': self.vacuous,
            'passed_sets': list(self.passed_sets),
            'tau': self.tau,
            'tests': list(self.tests),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class BoundTriple:
    """lower <= middle <= upper for one probe density"""
    probe: str
    lower: float
    middle: float
    upper: float

    def violation(self) -> float:
        """Largest amount by which either inequality fails (0 when both hold)"""
        return max(0.0, self.lower - self.middle, self.middle - self.upper)


@dataclass
class BoundsReport:
    """
    Per-probe evaluation of a two-sided monotonicity estimate.

    When `sign_only` is set the upper bound carries an unknown constant:
    `upper` then holds the integral without it and only its sign pattern is
    checked, with `implied_constant` the smallest constant that makes the
    bound hold on the probes.
    """
    case: str
    triples: List[BoundTriple]
    scale: float
    sign_only: bool = False
    implied_constant: Optional[float] = None

    @property
    def worst_violation(self) -> float:
        if not self.triples:
            return 0.0
        if self.sign_only:
            return max(max(0.0, t.lower - t.middle) for t in self.triples)
        return max(t.violation() for t in self.triples)

    def holds(self, rtol: float = 1e-6) -> bool:
        return self.worst_violation <= rtol * self.scale

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case': self.case,
            'scale': self.scale,
            'sign_only': self.sign_only,
            'implied_constant': self.implied_constant,
            'worst_violation': self.worst_violation,
            'triples': [{'probe': t.probe, 'lower': _finite_or_none(t.lower), 'middle': t.middle,
                         'upper': _finite_or_none(t.upper)} for t in self.triples],
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None
