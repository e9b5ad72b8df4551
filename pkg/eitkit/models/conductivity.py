from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple
import hashlib
import io
import json

import numpy as np

from eitkit.models.mesh import Mesh
from eitkit.utils.validators import ValidationError, validate_conductivity_values


class ExtremeKind(str, Enum):
    """How a tagged region enters the conductivity"""
    FINITE = 'finite'
    INSULATING = 'insulating'
    CONDUCTING = 'conducting'


@dataclass(frozen=True, eq=False)
class ConductivityField:
    """
    Conductivity σ(ς, C₀, C∞) on the elements of an uncarved mesh.

    `values` holds the finite coefficient ς on every element, including
    those inside extreme regions (where it is only used by truncation).
    `extremes` maps region ids of `element_region` to their ExtremeKind;
    ids that are not listed are finite.
    """
    values: np.ndarray
    element_region: np.ndarray
    extremes: Tuple[Tuple[int, ExtremeKind], ...] = ()
    label: str = ''
    _cache: Dict[str, object] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        regions = np.array(self.element_region, dtype=np.int64).reshape(-1)
        values.setflags(write=False)
        regions.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'element_region', regions)

        is_valid, error = validate_conductivity_values(values)
        if not is_valid:
            raise ValidationError(error)
        if len(regions) != len(values):
            raise ValidationError("Conductivity needs one region id per element")

        extremes = tuple(sorted((int(rid), ExtremeKind(kind)) for rid, kind in self.extremes))
        ids = [rid for rid, _ in extremes]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"Region ids tagged twice as extreme: {ids}")
        object.__setattr__(self, 'extremes', extremes)

    @classmethod
    def uniform(cls, mesh: Mesh, value: float = 1.0, label: str = '') -> 'ConductivityField':
        return cls(np.full(mesh.n_elements, float(value)), mesh.element_region, label=label or f"uniform({value:g})")

    @property
    def n_elements(self) -> int:
        return len(self.values)

    def kind_of(self, region_id: int) -> ExtremeKind:
        return dict(self.extremes).get(int(region_id), ExtremeKind.FINITE)

    def _mask(self, kind: ExtremeKind) -> np.ndarray:
        ids = [rid for rid, k in self.extremes if k == kind]
        return np.isin(self.element_region, ids)

    def insulating_mask(self) -> np.ndarray:
        return self._mask(ExtremeKind.INSULATING)

    def conducting_mask(self) -> np.ndarray:
        return self._mask(ExtremeKind.CONDUCTING)

    @property
    def insulating_ids(self) -> Tuple[int, ...]:
        return tuple(rid for rid, k in self.extremes if k == ExtremeKind.INSULATING)

    @property
    def is_finite(self) -> bool:
        return not (self.insulating_mask().any() or self.conducting_mask().any())

    @property
    def inf_bound(self) -> float:
        return float(self.values.min())

    @property
    def sup_bound(self) -> float:
        return float(self.values.max())

    def with_values(self, values: np.ndarray, label: str = '') -> 'ConductivityField':
        return ConductivityField(values, self.element_region, self.extremes, label=label)

    def scaled(self, factor: float) -> 'ConductivityField':
        """Multiply ς by a positive factor, keeping the extreme tags"""
        if not factor > 0:
            raise ValidationError(f"Scaling factor must be positive, got {factor}")
        return ConductivityField(self.values * factor, self.element_region, self.extremes,
                                 label=f"{self.describe()}*{factor:g}")

    def matches(self, mesh: Mesh) -> bool:
        return self.n_elements == mesh.n_elements and np.array_equal(self.element_region, mesh.element_region)

    def digest(self) -> str:
        if 'digest' not in self._cache:
            sha = hashlib.sha256()
            sha.update(self.values.tobytes())
            sha.update(self.element_region.tobytes())
            sha.update(json.dumps([(rid, k.value) for rid, k in self.extremes]).encode())
            self._cache['digest'] = sha.hexdigest()[:16]
        return self._cache['digest']

    def describe(self) -> str:
        return self.label or f"field:{self.digest()}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'label': self.describe(),
            'digest': self.digest(),
            'inf': self.inf_bound,
            'sup': self.sup_bound,
            'extremes': {str(rid): k.value for rid, k in self.extremes},
        }


@dataclass(frozen=True, eq=False)
class Potential:
    """
    Nodal solution on the mesh it was solved on (carved when C₀ is nonempty).

    `component_values` lists the shared value of every conducting component;
    `f` is the Neumann coefficient vector in the boundary basis, if any.
    """
    mesh: Mesh
    values: np.ndarray
    component_values: Tuple[float, ...] = ()
    f: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        if len(values) != self.mesh.n_nodes:
            raise ValidationError(f"Potential has {len(values)} values for {self.mesh.n_nodes} nodes")

    def gradients(self) -> np.ndarray:
        """Constant P1 gradient on each element, shape (T, 2)"""
        p = self.mesh.nodes[self.mesh.triangles]
        u = self.values[self.mesh.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        du1 = u[:, 1] - u[:, 0]
        du2 = u[:, 2] - u[:, 0]
        gx = (du1 * e2[:, 1] - du2 * e1[:, 1]) / det
        gy = (du2 * e1[:, 0] - du1 * e2[:, 0]) / det
        return np.stack([gx, gy], axis=1)

    def __sub__(self, other: 'Potential') -> 'Potential':
        if other.mesh.n_nodes != self.mesh.n_nodes:
            raise ValidationError("Potentials live on different meshes")
        return Potential(self.mesh, self.values - other.values)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        buffer.write("node_index,value\n")
        for i, value in enumerate(self.values):
            buffer.write(f"{i},{value:.17g}\n")
        return buffer.getvalue()


@dataclass(frozen=True, eq=False)
class NDMap:
    """Matrix of ⟨Λ f_j, f_k⟩ in a fixed boundary basis"""
    matrix: np.ndarray
    basis: str
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValidationError(f"ND matrix must be square, got shape {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def sym_defect(self) -> float:
        return float(self.meta.get('sym_defect', 0.0))

    def check_compatible(self, other: 'NDMap') -> None:
        if self.basis != other.basis or self.size != other.size:
            raise ValidationError(f"ND maps use different bases: '{self.basis}' ({self.size}) "
                                  f"and '{other.basis}' ({other.size})")

    def spectral_distance(self, other: 'NDMap') -> float:
        """Spectral norm of the difference of two maps in the same basis"""
        self.check_compatible(other)
        return float(np.linalg.norm(self.matrix - other.matrix, 2))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def to_csv(self) -> str:
        buffer = io.StringIO()
        buffer.write(f"# basis={self.basis} m={self.size} sym_defect={self.sym_defect:.3e}\n")
        np.savetxt(buffer, self.matrix, delimiter=',', fmt='%.17g')
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> 'NDMap':
        lines = text.splitlines()
        if not lines or not lines[0].startswith('# '):
            raise ValidationError("ND map CSV must start with a '# basis=... m=...' header")

        header = dict(part.split('=', 1) for part in lines[0][2:].split() if '=' in part)
        try:
            matrix = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=',', ndmin=2)
            size = int(header['m'])
        except (KeyError, ValueError) as e:
            raise ValidationError(f"Malformed ND map CSV: {e}")

        if matrix.shape != (size, size):
            raise ValidationError(f"ND map CSV declares m={size} but holds shape {matrix.shape}")
        return cls(matrix, header.get('basis', ''), {'sym_defect': float(header.get('sym_defect', 0.0))})

    def principal(self, size: int) -> 'NDMap':
        """Leading principal submatrix"""
        return NDMap(self.matrix[:size, :size], f"{self.basis}[:{size}]", dict(self.meta))

    def to_dict(self) -> Dict[str, Any]:
        return {'basis': self.basis, 'm': self.size, 'meta': dict(self.meta)}

