from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
import hashlib

import numpy as np

from eitkit.utils.validators import ValidationError


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Triangulated domain with region tags and boundary markers.

    Arrays are read-only after construction. `parent_nodes` and
    `parent_elements` are set on meshes produced by carving and map each
    node/element back to the mesh it was carved from; `origin_digest`
    identifies that uncarved mesh.
    """
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    on_gamma: np.ndarray
    element_region: np.ndarray
    domain: str = 'disk'
    parent_nodes: Optional[np.ndarray] = None
    parent_elements: Optional[np.ndarray] = None
    origin_digest: Optional[str] = None
    _cache: Dict[str, object] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', _frozen(self.nodes, float).reshape(-1, 2))
        object.__setattr__(self, 'triangles', _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, 'boundary_edges', _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, 'on_gamma', _frozen(self.on_gamma, bool).reshape(-1))
        object.__setattr__(self, 'element_region', _frozen(self.element_region, np.int64).reshape(-1))
        if self.parent_nodes is not None:
            object.__setattr__(self, 'parent_nodes', _frozen(self.parent_nodes, np.int64))
            object.__setattr__(self, 'parent_elements', _frozen(self.parent_elements, np.int64))

        if len(self.on_gamma) != len(self.boundary_edges):
            raise ValidationError("on_gamma must have one flag per boundary edge")
        if len(self.element_region) != len(self.triangles):
            raise ValidationError("element_region must have one id per triangle")
        if self.domain not in ('disk', 'polygon'):
            raise ValidationError(f"Unknown domain kind '{self.domain}'")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def is_carved(self) -> bool:
        return self.parent_nodes is not None

    @property
    def origin(self) -> str:
        """Geometry digest of the uncarved mesh this one derives from"""
        return self.origin_digest or self.geometry_digest()

    def _hash(self, key: str, arrays) -> str:
        if key not in self._cache:
            sha = hashlib.sha256()
            for array in arrays:
                sha.update(np.ascontiguousarray(array).tobytes())
            sha.update(self.domain.encode())
            self._cache[key] = sha.hexdigest()[:16]
        return self._cache[key]

    def geometry_digest(self) -> str:
        """Hash of nodes, triangles and boundary markers, ignoring region tags"""
        return self._hash("geometry", (self.nodes, self.triangles, self.boundary_edges, self.on_gamma))

    def digest(self) -> str:
        return self._hash("full", (self.nodes, self.triangles, self.boundary_edges, self.on_gamma,
                                   self.element_region))

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def element_diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        lengths = np.stack([
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ], axis=1)
        return lengths.max(axis=1)

    def max_element_diameter(self) -> float:
        return float(self.element_diameters().max())

    def gamma_edges(self) -> np.ndarray:
        return self.boundary_edges[self.on_gamma]

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def with_regions(self, element_region: np.ndarray) -> 'Mesh':
        return Mesh(self.nodes, self.triangles, self.boundary_edges, self.on_gamma, element_region,
                    domain=self.domain, parent_nodes=self.parent_nodes,
                    parent_elements=self.parent_elements, origin_digest=self.origin_digest)

    def with_gamma(self, on_gamma: np.ndarray) -> 'Mesh':
        return Mesh(self.nodes, self.triangles, self.boundary_edges, on_gamma, self.element_region,
                    domain=self.domain, parent_nodes=self.parent_nodes,
                    parent_elements=self.parent_elements, origin_digest=self.origin_digest)

    def region_area(self, region_id: int) -> float:
        return float(self.areas()[self.element_region == region_id].sum())

    # Plain-text exchange format

    def to_text(self) -> str:
        """Serialize as `nodes N triangles T`, node lines, triangle lines, boundary edge lines"""
        lines = [f"nodes {self.n_nodes} triangles {self.n_elements}"]
        lines.extend(f"{x:.17g} {y:.17g}" for x, y in self.nodes)
        lines.extend(f"{i} {j} {k} {r}" for (i, j, k), r in zip(self.triangles, self.element_region))
        lines.extend(f"{i} {j} {int(g)}" for (i, j), g in zip(self.boundary_edges, self.on_gamma))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, domain: str = 'disk') -> 'Mesh':
        """Parse the plain-text exchange format"""
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if not rows or len(rows[0]) != 4 or rows[0][0] != 'nodes' or rows[0][2] != 'triangles':
            raise ValidationError("Mesh text must start with 'nodes N triangles T'")

        try:
            n_nodes, n_triangles = int(rows[0][1]), int(rows[0][3])
            node_rows = rows[1:1 + n_nodes]
            tri_rows = rows[1 + n_nodes:1 + n_nodes + n_triangles]
            edge_rows = rows[1 + n_nodes + n_triangles:]
            nodes = np.array([[float(v) for v in r] for r in node_rows])
            tris = np.array([[int(v) for v in r] for r in tri_rows], dtype=np.int64).reshape(-1, 4)
            edges = np.array([[int(v) for v in r] for r in edge_rows], dtype=np.int64).reshape(-1, 3)
        except (ValueError, IndexError) as e:
            raise ValidationError(f"Malformed mesh text: {e}")

        if len(nodes) != n_nodes or len(tris) != n_triangles:
            raise ValidationError("Mesh text is truncated")

        return cls(nodes, tris[:, :3], edges[:, :2], edges[:, 2].astype(bool), tris[:, 3], domain=domain)


@dataclass(frozen=True, eq=False)
class BoundaryBasis:
    """
    Discrete boundary basis on the Γ edges of a mesh.

    Every function is stored through its values at Gauss points on each Γ
    edge: `values[j, e, q]` is function j at quadrature point q of edge
    `edges[e]`; `weights[e, q]` already includes the line element, and
    `t[q]` is the position of the point along the edge (0 at the first node).
    """
    kind: str
    size: int
    labels: Tuple[str, ...]
    edges: np.ndarray
    t: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    gram: np.ndarray
    mesh_digest: str
    n_nodes: int

    def __post_init__(self):
        for name in ('edges', 't', 'weights', 'values', 'gram'):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64 if name == 'edges' else float))

    @property
    def n_functions(self) -> int:
        return len(self.labels)

    @property
    def descriptor(self) -> str:
        return f"{self.kind}:{self.size}:{self.mesh_digest}"

    @property
    def gamma_length(self) -> float:
        return float(self.weights.sum())

    def means(self) -> np.ndarray:
        """Integral of each basis function over Γ"""
        return np.einsum('jeq,eq->j', self.values, self.weights)

    def load_matrix(self) -> np.ndarray:
        """Matrix L with L[i, j] = integral over Γ of f_j times the hat function of node i"""
        load = np.zeros((self.n_nodes, self.n_functions))
        w_start = self.weights * (1.0 - self.t)[None, :]
        w_end = self.weights * self.t[None, :]
        start = np.einsum('jeq,eq->ej', self.values, w_start)
        end = np.einsum('jeq,eq->ej', self.values, w_end)
        np.add.at(load, self.edges[:, 0], start)
        np.add.at(load, self.edges[:, 1], end)
        return load

    def gamma_weights(self) -> np.ndarray:
        """Vector c with c[i] = integral over Γ of the hat function of node i"""
        c = np.zeros(self.n_nodes)
        np.add.at(c, self.edges[:, 0], (self.weights * (1.0 - self.t)[None, :]).sum(axis=1))
        np.add.at(c, self.edges[:, 1], (self.weights * self.t[None, :]).sum(axis=1))
        return c

    def to_dict(self) -> Dict[str, object]:
        return {'kind': self.kind, 'size': self.size, 'functions': list(self.labels), 'mesh': self.mesh_digest}
