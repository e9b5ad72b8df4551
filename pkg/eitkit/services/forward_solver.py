import logging
import threading
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import minres, norm as sparse_norm, splu

from config import config
from eitkit.models.conductivity import ConductivityField, ExtremeKind, NDMap, Potential
from eitkit.models.mesh import BoundaryBasis, Mesh
from eitkit.models.region import RegionSpec
from eitkit.services.mesh_builder import AdmissibilityError, boundary_elements, carve_insulating, tag_regions
from eitkit.utils.validators import ValidationError, validate_positive

logger = logging.getLogger(__name__)

C0_REGION_ID = 1
CINF_REGION_ID = 2

RegionLike = Union[str, RegionSpec, np.ndarray]


class SolverError(Exception):
    """Custom exception for linear solver failures"""
    pass


# Assembly

def shape_gradients(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the three P1 hat functions on every element (T, 3, 2) and element areas"""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    signed = mesh.signed_areas()
    grads = np.stack([
        np.stack([y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]], axis=1),
        np.stack([y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]], axis=1),
        np.stack([y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]], axis=1),
    ], axis=1) / (2.0 * signed[:, None, None])
    return grads, np.abs(signed)


def assemble_stiffness(mesh: Mesh, weights: np.ndarray, elements: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Σ_T w_T ∫_T ∇φ_a·∇φ_b over all elements, or over the elements selected by a mask"""
    grads, areas = shape_gradients(mesh)
    scale = np.asarray(weights, dtype=float) * areas
    if elements is not None:
        scale = np.where(elements, scale, 0.0)
    local = scale[:, None, None] * np.einsum('tad,tbd->tab', grads, grads)

    rows = np.repeat(mesh.triangles[:, :, None], 3, axis=2)
    cols = np.repeat(mesh.triangles[:, None, :], 3, axis=1)
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def element_values(mesh: Mesh, field: ConductivityField) -> np.ndarray:
    """Field values on the elements of a possibly carved mesh"""
    if mesh.is_carved:
        return field.values[mesh.parent_elements]
    if field.n_elements != mesh.n_elements:
        raise ValidationError(f"Conductivity has {field.n_elements} values for {mesh.n_elements} elements")
    return field.values


def _basis_on(mesh: Mesh, basis: BoundaryBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Boundary load matrix and Γ weights restricted to the nodes of mesh"""
    if basis.mesh_digest == mesh.geometry_digest() and basis.n_nodes == mesh.n_nodes:
        return basis.load_matrix(), basis.gamma_weights()
    if mesh.is_carved and basis.mesh_digest == mesh.origin:
        return basis.load_matrix()[mesh.parent_nodes], basis.gamma_weights()[mesh.parent_nodes]
    raise ValidationError(f"Boundary basis '{basis.descriptor}' was not built on this mesh")


def _conducting_prolongation(mesh: Mesh, conducting: np.ndarray) -> Tuple[sp.csr_matrix, int, np.ndarray]:
    """
    Map from unknowns to nodal values with one shared unknown per conducting component.

    Free nodes come first, followed by one master unknown per component.
    Returns the prolongation, the number of free unknowns and the component
    label of every node (-1 for free nodes).
    """
    n = mesh.n_nodes
    component = np.full(n, -1, dtype=np.int64)

    if conducting.any():
        tris = mesh.triangles[conducting]
        rows = tris[:, [0, 1, 2, 1, 2, 0]].ravel()
        cols = tris[:, [1, 2, 0, 0, 1, 2]].ravel()
        graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        touched = np.unique(tris)
        _, compact = np.unique(labels[touched], return_inverse=True)
        component[touched] = compact.reshape(-1)

    free = component < 0
    n_free = int(free.sum())
    dof = np.empty(n, dtype=np.int64)
    dof[free] = np.arange(n_free)
    dof[~free] = n_free + component[~free]
    n_dofs = n_free + (int(component.max()) + 1 if (~free).any() else 0)

    prolongation = sp.coo_matrix((np.ones(n), (np.arange(n), dof)), shape=(n, n_dofs)).tocsr()
    return prolongation, n_free, component


@dataclass
class _Operator:
    """Assembled saddle-point system for one mesh and conductivity"""
    mesh: Mesh
    prolongation: sp.csr_matrix
    n_free: int
    stiffness: sp.csr_matrix
    matrix: sp.csc_matrix
    load: np.ndarray
    gamma_weights: np.ndarray
    factor: object

    @property
    def n_dofs(self) -> int:
        return self.prolongation.shape[1]


class ForwardSolver:
    """P1 Galerkin solver for the conductivity equation with extreme inclusions"""

    def __init__(self, rtol: float = None, direct_max_dofs: int = None,
                 iterative_rtol: float = None, max_iter: int = None):
        self.rtol = rtol or config.SOLVER_RTOL
        self.direct_max_dofs = direct_max_dofs or config.DIRECT_SOLVER_MAX_DOFS
        self.iterative_rtol = iterative_rtol or config.ITERATIVE_RTOL
        self.max_iter = max_iter or config.ITERATIVE_MAX_ITER
        self.n_solves = 0
        self._count_lock = threading.Lock()

    # System setup

    def _solve_mesh(self, mesh: Mesh, field: ConductivityField) -> Mesh:
        if not field.matches(mesh):
            raise ValidationError("Conductivity field was not built for this mesh (region tags differ)")

        extreme = field.insulating_mask() | field.conducting_mask()
        if (extreme & boundary_elements(mesh)).any():
            error_msg = "Insulating and conducting regions must stay away from the outer boundary"
            logger.error(error_msg)
            raise AdmissibilityError(error_msg)

        solve_mesh = mesh
        for region_id in field.insulating_ids:
            solve_mesh = carve_insulating(solve_mesh, region_id)
        return solve_mesh

    def prepare(self, mesh: Mesh, field: ConductivityField, basis: BoundaryBasis,
                conducting: bool = True) -> _Operator:
        """Carve insulating regions, collapse conducting ones and factorize the constrained system"""
        solve_mesh = self._solve_mesh(mesh, field)
        values = element_values(solve_mesh, field)
        stiffness = assemble_stiffness(solve_mesh, values)

        if conducting:
            cond = field.conducting_mask()
            cond = cond[solve_mesh.parent_elements] if solve_mesh.is_carved else cond
        else:
            cond = np.zeros(solve_mesh.n_elements, dtype=bool)
        prolongation, n_free, _ = _conducting_prolongation(solve_mesh, cond)

        load, gamma_weights = _basis_on(solve_mesh, basis)
        return self._factorize(solve_mesh, prolongation, n_free, stiffness, load, gamma_weights)

    def _factorize(self, mesh: Mesh, prolongation: sp.csr_matrix, n_free: int, stiffness: sp.csr_matrix,
                   load: np.ndarray, gamma_weights: np.ndarray) -> _Operator:
        reduced = (prolongation.T @ stiffness @ prolongation).tocsr()
        constraint = prolongation.T @ gamma_weights
        if not np.any(constraint):
            error_msg = "Γ carries no boundary weight; the mean-free constraint is empty"
            logger.error(error_msg)
            raise SolverError(error_msg)

        column = sp.csr_matrix(constraint.reshape(-1, 1))
        matrix = sp.bmat([[reduced, column], [column.T, None]], format='csc')

        factor = None
        if matrix.shape[0] <= self.direct_max_dofs:
            try:
                factor = splu(matrix)
            except RuntimeError as e:
                error_msg = f"Constrained system is singular: {e}"
                logger.error(error_msg)
                raise SolverError(error_msg)

        logger.debug(f"Prepared system with {matrix.shape[0]} unknowns ({n_free} free nodes)")
        return _Operator(mesh, prolongation, n_free, stiffness, matrix, load, gamma_weights, factor)

    def _solve(self, op: _Operator, rhs: np.ndarray) -> np.ndarray:
        """Solve the saddle system for one or more right-hand sides, enforcing the residual bound"""
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        rhs = rhs.reshape(len(rhs), -1)

        if op.factor is not None:
            x = op.factor.solve(rhs)
        else:
            x = np.column_stack([self._iterate(op.matrix, rhs[:, j]) for j in range(rhs.shape[1])])

        error = self._backward_error(op.matrix, x, rhs)
        if error > self.rtol and op.factor is not None:
            x = x + op.factor.solve(rhs - op.matrix @ x)
            error = self._backward_error(op.matrix, x, rhs)
        if not np.all(np.isfinite(x)) or error > self.rtol:
            error_msg = f"Linear solve residual {error:.3e} exceeds bound {self.rtol:.1e}"
            logger.error(error_msg)
            raise SolverError(error_msg)

        with self._count_lock:
            self.n_solves += rhs.shape[1]
        return x[:, 0] if single else x

    def _iterate(self, matrix: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        x, info = minres(matrix, b, rtol=self.iterative_rtol, maxiter=self.max_iter)
        if info != 0:
            error_msg = f"MINRES did not converge (info={info})"
            logger.error(error_msg)
            raise SolverError(error_msg)
        return x

    @staticmethod
    def _backward_error(matrix: sp.spmatrix, x: np.ndarray, rhs: np.ndarray) -> float:
        """Normwise backward error ‖b − Mx‖ / (‖M‖‖x‖ + ‖b‖), worst column"""
        residual = np.abs(rhs - matrix @ x).max(axis=0)
        scale = sparse_norm(matrix, np.inf) * np.abs(x).max(axis=0) + np.abs(rhs).max(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return float((residual / scale).max())

    def _nodal(self, op: _Operator, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nodal values and conducting component values from a saddle solution"""
        dofs = x[:op.n_dofs]
        return op.prolongation @ dofs, dofs[op.n_free:]

    # Public operations

    def solve_forward(self, mesh: Mesh, field: ConductivityField, f: Sequence[float],
                      basis: BoundaryBasis) -> Potential:
        """Potential for Neumann data Σ f_j φ_j on Γ with zero mean trace on Γ"""
        f = np.asarray(f, dtype=float).reshape(-1)
        if len(f) != basis.n_functions:
            raise ValidationError(f"Coefficient vector has {len(f)} entries, basis has {basis.n_functions}")

        op = self.prepare(mesh, field, basis)
        rhs = np.append(op.prolongation.T @ (op.load @ f), 0.0)
        values, components = self._nodal(op, self._solve(op, rhs))
        return Potential(op.mesh, values, tuple(components), f=f,
                         meta={'field': field.describe(), 'basis': basis.descriptor})

    def solve_basis(self, mesh: Mesh, field: ConductivityField, basis: BoundaryBasis) -> List[Potential]:
        """Potentials for every basis function"""
        op = self.prepare(mesh, field, basis)
        nodal = self._basis_solutions(op)
        eye = np.eye(basis.n_functions)
        return [Potential(op.mesh, nodal[:, j], f=eye[j],
                          meta={'field': field.describe(), 'basis': basis.descriptor, 'probe': basis.labels[j]})
                for j in range(basis.n_functions)]

    def _basis_solutions(self, op: _Operator) -> np.ndarray:
        rhs = np.vstack([op.prolongation.T @ op.load, np.zeros((1, op.load.shape[1]))])
        x = self._solve(op, rhs)
        return op.prolongation @ x[:op.n_dofs]

    def compute_nd_map(self, mesh: Mesh, field: ConductivityField, basis: BoundaryBasis) -> NDMap:
        """Matrix of ⟨u_{f_j}|_Γ, f_k⟩, symmetrized, with the raw asymmetry kept in meta"""
        op = self.prepare(mesh, field, basis)
        nodal = self._basis_solutions(op)
        raw = nodal.T @ op.load

        scale = max(np.linalg.norm(raw), np.finfo(float).tiny)
        sym_defect = float(np.linalg.norm(raw - raw.T) / scale)
        if sym_defect > 1e-8:
            logger.warning(f"ND map for {field.describe()} has asymmetry {sym_defect:.3e} before symmetrization")

        meta = {
            'sym_defect': sym_defect,
            'field': field.describe(),
            'field_digest': field.digest(),
            'mesh_digest': mesh.digest(),
            'n_nodes': op.mesh.n_nodes,
            'n_unknowns': op.n_dofs,
        }
        logger.info(f"Computed {basis.n_functions}x{basis.n_functions} ND map for {field.describe()} "
                    f"({op.n_dofs} unknowns)")
        return NDMap(0.5 * (raw + raw.T), basis.descriptor, meta)

    def background_gradients(self, mesh: Mesh, gamma0: ConductivityField, basis: BoundaryBasis) -> np.ndarray:
        """Element gradients of the background potentials for every basis function, shape (T, m, 2)"""
        if not gamma0.is_finite:
            raise ValidationError("Background conductivity must be finite everywhere")
        op = self.prepare(mesh, gamma0, basis)
        nodal = self._basis_solutions(op)
        grads, _ = shape_gradients(mesh)
        return np.einsum('tad,tam->tmd', grads, nodal[mesh.triangles])

    def frechet_form(self, mesh: Mesh, gamma0: ConductivityField, region: RegionLike,
                     basis: BoundaryBasis, gradients: Optional[np.ndarray] = None) -> np.ndarray:
        """Matrix of −∫_B ∇u_{f_j}·∇u_{f_k} for the background potentials (η = χ_B)"""
        mask = region_mask(mesh, region)
        m = basis.n_functions
        if not mask.any():
            logger.warning(f"Fréchet form region {_describe(region)} contains no element")
            return np.zeros((m, m))

        if gradients is None:
            gradients = self.background_gradients(mesh, gamma0, basis)
        areas = mesh.areas()
        g = gradients[mask]
        return -np.einsum('t,tjd,tkd->jk', areas[mask], g, g)

    def extend_into_insulator(self, mesh_full: Mesh, potential: Potential,
                              field: ConductivityField) -> Potential:
        """
        Extend a potential from Ω∖C₀ into C₀ by the ς-harmonic extension of its trace on ∂C₀.

        Values outside C₀ are copied unchanged.
        """
        carved = potential.mesh
        if not carved.is_carved:
            if carved.geometry_digest() != mesh_full.geometry_digest():
                raise ValidationError("Potential does not live on the given mesh")
            return potential
        if carved.origin != mesh_full.geometry_digest():
            raise ValidationError("Potential was carved from a different mesh")

        values = np.full(mesh_full.n_nodes, np.nan)
        values[carved.parent_nodes] = potential.values

        inside = np.ones(mesh_full.n_elements, dtype=bool)
        inside[carved.parent_elements] = False
        unknown = np.flatnonzero(np.isnan(values))

        if len(unknown):
            stiffness = assemble_stiffness(mesh_full, element_values(mesh_full, field), elements=inside).tocsr()
            known = np.flatnonzero(~np.isnan(values))
            a_ii = stiffness[unknown][:, unknown].tocsc()
            rhs = -(stiffness[unknown][:, known] @ values[known])
            try:
                solution = splu(a_ii).solve(rhs)
            except RuntimeError as e:
                error_msg = f"Extension problem is singular: {e}"
                logger.error(error_msg)
                raise SolverError(error_msg)
            error = self._backward_error(a_ii, solution.reshape(-1, 1), rhs.reshape(-1, 1))
            if error > self.rtol:
                raise SolverError(f"Extension residual {error:.3e} exceeds bound {self.rtol:.1e}")
            values[unknown] = solution

        meta = dict(potential.meta, extended=True)
        return Potential(mesh_full, values, potential.component_values, f=potential.f, meta=meta)

    def solve_via_projection(self, mesh: Mesh, field: ConductivityField, f: Sequence[float],
                             basis: BoundaryBasis) -> Potential:
        """
        Potential obtained as P(u^ς restricted to Ω∖C₀ minus w).

        u^ς solves the problem without inclusions, w is the Neumann solution on
        Ω∖C₀ whose flux on ∂C₀ matches the consistent interior flux of u^ς, and
        P is the ς-energy projection onto functions constant on each conducting
        component.
        """
        f = np.asarray(f, dtype=float).reshape(-1)
        finite = ConductivityField(field.values, field.element_region, (), label=f"{field.describe()}|finite")

        full_op = self.prepare(mesh, finite, basis)
        rhs = np.append(full_op.prolongation.T @ (full_op.load @ f), 0.0)
        u_full, _ = self._nodal(full_op, self._solve(full_op, rhs))

        # Ω∖C₀ without conductor collapse
        outer_op = self.prepare(mesh, field, basis, conducting=False)
        solve_mesh = outer_op.mesh
        if solve_mesh.is_carved:
            inside = np.ones(mesh.n_elements, dtype=bool)
            inside[solve_mesh.parent_elements] = False
            interior_stiffness = assemble_stiffness(mesh, field.values, elements=inside)
            flux = -(interior_stiffness @ u_full)[solve_mesh.parent_nodes]
            w, _ = self._nodal(outer_op, self._solve(outer_op, np.append(flux, 0.0)))
            v = u_full[solve_mesh.parent_nodes] - w
        else:
            v = u_full

        op = self.prepare(mesh, field, basis)
        if op.n_free == op.mesh.n_nodes:
            values, components = v, np.array([])
        else:
            rhs = np.append(op.prolongation.T @ (op.stiffness @ v), 0.0)
            values, components = self._nodal(op, self._solve(op, rhs))

        return Potential(op.mesh, values, tuple(components), f=f,
                         meta={'field': field.describe(), 'basis': basis.descriptor, 'path': 'projection'})


# Conductivity construction

def truncated_conductivity(field: ConductivityField, eps: float) -> ConductivityField:
    """All-finite surrogate: ε·ς in C₀, ς/ε in C∞, ς elsewhere"""
    try:
        eps = validate_positive('eps', eps)
    except ValidationError:
        logger.error(f"Truncation parameter must be positive, got {eps!r}")
        raise

    values = np.array(field.values)
    values[field.insulating_mask()] *= eps
    values[field.conducting_mask()] /= eps
    return ConductivityField(values, field.element_region, (), label=f"{field.describe()}@eps={eps:g}")


def extreme_field(mesh: Mesh, background: Union[float, np.ndarray],
                  c0: Optional[RegionSpec] = None, cinf: Optional[RegionSpec] = None,
                  finite: Sequence[Tuple[RegionSpec, float]] = (), label: str = '') -> Tuple[Mesh, ConductivityField]:
    """
    Tag C₀, C∞ and finite pieces on a mesh and build σ(ς, C₀, C∞).

    C₀ gets region id 1, C∞ id 2 and the finite pieces ids 3, 4, ... with
    ς overwritten by their value. Returns the tagged mesh and the field.
    """
    regions, overrides = [], []
    if c0 is not None and not c0.is_empty:
        regions.append((C0_REGION_ID, c0))
    if cinf is not None and not cinf.is_empty:
        regions.append((CINF_REGION_ID, cinf))
    for offset, (spec, value) in enumerate(finite):
        if not spec.is_empty:
            regions.append((3 + offset, spec))
            overrides.append((3 + offset, validate_positive('finite inclusion value', value)))

    tagged = tag_regions(mesh, regions)
    values = np.broadcast_to(np.asarray(background, dtype=float), (mesh.n_elements,)).copy()
    for region_id, value in overrides:
        values[tagged.element_region == region_id] = value

    extremes = [(C0_REGION_ID, ExtremeKind.INSULATING), (CINF_REGION_ID, ExtremeKind.CONDUCTING)]
    field = ConductivityField(values, tagged.element_region, tuple(extremes), label=label)
    return tagged, field


# Integrals of potentials

def region_mask(mesh: Mesh, region: RegionLike) -> np.ndarray:
    """Element mask for 'all', a RegionSpec (by centroid) or an explicit boolean mask"""
    if isinstance(region, str):
        if region != 'all':
            raise ValidationError(f"Region must be 'all', a RegionSpec or a mask, got '{region}'")
        return np.ones(mesh.n_elements, dtype=bool)
    if isinstance(region, RegionSpec):
        return region.contains(mesh.centroids())
    mask = np.asarray(region, dtype=bool)
    if mask.shape != (mesh.n_elements,):
        raise ValidationError(f"Element mask has shape {mask.shape}, mesh has {mesh.n_elements} elements")
    return mask


def _describe(region: RegionLike) -> str:
    if isinstance(region, RegionSpec):
        return region.describe()
    if isinstance(region, str):
        return region
    return f"mask[{int(np.asarray(region).sum())}]"


def dirichlet_energy(potential: Potential, field: ConductivityField, region: RegionLike = 'all',
                     unit_weight: bool = False) -> float:
    """∫_region ς|∇u|² (or ∫|∇u|² with unit_weight) with exact P1 quadrature"""
    mesh = potential.mesh
    mask = region_mask(mesh, region)
    if not mask.any():
        logger.warning(f"Energy region {_describe(region)} contains no element")
        return 0.0

    weights = np.ones(mesh.n_elements) if unit_weight else element_values(mesh, field)
    density = (potential.gradients() ** 2).sum(axis=1) * mesh.areas() * weights
    return float(density[mask].sum())


def energy_seminorm(potential: Potential, field: ConductivityField) -> float:
    return float(np.sqrt(dirichlet_energy(potential, field)))


def h1_norm(potential: Potential) -> float:
    """Full H¹ norm of a P1 function with exact mass and stiffness quadrature"""
    mesh = potential.mesh
    u = potential.values[mesh.triangles]
    areas = mesh.areas()
    mass = areas / 12.0 * ((u ** 2).sum(axis=1) + u.sum(axis=1) ** 2)
    stiffness = (potential.gradients() ** 2).sum(axis=1) * areas
    return float(np.sqrt(mass.sum() + stiffness.sum()))
