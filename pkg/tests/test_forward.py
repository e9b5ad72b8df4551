import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import floats, integers

from eitkit.models.conductivity import ConductivityField, Potential
from eitkit.models.region import RegionSpec
from eitkit.services.forward_solver import (
    ForwardSolver,
    SolverError,
    dirichlet_energy,
    energy_seminorm,
    extreme_field,
    h1_norm,
    region_mask,
    truncated_conductivity,
)
from eitkit.services.mesh_builder import AdmissibilityError, build_boundary_basis, generate_disk_mesh
from eitkit.utils.validators import ValidationError

HALF_DISK = RegionSpec.disk((0, 0), 0.5)
COS1 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
COARSE_MESH = generate_disk_mesh(0.2)


@pytest.fixture(scope='module')
def mesh():
    return generate_disk_mesh(0.05)


@pytest.fixture(scope='module')
def basis(mesh):
    return build_boundary_basis(mesh, 'fourier', 4)


@pytest.fixture(scope='module')
def fine_mesh():
    return generate_disk_mesh(0.02)


@pytest.fixture(scope='module')
def fine_basis(fine_mesh):
    return build_boundary_basis(fine_mesh, 'fourier', 4)


@pytest.fixture(scope='module')
def solver():
    return ForwardSolver()


@pytest.fixture(scope='module')
def homogeneous_map(mesh, basis, solver):
    return solver.compute_nd_map(mesh, ConductivityField.uniform(mesh), basis)


def _mode1(solver, mesh, basis, c0=None, cinf=None, eps=None):
    tagged, field = extreme_field(mesh, 1.0, c0=c0, cinf=cinf)
    if eps is not None:
        field = truncated_conductivity(field, eps)
    return solver.compute_nd_map(tagged, field, basis).matrix[0, 0]


def test_homogeneous_spectrum(fine_mesh, solver):
    """Test that the unit disk ND map is diag(1/k) in the Fourier basis"""
    nd_map = solver.compute_nd_map(fine_mesh, ConductivityField.uniform(fine_mesh),
                                   build_boundary_basis(fine_mesh, 'fourier', 8))
    matrix = nd_map.matrix
    expected = np.repeat(1.0 / np.arange(1, 9), 2)

    assert np.allclose(np.diag(matrix), expected, rtol=0.01, atol=0)
    off_diagonal = matrix - np.diag(np.diag(matrix))
    assert np.abs(off_diagonal).max() <= 1e-3 * nd_map.norm()
    assert nd_map.sym_defect < 1e-8
    assert np.array_equal(matrix, matrix.T)

def test_conductivity_scaling(mesh, basis, solver, homogeneous_map):
    """Test Λ(cς) = Λ(ς)/c"""
    rng = np.random.default_rng(7)
    field = ConductivityField(rng.uniform(0.5, 2.0, mesh.n_elements), mesh.element_region)
    scaled = ConductivityField(3.0 * field.values, mesh.element_region)

    assert np.allclose(solver.compute_nd_map(mesh, ConductivityField.uniform(mesh, 2.0), basis).matrix,
                       homogeneous_map.matrix / 2, rtol=1e-8, atol=1e-12)
    assert np.allclose(solver.compute_nd_map(mesh, scaled, basis).matrix,
                       solver.compute_nd_map(mesh, field, basis).matrix / 3, rtol=1e-8, atol=1e-12)

@given(integers(min_value=0, max_value=2 ** 32 - 1), floats(min_value=0.1, max_value=2.0),
       floats(min_value=0.0, max_value=5.0))
@settings(max_examples=20, deadline=None)
def test_nd_map_is_monotone_in_conductivity(seed, low, spread):
    """Element-wise ς₁ ≤ ς₂ gives Λ(ς₁) ⪰ Λ(ς₂)"""
    mesh = COARSE_MESH
    basis = build_boundary_basis(mesh, 'fourier', 2)
    rng = np.random.default_rng(seed)
    lower = rng.uniform(low, low + 1.0, mesh.n_elements)
    upper = lower + spread * rng.uniform(0.0, 1.0, mesh.n_elements)

    solver = ForwardSolver()
    first = solver.compute_nd_map(mesh, ConductivityField(lower, mesh.element_region), basis)
    second = solver.compute_nd_map(mesh, ConductivityField(upper, mesh.element_region), basis)

    assert np.linalg.eigvalsh(first.matrix - second.matrix)[0] >= -1e-8 * first.norm()

@pytest.mark.parametrize('eps', [1.0, 0.1, 0.01])
def test_truncated_insulating_disk(fine_mesh, fine_basis, solver, eps):
    """Test the mode-1 entry of a weakly conducting disk against (5+3ε)/(3+5ε)"""
    expected = (5 + 3 * eps) / (3 + 5 * eps)

    assert _mode1(solver, fine_mesh, fine_basis, c0=HALF_DISK, eps=eps) == pytest.approx(expected, rel=0.01)

def test_truncation_with_unit_eps_is_homogeneous(mesh, basis, solver, homogeneous_map):
    """Test that ε = 1 reproduces the homogeneous map"""
    tagged, field = extreme_field(mesh, 1.0, c0=HALF_DISK)
    truncated = solver.compute_nd_map(tagged, truncated_conductivity(field, 1.0), basis)

    assert np.allclose(truncated.matrix, homogeneous_map.matrix, atol=1e-12)

def test_insulating_disk_on_carved_mesh(fine_mesh, fine_basis, solver):
    """Test the mode-1 entry of an insulating disk against 5/3"""
    assert _mode1(solver, fine_mesh, fine_basis, c0=HALF_DISK) == pytest.approx(5 / 3, rel=0.01)

def test_conducting_disk(fine_mesh, fine_basis, solver):
    """Test the mode-1 entry of a conducting disk against 3/5 and against truncation"""
    collapsed = _mode1(solver, fine_mesh, fine_basis, cinf=HALF_DISK)
    truncated = _mode1(solver, fine_mesh, fine_basis, cinf=HALF_DISK, eps=1e-3)

    assert collapsed == pytest.approx(3 / 5, rel=0.01)
    assert truncated == pytest.approx(collapsed, rel=5e-3)

def test_conducting_potential_is_constant_on_inclusion(mesh, basis, solver):
    """Test that a conducting component carries one shared value"""
    tagged, field = extreme_field(mesh, 1.0, cinf=HALF_DISK)
    potential = solver.solve_forward(tagged, field, COS1, basis)

    inside = np.unique(tagged.triangles[field.conducting_mask()])
    assert len(potential.component_values) == 1
    assert np.allclose(potential.values[inside], potential.component_values[0])
    assert np.allclose(potential.gradients()[field.conducting_mask()], 0.0, atol=1e-10)

def test_energy_matches_nd_entry(mesh, basis, solver, homogeneous_map):
    """Test ⟨Λf, f⟩ = ∫σ|∇u|² for the discrete solution"""
    field = ConductivityField.uniform(mesh)
    potential = solver.solve_forward(mesh, field, COS1, basis)

    assert dirichlet_energy(potential, field) == pytest.approx(homogeneous_map.matrix[0, 0], rel=1e-8)
    assert energy_seminorm(potential, field) == pytest.approx(math.sqrt(homogeneous_map.matrix[0, 0]), rel=1e-8)
    assert h1_norm(potential) > energy_seminorm(potential, field)

def test_potential_has_zero_mean_on_gamma(mesh, basis, solver):
    """Test the mean-free normalization on Γ"""
    potential = solver.solve_forward(mesh, ConductivityField.uniform(mesh, 2.0), COS1, basis)

    assert abs(basis.gamma_weights() @ potential.values) < 1e-10

def test_frechet_form_over_domain(mesh, basis, solver, homogeneous_map):
    """Test that the Fréchet form over the whole domain is −Λ(1)"""
    gamma0 = ConductivityField.uniform(mesh)
    frechet = solver.frechet_form(mesh, gamma0, 'all', basis)

    assert np.allclose(frechet, -homogeneous_map.matrix, atol=1e-8)
    assert np.linalg.eigvalsh(solver.frechet_form(mesh, gamma0, HALF_DISK, basis)).max() <= 1e-12
    assert not solver.frechet_form(mesh, gamma0, RegionSpec.disk((5, 5), 0.1), basis).any()

@pytest.mark.parametrize('c0, cinf', [
    (RegionSpec.disk((-0.35, 0), 0.15), None),
    (None, RegionSpec.disk((0.35, 0), 0.15)),
    (RegionSpec.disk((-0.35, 0), 0.15), RegionSpec.disk((0.35, 0), 0.15)),
])
def test_projection_matches_direct_solve(mesh, basis, solver, c0, cinf):
    """Test that the projection path reproduces the direct solution"""
    tagged, field = extreme_field(mesh, 1.0, c0=c0, cinf=cinf)
    f = np.linspace(1.0, -0.5, basis.n_functions)

    direct = solver.solve_forward(tagged, field, f, basis)
    projected = solver.solve_via_projection(tagged, field, f, basis)

    difference = np.linalg.norm(projected.values - direct.values)
    assert difference <= 1e-8 * np.linalg.norm(direct.values)

def test_extension_reproduces_limit_interior(fine_mesh, fine_basis, solver):
    """Test that extending the insulating limit potential gives the interior slope 8/3"""
    tagged, field = extreme_field(fine_mesh, 1.0, c0=HALF_DISK)
    potential = solver.solve_forward(tagged, field, COS1, fine_basis)
    extended = solver.extend_into_insulator(tagged, potential, field)

    assert extended.mesh.n_nodes == fine_mesh.n_nodes
    assert np.array_equal(extended.values[potential.mesh.parent_nodes], potential.values)

    inner = region_mask(fine_mesh, RegionSpec.disk((0, 0), 0.25))
    slope = extended.gradients()[inner, 0].mean() * math.sqrt(math.pi)
    assert slope == pytest.approx(8 / 3, rel=0.01)

def test_extension_error_decays_with_eps(mesh, basis, solver):
    """Test that ‖u_ε − E u‖_H¹ at ε = 0.01 is at most half its value at ε = 0.04"""
    tagged, field = extreme_field(mesh, 1.0, c0=HALF_DISK)
    limit = solver.solve_forward(tagged, field, COS1, basis)
    extended = solver.extend_into_insulator(tagged, limit, field)

    def error(eps):
        truncated = solver.solve_forward(tagged, truncated_conductivity(field, eps), COS1, basis)
        return h1_norm(Potential(tagged, truncated.values - extended.values))

    assert error(0.01) <= 0.5 * error(0.04)

def test_layered_sequence_interior_slope(mesh, basis, solver):
    """Test the ε²/ε layered family at ε = 1e-3 against the interior slope 64/15"""
    eps = 1e-3
    tagged, field = extreme_field(mesh, 1.0, finite=[(RegionSpec.disk((0, 0), 0.25), eps ** 2),
                                                     (RegionSpec.annulus((0, 0), 0.25, 0.5), eps)])
    potential = solver.solve_forward(tagged, field, COS1, basis)

    inner = region_mask(mesh, RegionSpec.disk((0, 0), 0.2))
    slope = potential.gradients()[inner, 0].mean() * math.sqrt(math.pi)
    assert slope == pytest.approx(64 / 15, rel=0.03)
    assert slope - 8 / 3 == pytest.approx(1.6, abs=0.15)

def test_iterative_path_matches_direct():
    """Test the MINRES fallback against the sparse LU path"""
    mesh = generate_disk_mesh(0.2)
    basis = build_boundary_basis(mesh, 'fourier', 2)
    tagged, field = extreme_field(mesh, 1.0, c0=RegionSpec.disk((0, 0), 0.3))

    direct = ForwardSolver().compute_nd_map(tagged, field, basis)
    iterative = ForwardSolver(direct_max_dofs=1).compute_nd_map(tagged, field, basis)

    assert np.allclose(iterative.matrix, direct.matrix, atol=1e-8)

def test_solver_counts_solves(mesh, basis):
    """Test the solve counter"""
    solver = ForwardSolver()
    solver.solve_basis(mesh, ConductivityField.uniform(mesh), basis)

    assert solver.n_solves == basis.n_functions

def test_solver_counts_solves_across_threads():
    """Test that concurrent solves on one solver are all counted"""
    basis = build_boundary_basis(COARSE_MESH, 'fourier', 2)
    field = ConductivityField.uniform(COARSE_MESH)
    solver = ForwardSolver()

    with ThreadPoolExecutor(max_workers=4) as executor:
        list(executor.map(lambda _: solver.solve_basis(COARSE_MESH, field, basis), range(32)))

    assert solver.n_solves == 32 * basis.n_functions

def test_solver_rejects_bad_input(mesh, basis, solver):
    """Test input errors of the forward solver"""
    with pytest.raises(ValidationError):
        solver.solve_forward(mesh, ConductivityField.uniform(mesh), [1.0, 0.0], basis)

    tagged, field = extreme_field(mesh, 1.0, c0=RegionSpec.disk((0.9, 0), 0.2))
    with pytest.raises(AdmissibilityError):
        solver.compute_nd_map(tagged, field, basis)

    with pytest.raises(ValidationError):
        truncated_conductivity(field, 0.0)

    with pytest.raises(ValidationError):
        solver.compute_nd_map(mesh, ConductivityField.uniform(generate_disk_mesh(0.2)), basis)

def test_solver_reports_residual_failure(mesh, basis):
    """Test that an unreachable residual bound raises SolverError"""
    solver = ForwardSolver(rtol=1e-30)

    with pytest.raises(SolverError):
        solver.compute_nd_map(mesh, ConductivityField.uniform(mesh), basis)
