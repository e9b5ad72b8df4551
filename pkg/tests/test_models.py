import json
import math

import numpy as np
import pytest

from eitkit.models.conductivity import ConductivityField, ExtremeKind, NDMap
from eitkit.models.experiment import BoundsSpec, ExperimentConfig
from eitkit.models.layers import CONDUCTING, INSULATING, RadialLayers
from eitkit.models.mesh import Mesh
from eitkit.models.reconstruction import (BoundsReport, BoundTriple, IndefiniteOutcome, IndefinitePhantom,
                                          Pipeline, ReconstructionResult, TestConfig, TestMode, TestOutcome)
from eitkit.models.region import AdmissibilityReport, PixelGrid, RegionSpec
from eitkit.utils.validators import ValidationError


def _square_mesh():
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    triangles = [(0, 1, 2), (0, 2, 3)]
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    return Mesh(nodes, triangles, edges, [True, True, False, False], [0, 5], domain='polygon')


# Regions

def test_region_contains():
    """Test pointwise membership of the region primitives"""
    points = np.array([[0.0, 0.0], [0.5, 0.0], [0.95, 0.0]])

    assert RegionSpec.disk((0, 0), 0.6).contains(points).tolist() == [True, True, False]
    assert RegionSpec.rect((-0.1, -0.1), (0.6, 0.1)).contains(points).tolist() == [True, True, False]
    assert RegionSpec.annulus((0, 0), 0.4, 1.0).contains(points).tolist() == [False, True, True]
    assert RegionSpec.empty().contains(points).tolist() == [False, False, False]
    assert RegionSpec.complement(RegionSpec.disk((0, 0), 0.6)).contains(points).tolist() == [False, False, True]

def test_region_sector():
    """Test that angular limits cut an annulus"""
    sector = RegionSpec.annulus((0, 0), 0.1, 0.2, math.pi / 4, 3 * math.pi / 4)
    points = np.array([[0.0, 0.15], [0.15, 0.0], [0.0, -0.15]])

    assert sector.contains(points).tolist() == [True, False, False]

def test_region_union_collapses_empty_members():
    """Test union construction"""
    disk = RegionSpec.disk((0, 0), 0.3)

    assert RegionSpec.union(RegionSpec.empty(), RegionSpec.empty()).is_empty
    assert RegionSpec.union(disk, RegionSpec.empty()) == disk

    both = RegionSpec.union(disk, RegionSpec.disk((0.5, 0), 0.1))
    assert both.kind == 'union'
    assert both.contains(np.array([[0.55, 0.0]])).tolist() == [True]

def test_region_pixels():
    """Test pixel regions on a grid"""
    grid = PixelGrid(4, 4)
    region = RegionSpec.pixels(grid, [(0, 0), (3, 3)])

    points = np.array([[-0.75, -0.75], [0.75, 0.75], [0.25, 0.25]])
    assert region.contains(points).tolist() == [True, True, False]

    with pytest.raises(ValidationError):
        RegionSpec.pixels(grid, [(4, 0)])
    with pytest.raises(ValidationError):
        RegionSpec.pixels(grid, [(1, 1), (1, 1)])

def test_region_rejects_bad_parameters():
    """Test constructor validation"""
    with pytest.raises(ValidationError):
        RegionSpec.disk((0, 0), 0.0)
    with pytest.raises(ValidationError):
        RegionSpec.rect((0, 0), (0, 1))
    with pytest.raises(ValidationError):
        RegionSpec.annulus((0, 0), 0.5, 0.2)
    with pytest.raises(ValidationError):
        RegionSpec('triangle')

def test_region_dict_and_digest():
    """Test region serialization"""
    region = RegionSpec.union(RegionSpec.disk((-0.35, 0), 0.15),
                              RegionSpec.annulus((0, 0), 0.1, 0.2, 0.5, 1.5))
    restored = RegionSpec.from_dict(json.loads(json.dumps(region.to_dict())))

    assert restored == region
    assert restored.digest() == region.digest()
    assert region.digest() != RegionSpec.disk((-0.35, 0), 0.15).digest()
    assert RegionSpec.disk((0, 0), 0.3).describe() == 'disk(0,0;0.3)'

    with pytest.raises(ValidationError, match='missing field'):
        RegionSpec.from_dict({'kind': 'disk', 'center': [0, 0]})

def test_pixel_grid_geometry():
    """Test pixel centers and cell lookup"""
    grid = PixelGrid(20, 20)
    centers = grid.centers()

    assert grid.shape == (20, 20)
    assert centers.shape == (20, 20, 2)
    assert np.allclose(centers[0, 0], (-0.95, -0.95))
    assert np.allclose(grid.center(19, 0), (0.95, -0.95))

    ix, iy = grid.cell_index(np.array([[-0.95, 0.95], [2.0, 0.0]]))
    assert (ix[0], iy[0]) == (0, 19)
    assert ix[1] >= grid.nx

    with pytest.raises(ValidationError):
        PixelGrid(0, 3)

def test_admissibility_report():
    """Test the failure listing of an admissibility report"""
    report = AdmissibilityReport(disjoint=True, complement_connected=False, strictly_interior=False)

    assert report.ok is False
    assert report.failures() == ('complement_connected', 'strictly_interior')
    assert AdmissibilityReport(True, True, True).ok


# Mesh and fields

def test_mesh_text_exchange():
    """Test the plain-text mesh format"""
    mesh = _square_mesh()
    restored = Mesh.from_text(mesh.to_text(), domain='polygon')

    assert restored.n_nodes == 4
    assert restored.n_elements == 2
    assert restored.digest() == mesh.digest()
    assert restored.on_gamma.tolist() == [True, True, False, False]

    with pytest.raises(ValidationError):
        Mesh.from_text("vertices 4\n")

def test_mesh_geometry():
    """Test areas, region areas and digests"""
    mesh = _square_mesh()

    assert np.allclose(mesh.areas(), [0.5, 0.5])
    assert mesh.region_area(5) == pytest.approx(0.5)
    assert mesh.max_element_diameter() == pytest.approx(math.sqrt(2))

    retagged = mesh.with_regions([0, 0])
    assert retagged.geometry_digest() == mesh.geometry_digest()
    assert retagged.digest() != mesh.digest()

    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 3.0

def test_conductivity_field():
    """Test extreme tags and masks of a conductivity"""
    field = ConductivityField([1.0, 2.0, 1.0], [0, 1, 2],
                              ((1, ExtremeKind.INSULATING), (2, 'conducting')))

    assert field.insulating_mask().tolist() == [False, True, False]
    assert field.conducting_mask().tolist() == [False, False, True]
    assert field.kind_of(0) == ExtremeKind.FINITE
    assert field.is_finite is False
    assert field.inf_bound == 1.0 and field.sup_bound == 2.0
    assert field.scaled(2.0).sup_bound == 4.0
    assert field.digest() != field.with_values([1.0, 2.0, 3.0]).digest()

    with pytest.raises(ValidationError):
        ConductivityField([1.0, 0.0], [0, 0])
    with pytest.raises(ValidationError):
        field.scaled(-1.0)

def test_nd_map_csv():
    """Test ND matrix CSV exchange and spectral distance"""
    nd = NDMap(np.array([[1.0, 0.2], [0.2, 0.5]]), 'fourier:1:abc', {'sym_defect': 1e-14})
    restored = NDMap.from_csv(nd.to_csv())

    assert np.array_equal(restored.matrix, nd.matrix)
    assert restored.basis == nd.basis
    assert nd.spectral_distance(restored) == 0.0
    assert nd.principal(1).size == 1

    with pytest.raises(ValidationError):
        nd.spectral_distance(NDMap(np.eye(2), 'fourier:1:other'))
    with pytest.raises(ValidationError):
        NDMap(np.ones((2, 3)), 'x')

def test_radial_layers():
    """Test layered disk conductivities"""
    layers = RadialLayers.from_pairs([(0.5, INSULATING), (1.0, 1.0)])

    assert layers.n_layers == 2
    assert layers.inner_kind == 'insulating'
    assert layers.with_inner(CONDUCTING).inner_kind == 'conducting'
    assert RadialLayers.from_dict(layers.to_dict()) == layers
    assert layers.to_dict()['values'] == ['insulating', 1.0]

    with pytest.raises(ValidationError):
        RadialLayers((0.5, 0.9), (1.0, 1.0))
    with pytest.raises(ValidationError):
        RadialLayers((0.5, 1.0), (1.0, INSULATING))


# Tests and results

def test_resolve_beta_ranges():
    """Test the beta ranges of the linearized and nonlinear pipelines"""
    assert TestConfig().resolve_beta(2.0, Pipeline.LINEARIZED) == 1.0
    assert TestConfig(beta=2.0).resolve_beta(2.0, Pipeline.LINEARIZED) == 2.0
    assert TestConfig(TestMode.CONDUCTING, beta=5.0).resolve_beta(2.0, Pipeline.NONLINEAR) == 5.0

    with pytest.raises(ValidationError, match='beta < inf'):
        TestConfig(beta=2.0).resolve_beta(2.0, Pipeline.NONLINEAR)
    with pytest.raises(ValidationError, match='beta <= inf'):
        TestConfig(beta=2.5).resolve_beta(2.0, Pipeline.LINEARIZED)
    with pytest.raises(ValidationError):
        TestConfig(beta=-1.0)

def test_test_outcomes():
    """Test the outcome records of the semidefiniteness tests"""
    insulating = TestOutcome(True, -1e-12, tau=1e-10)
    conducting = TestOutcome(False, -0.3, tau=1e-10)

    assert insulating.marginal
    assert tuple(insulating) == (True, -1e-12)

    outcome = IndefiniteOutcome(insulating, conducting)
    assert outcome.passed is False
    assert outcome.witness() == -0.3
    assert IndefiniteOutcome(insulating, conducting, required='insulating').passed
    assert IndefiniteOutcome(insulating, conducting, required='insulating').witness() == -1e-12

def test_indefinite_phantom():
    """Test phantom tagging and contrast checks"""
    phantom = IndefinitePhantom(
        d0=RegionSpec.disk((-0.35, 0), 0.15),
        dinf=RegionSpec.disk((0.35, 0), 0.15),
        dplus=RegionSpec.annulus((0, 0), 0.1, 0.2, math.pi / 4, 3 * math.pi / 4),
        gamma_plus=2.0,
    )

    assert [rid for rid, _ in phantom.tagged_regions()] == [1, 2, 4]
    assert IndefinitePhantom.from_dict(phantom.to_dict()) == phantom
    assert IndefinitePhantom().is_empty
    phantom.check_contrast(1.0, 1.0)

    with pytest.raises(ValidationError, match='above the background'):
        phantom.check_contrast(1.0, 3.0)
    with pytest.raises(ValidationError):
        IndefinitePhantom(dminus=RegionSpec.disk((0, 0), 0.2))

def test_reconstruction_result_export():
    """Test indicator and diagnostic export"""
    grid = PixelGrid(3, 2)
    min_eig = np.array([[0.1, np.nan, -0.2], [0.0, 0.3, -0.1]])
    result = ReconstructionResult(grid, np.array([[1, 0, 0], [1, 1, 0]]), min_eig, method='linearized-insulating')

    assert result.n_inside == 3
    assert result.indicator_csv().splitlines() == ['1,0,0', '1,1,0']
    summary = json.loads(result.to_json())
    assert summary['pixels_inside'] == 3
    assert summary['min_eig_range'] == [-0.2, 0.3]
    assert summary['pixels_marginal'] == 0

    with pytest.raises(ValidationError):
        ReconstructionResult(grid, np.zeros((3, 3)), np.zeros((3, 3)), method='x')

def test_bounds_report():
    """Test violation accounting of a bounds report"""
    report = BoundsReport('finite', [BoundTriple('cos1', -0.5, -0.5, -0.25),
                                     BoundTriple('sin1', -0.5, -0.4, -0.45)], scale=1.0)

    assert report.worst_violation == pytest.approx(0.05)
    assert report.holds() is False

    sign_only = BoundsReport('added_conducting', [BoundTriple('cos1', 0.1, 0.2, 0.0)], scale=1.0, sign_only=True)
    assert sign_only.holds()
    assert BoundsReport('x', [BoundTriple('p', -math.inf, 0.0, 1.0)], 1.0).to_dict()['triples'][0]['lower'] is None


# Experiment configuration

def test_experiment_round_trip(tmp_path):
    """Test saving and loading an experiment file"""
    experiment = ExperimentConfig(
        target_h=0.1,
        phantom=IndefinitePhantom(d0=RegionSpec.disk((0, 0), 0.3)),
        method=Pipeline.NONLINEAR,
        test=TestConfig(TestMode.INSULATING, beta=0.5),
        eps_sweep=(1e-1, 1e-2, 1e-3),
        bounds=BoundsSpec('finite', 1.0, 2.0),
        name='round trip',
    )
    path = tmp_path / 'experiment.json'
    experiment.save(str(path))
    restored = ExperimentConfig.load(str(path))

    assert restored.to_dict() == experiment.to_dict()
    assert restored.method == Pipeline.NONLINEAR
    assert restored.bounds.sigma2 == 2.0

def test_experiment_rejects_bad_sections():
    """Test that errors name the offending section"""
    with pytest.raises(ValidationError, match='Unknown config section'):
        ExperimentConfig.from_dict({'solver': {}})

    with pytest.raises(ValidationError, match='mesh.target_h'):
        ExperimentConfig.from_dict({'mesh': {'target_h': 2.0}})

    with pytest.raises(ValidationError, match='test.beta'):
        ExperimentConfig.from_dict({'test': {'method': 'nonlinear', 'mode': 'insulating', 'beta': 1.0}})

    with pytest.raises(ValidationError, match='test.mode'):
        ExperimentConfig.from_dict({'test': {'method': 'indefinite', 'mode': 'insulating'}})

    with pytest.raises(ValidationError, match='sweeps.eps'):
        ExperimentConfig.from_dict({'sweeps': {'eps': [0.1, 0.01]}})

    with pytest.raises(ValidationError, match='phantom'):
        ExperimentConfig.from_dict({'phantom': {'dplus': {'kind': 'disk', 'center': [0, 0], 'radius': 0.2},
                                                'gamma_plus': 0.5}})

def test_experiment_load_reports_json_position(tmp_path):
    """Test that syntax errors carry line and column"""
    path = tmp_path / 'broken.json'
    path.write_text('{\n  "mesh": {"target_h": 0.1,}\n}\n')

    with pytest.raises(ValidationError, match=r'broken\.json:2:\d+'):
        ExperimentConfig.load(str(path))

    with pytest.raises(ValidationError, match='not found'):
        ExperimentConfig.load(str(tmp_path / 'missing.json'))
