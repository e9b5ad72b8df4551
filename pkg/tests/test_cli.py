import json
import os

import numpy as np
import pytest

from config import config
from eitkit.models.experiment import ExperimentConfig
from eitkit.models.reconstruction import IndefinitePhantom
from eitkit.models.region import RegionSpec
from eitkit.services.experiment_runner import ArtifactWriter, ExperimentRunner
from eitkit.services.image_export import ImageExporter
from eitkit.utils.validators import ValidationError
from main import EXIT_INVALID, EXIT_OK, EXIT_SOLVER, build_parser, main

PHANTOM = {
    'd0': {'kind': 'disk', 'center': [-0.4, 0.0], 'radius': 0.25},
    'dinf': {'kind': 'disk', 'center': [0.4, 0.0], 'radius': 0.25},
}


@pytest.fixture(autouse=True)
def log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(config, 'LOG_FILE', str(tmp_path / 'logs' / 'eitkit.log'))


def _write_config(tmp_path, name='run', **sections):
    data = {
        'mesh': {'target_h': 0.2},
        'basis': {'kind': 'fourier', 'size': 4},
        'phantom': dict(PHANTOM),
        'test': {'method': 'linearized', 'mode': 'insulating'},
        'pixels': {'nx': 8, 'ny': 8},
        'output': {'name': name},
    }
    data.update(sections)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data, indent=2))
    return str(path)


def _summary(directory, name='run'):
    with open(os.path.join(directory, f"{name}_summary.json")) as f:
        return json.load(f)


def test_oracle_command(tmp_path, capsys):
    """Test the closed-form oracle without a config file"""
    out = tmp_path / 'out'

    assert main(['oracle', '--out', str(out), '--variant', 'sigma_hat', '--eps', '0.1', '--modes', '3']) == EXIT_OK

    printed = json.loads(capsys.readouterr().out)
    assert printed['command'] == 'oracle'
    assert printed['files'] == ['experiment_oracle_sigma_hat.csv', 'experiment_summary.json']

    lines = (out / 'experiment_oracle_sigma_hat.csv').read_text().splitlines()
    assert lines[0] == 'k,lambda_k'
    assert len(lines) == 4
    assert _summary(out, 'experiment')['ambiguity_gap'] == pytest.approx(1.6)

def test_reconstruct_writes_declared_files(tmp_path):
    """Test that the summary lists every file the run wrote"""
    out = tmp_path / 'out'

    assert main(['reconstruct', '--config', _write_config(tmp_path), '--out', str(out)]) == EXIT_OK

    summary = _summary(out)
    assert sorted(os.listdir(out)) == summary['files']
    assert 'run_min_eig.pgm' in summary['files']
    assert summary['reconstruction']['method'] == 'linearized-insulating'
    assert (out / 'run_min_eig.pgm').read_bytes().startswith(b"P5\n# min_eig: linear rescale")

    indicator = np.loadtxt(out / 'run_indicator.csv', delimiter=',')
    assert indicator.shape == (8, 8)
    assert set(np.unique(indicator)) <= {0.0, 1.0}

@pytest.mark.parametrize('method, mode', [('nonlinear', 'conducting'), ('indefinite', 'indefinite')])
def test_reconstruct_summary_is_deterministic(tmp_path, method, mode):
    """Test that one and four threads give byte-identical summaries"""
    path = _write_config(tmp_path, test={'method': method, 'mode': mode})

    assert main(['reconstruct', '--config', path, '--out', str(tmp_path / 'a'), '--threads', '1']) == EXIT_OK
    assert main(['reconstruct', '--config', path, '--out', str(tmp_path / 'b'), '--threads', '4']) == EXIT_OK

    first = (tmp_path / 'a' / 'run_summary.json').read_bytes()
    second = (tmp_path / 'b' / 'run_summary.json').read_bytes()
    assert first == second
    assert json.loads(first)['solves'] > 0

def test_reconstruct_indefinite(tmp_path):
    """Test the indefinite method with an explicit dictionary"""
    out = tmp_path / 'out'
    path = _write_config(tmp_path, test={'method': 'indefinite', 'mode': 'indefinite'},
                         dictionary={'regions': [{'kind': 'disk', 'center': [0, 0], 'radius': 0.75}]})

    assert main(['reconstruct', '--config', path, '--out', str(out)]) == EXIT_OK

    reconstruction = _summary(out)['reconstruction']
    assert reconstruction['method'] == 'indefinite-both'
    assert reconstruction['passed_sets'] == ['disk(0,0;0.75)']
    assert reconstruction['vacuous_intersection'] is False

@pytest.mark.parametrize('command', ['mesh', 'forward', 'ndmap'])
def test_basic_commands(tmp_path, command):
    """Test the mesh, forward and ndmap workflows"""
    out = tmp_path / 'out'

    assert main([command, '--config', _write_config(tmp_path), '--out', str(out)]) == EXIT_OK
    assert sorted(os.listdir(out)) == _summary(out)['files']
    assert _summary(out)['command'] == command

def test_verify_bounds_command(tmp_path):
    """Test the bounds workflow for two constant conductivities"""
    out = tmp_path / 'out'
    path = _write_config(tmp_path, bounds={'case': 'finite', 'sigma1': 1.0, 'sigma2': 2.0})

    assert main(['verify-bounds', '--config', path, '--out', str(out)]) == EXIT_OK

    bounds = _summary(out)['bounds']
    assert bounds['holds'] is True
    assert len(bounds['triples']) == 8
    assert (out / 'run_bounds_finite.csv').exists()

def test_refinement_command(tmp_path):
    """Test the mesh refinement table"""
    out = tmp_path / 'out'
    path = _write_config(tmp_path, sweeps={'h': [0.2, 0.1]})

    assert main(['refinement', '--config', path, '--out', str(out)]) == EXIT_OK

    lines = (out / 'run_refinement.csv').read_text().splitlines()
    assert len(lines) == 3
    assert _summary(out)['refinement']['nd_difference'][-1] == 0.0

def test_invalid_config_exit_code(tmp_path, capsys):
    """Test that invalid input exits with code 2"""
    bad_beta = _write_config(tmp_path, name='beta', test={'method': 'nonlinear', 'mode': 'insulating', 'beta': 1.0})
    short_sweep = _write_config(tmp_path, name='sweep', sweeps={'eps': [0.1, 0.01]})

    assert main(['reconstruct', '--config', bad_beta]) == EXIT_INVALID
    assert 'test.beta' in capsys.readouterr().err
    assert main(['convergence', '--config', short_sweep]) == EXIT_INVALID
    assert main(['mesh', '--config', str(tmp_path / 'missing.json')]) == EXIT_INVALID

def test_solver_failure_exit_code(tmp_path, monkeypatch):
    """Test that a solver failure exits with code 3 and leaves no partial artifacts"""
    monkeypatch.setattr(config, 'SOLVER_RTOL', 1e-30)
    out = tmp_path / 'out'

    assert main(['forward', '--config', _write_config(tmp_path), '--out', str(out)]) == EXIT_SOLVER
    assert os.listdir(out) == []

def test_convergence_slope_for_radial_inclusion(tmp_path):
    """Test that the truncation error of an insulating disk decays like ε"""
    experiment = ExperimentConfig(
        target_h=0.2,
        basis_size=2,
        phantom=IndefinitePhantom(d0=RegionSpec.disk((0, 0), 0.5)),
        eps_sweep=(1e-2, 1e-3, 1e-4, 1e-5),
        name='radial',
    )

    summary = ExperimentRunner(experiment, out_dir=str(tmp_path)).run_convergence_study()

    convergence = summary['convergence']
    assert convergence['slope'] == pytest.approx(1.0, abs=0.05)
    assert np.all(np.diff(convergence['nd_difference']) < 0)
    assert summary['files'] == ['radial_convergence.csv', 'radial_summary.json']

def test_convergence_slope_for_mixed_inclusions(tmp_path):
    """Test that a phantom with insulating and conducting parts converges at least like ε^(1/2)"""
    experiment = ExperimentConfig(
        target_h=0.2,
        basis_size=4,
        phantom=IndefinitePhantom.from_dict(PHANTOM),
        eps_sweep=tuple(2.0 ** -n for n in range(3, 10)),
        name='mixed',
    )

    summary = ExperimentRunner(experiment, out_dir=str(tmp_path), threads=2).run_convergence_study()

    assert summary['convergence']['slope'] >= 0.45
    assert len(summary['convergence']['nd_difference']) == 7

def test_convergence_needs_extreme_part(tmp_path):
    """Test that a finite phantom has no limit to converge to"""
    experiment = ExperimentConfig(target_h=0.2, eps_sweep=(1e-1, 1e-2, 1e-3))

    with pytest.raises(ValidationError, match='insulating or conducting part'):
        ExperimentRunner(experiment, out_dir=str(tmp_path)).run_convergence_study()

def test_pgm_header_records_rescale():
    """Test the PGM encoding of a diagnostic grid"""
    encoded = ImageExporter.encode_pgm(np.array([[0.0, 1.0], [np.nan, 2.0]]))

    header, rest = encoded.split(b"\n", 2)[:2], encoded.split(b"\n", 2)[2]
    assert header[0] == b"P5"
    assert header[1].startswith(b"# min_eig: linear rescale, 0 = 0, 255 = 2")
    assert rest.startswith(b"2 2\n255\n")
    assert rest[-4:] == bytes([0, 255, 0, 128])

    with pytest.raises(ValidationError):
        ImageExporter.encode_pgm(np.zeros(4))

def test_artifact_writer_rollback(tmp_path):
    """Test that remove_all deletes every written file"""
    writer = ArtifactWriter(str(tmp_path), 'run')
    writer.write('a.csv', "1\n")
    writer.write('b.pgm', b"P5")
    writer.write_summary({'command': 'test'})

    assert writer.files == ['run_a.csv', 'run_b.pgm', 'run_summary.json']
    assert _summary(tmp_path)['files'] == ['run_a.csv', 'run_b.pgm', 'run_summary.json']

    writer.remove_all()
    assert os.listdir(tmp_path) == []

def test_verbose_flag_before_command():
    """Test that -v ahead of the command enables verbose logging"""
    parser = build_parser()

    assert parser.parse_args(['-v', 'oracle']).verbose is True
    assert parser.parse_args(['-v', 'mesh', '--config', 'run.json']).verbose is True
    assert parser.parse_args(['oracle']).verbose is False

def test_refinement_order_on_homogeneous_disk(tmp_path):
    """Test that ND entries of the homogeneous disk converge at order 1.5 or better"""
    experiment = ExperimentConfig(basis_size=2, h_sweep=(0.2, 0.1, 0.05), name='homogeneous')

    summary = ExperimentRunner(experiment, out_dir=str(tmp_path)).run_refinement_study()

    refinement = summary['refinement']
    assert refinement['observed_order'] >= 1.5
    assert np.all(np.diff(refinement['exact_difference']) < 0)
    assert (tmp_path / 'homogeneous_refinement.csv').read_text().splitlines()[-1].startswith('# observed_order=')
