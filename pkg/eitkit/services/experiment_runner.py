"""
Experiment runner

Turns an ExperimentConfig into artifacts: mesh, ND matrices, reconstruction
grids and images, convergence tables and a deterministic summary.json that
declares every file written.
"""

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import config
from eitkit.models.conductivity import ConductivityField, NDMap
from eitkit.models.experiment import ExperimentConfig
from eitkit.models.mesh import BoundaryBasis, Mesh
from eitkit.models.reconstruction import Pipeline
from eitkit.services import disk_oracle
from eitkit.services.forward_solver import ForwardSolver, dirichlet_energy, truncated_conductivity
from eitkit.services.image_export import ImageExporter
from eitkit.services.mesh_builder import build_boundary_basis, generate_disk_mesh, restrict_gamma
from eitkit.services.monotonicity import (MonotonicityReconstructor, default_dictionary, default_tau, phantom_field,
                                          verify_monotonicity_bounds)
from eitkit.utils.validators import ValidationError, sanitize_filename, validate_decreasing

logger = logging.getLogger(__name__)

SLOPE_POINTS = 4


class ArtifactWriter:
    """Serialized writer that remembers every file so a failed run can be rolled back"""

    def __init__(self, directory: str, prefix: str):
        self.directory = directory
        self.prefix = sanitize_filename(prefix)
        self.files: List[str] = []
        self._lock = threading.Lock()
        os.makedirs(directory, exist_ok=True)

    def name(self, suffix: str) -> str:
        return f"{self.prefix}_{suffix}"

    def write(self, suffix: str, content) -> str:
        filename = self.name(suffix)
        mode = 'wb' if isinstance(content, bytes) else 'w'
        with self._lock:
            with open(os.path.join(self.directory, filename), mode) as f:
                f.write(content)
            self.files.append(filename)
        logger.debug(f"Wrote {filename}")
        return filename

    def write_summary(self, summary: Dict[str, Any]) -> str:
        """Write summary.json listing every artifact, itself included"""
        filename = self.name('summary.json')
        summary = dict(summary, files=sorted(self.files + [filename]))
        return self.write('summary.json', json.dumps(summary, indent=2, sort_keys=True) + "\n")

    def remove_all(self) -> None:
        with self._lock:
            for filename in self.files:
                path = os.path.join(self.directory, filename)
                if os.path.exists(path):
                    os.remove(path)
            if self.files:
                logger.warning(f"Removed {len(self.files)} partial artifacts from {self.directory}")
            self.files = []


def _convergence_slope(eps: np.ndarray, differences: np.ndarray) -> float:
    """Least-squares log-log slope over the last SLOPE_POINTS points"""
    eps, differences = eps[-SLOPE_POINTS:], differences[-SLOPE_POINTS:]
    if np.any(differences <= 0):
        return float('nan')
    return float(np.polyfit(np.log(eps), np.log(differences), 1)[0])


class ExperimentRunner:
    """Runs the command-line workflows for one experiment configuration"""

    def __init__(self, experiment: ExperimentConfig, out_dir: Optional[str] = None,
                 threads: Optional[int] = None, solver: Optional[ForwardSolver] = None):
        self.experiment = experiment
        self.out_dir = out_dir or experiment.output_dir or config.OUTPUT_DIR
        self.threads = threads or config.DEFAULT_THREADS
        self.solver = solver or ForwardSolver()

    # Building blocks

    def build_mesh(self, target_h: Optional[float] = None) -> Tuple[Mesh, BoundaryBasis]:
        exp = self.experiment
        mesh = generate_disk_mesh(target_h or exp.target_h)
        if exp.gamma_arc is not None:
            mesh = restrict_gamma(mesh, *exp.gamma_arc)
        return mesh, build_boundary_basis(mesh, exp.basis_kind, exp.basis_size)

    def build_phantom(self, mesh: Mesh) -> Tuple[Mesh, ConductivityField]:
        return phantom_field(mesh, self.experiment.phantom, self.experiment.background)

    def _base_summary(self, command: str, mesh: Mesh, basis: BoundaryBasis) -> Dict[str, Any]:
        return {
            'command': command,
            'config': self.experiment.to_dict(),
            'mesh': {
                'digest': mesh.geometry_digest(),
                'nodes': mesh.n_nodes,
                'elements': mesh.n_elements,
                'max_element_diameter': mesh.max_element_diameter(),
            },
            'basis': basis.to_dict(),
        }

    def _run(self, command: str, body) -> Dict[str, Any]:
        """Run body(writer) and write its summary; on any failure remove what was written"""
        writer = ArtifactWriter(self.out_dir, self.experiment.name)
        try:
            summary = body(writer)
            writer.write_summary(summary)
        except Exception:
            logger.error(f"'{command}' failed; rolling back artifacts")
            writer.remove_all()
            raise
        logger.info(f"'{command}' wrote {len(writer.files)} files to {self.out_dir}")
        return dict(summary, files=sorted(writer.files))

    # Commands

    def run_mesh(self) -> Dict[str, Any]:
        def body(writer):
            mesh, basis = self.build_mesh()
            tagged, field = self.build_phantom(mesh)
            writer.write('mesh.txt', tagged.to_text())
            summary = self._base_summary('mesh', tagged, basis)
            summary['regions'] = {str(rid): tagged.region_area(rid) for rid in sorted(set(tagged.element_region.tolist())) if rid}
            return summary

        return self._run('mesh', body)

    def run_forward(self) -> Dict[str, Any]:
        """Potentials of the phantom for every basis function, extended over C₀ onto the full mesh"""
        def body(writer):
            mesh, basis = self.build_mesh()
            tagged, field = self.build_phantom(mesh)
            writer.write('mesh.txt', tagged.to_text())
            energies = {}
            for label, potential in zip(basis.labels, self.solver.solve_basis(tagged, field, basis)):
                extended = self.solver.extend_into_insulator(tagged, potential, field)
                writer.write(f"potential_{label}.csv", extended.to_csv())
                energies[label] = dirichlet_energy(potential, field)
            summary = self._base_summary('forward', tagged, basis)
            summary['energies'] = energies
            summary['solves'] = self.solver.n_solves
            return summary

        return self._run('forward', body)

    def _nd_maps(self, mesh: Mesh, basis: BoundaryBasis) -> Tuple[Mesh, ConductivityField, NDMap, NDMap]:
        tagged, field = self.build_phantom(mesh)
        data = self.solver.compute_nd_map(tagged, field, basis)
        gamma0 = ConductivityField.uniform(mesh, self.experiment.background, label='background')
        background = self.solver.compute_nd_map(mesh, gamma0, basis)
        return tagged, field, data, background

    def run_ndmap(self) -> Dict[str, Any]:
        def body(writer):
            mesh, basis = self.build_mesh()
            tagged, _, data, background = self._nd_maps(mesh, basis)
            writer.write('nd_data.csv', data.to_csv())
            writer.write('nd_background.csv', background.to_csv())
            summary = self._base_summary('ndmap', tagged, basis)
            summary['nd'] = {'data': data.to_dict(), 'background': background.to_dict(),
                             'spectral_distance': data.spectral_distance(background)}
            return summary

        return self._run('ndmap', body)

    def run_experiment(self) -> Dict[str, Any]:
        """Synthesize data for the phantom, reconstruct with the configured method and export everything"""
        exp = self.experiment

        def body(writer):
            mesh, basis = self.build_mesh()
            tagged, _, data, _ = self._nd_maps(mesh, basis)
            gamma0 = ConductivityField.uniform(mesh, exp.background, label='background')
            reconstructor = MonotonicityReconstructor(mesh, gamma0, basis, self.solver, threads=self.threads)
            background = reconstructor.background_map

            if exp.method == Pipeline.INDEFINITE:
                dictionary = list(exp.dictionary) if exp.dictionary is not None else default_dictionary(mesh)
                tau = exp.test.tau if exp.test.tau is not None else default_tau(background, exp.test.allowance)
                result = reconstructor.reconstruct_indefinite(dictionary, data, exp.pixels, tau=tau,
                                                              required=exp.required)
            else:
                result = reconstructor.reconstruct_definite(exp.pixels, data, exp.method, exp.test)

            writer.write('mesh.txt', tagged.to_text())
            writer.write('nd_data.csv', data.to_csv())
            writer.write('nd_background.csv', background.to_csv())
            writer.write('indicator.csv', result.indicator_csv())
            writer.write('min_eig.csv', result.min_eig_csv())
            if exp.write_pgm:
                writer.write('min_eig.pgm', ImageExporter.encode_pgm(result.min_eig))

            summary = self._base_summary('reconstruct', tagged, basis)
            summary['reconstruction'] = result.to_dict()
            summary['solves'] = self.solver.n_solves
            return summary

        return self._run('reconstruct', body)

    def run_convergence_study(self) -> Dict[str, Any]:
        """Table of ‖ND(σ_ε) − ND(σ)‖₂ over the ε sweep with the fitted log-log slope"""
        exp = self.experiment
        is_valid, error = validate_decreasing('sweeps.eps', exp.eps_sweep, 3)
        if not is_valid:
            raise ValidationError(error)
        if exp.phantom.d0.is_empty and exp.phantom.dinf.is_empty:
            raise ValidationError("Convergence study needs an insulating or conducting part in the phantom")

        def body(writer):
            mesh, basis = self.build_mesh()
            tagged, field = self.build_phantom(mesh)
            limit = self.solver.compute_nd_map(tagged, field, basis)

            def difference(eps):
                truncated = self.solver.compute_nd_map(tagged, truncated_conductivity(field, eps), basis)
                return truncated.spectral_distance(limit)

            eps = np.array(exp.eps_sweep)
            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as executor:
                    differences = np.array(list(executor.map(difference, eps)))
            else:
                differences = np.array([difference(e) for e in eps])
            slope = _convergence_slope(eps, differences)

            lines = ["eps,nd_difference"]
            lines.extend(f"{e:.17g},{d:.17g}" for e, d in zip(eps, differences))
            lines.append(f"# slope={slope:.6f} over the last {min(SLOPE_POINTS, len(eps))} points")
            writer.write('convergence.csv', "\n".join(lines) + "\n")

            logger.info(f"Convergence study: slope {slope:.4f} over eps {eps[0]:g}..{eps[-1]:g}")
            summary = self._base_summary('convergence', tagged, basis)
            summary['convergence'] = {'eps': eps.tolist(), 'nd_difference': differences.tolist(), 'slope': slope}
            return summary

        return self._run('convergence', body)

    def run_refinement_study(self) -> Dict[str, Any]:
        """ND map of the phantom on every mesh of the h sweep, compared with the finest one"""
        exp = self.experiment
        is_valid, error = validate_decreasing('sweeps.h', exp.h_sweep, 2)
        if not is_valid:
            raise ValidationError(error)
        if exp.basis_kind != 'fourier':
            raise ValidationError("Refinement study compares maps across meshes and needs the Fourier basis")

        def body(writer):
            maps, sizes = [], []
            for h in exp.h_sweep:
                mesh, basis = self.build_mesh(h)
                tagged, field = self.build_phantom(mesh)
                maps.append(self.solver.compute_nd_map(tagged, field, basis).matrix)
                sizes.append((mesh.n_nodes, mesh.max_element_diameter()))

            finest = maps[-1]
            differences = [float(np.linalg.norm(m - finest, 2)) for m in maps]
            h = np.array(exp.h_sweep, dtype=float)
            refinement = {'h': list(exp.h_sweep), 'nd_difference': differences}

            if exp.phantom.is_empty:
                # homogeneous disk: exact map is diag(1/k) / background
                modes = np.repeat(np.arange(1, exp.basis_size + 1), 2)
                exact = np.diag(1.0 / (modes * exp.background))
                exact_differences = np.array([np.linalg.norm(m - exact, 2) for m in maps])
                refinement['exact_difference'] = exact_differences.tolist()
                refinement['observed_order'] = _convergence_slope(h, exact_differences)
            elif len(h) >= 3:
                refinement['observed_order'] = _convergence_slope(h[:-1], np.array(differences[:-1]))

            lines = ["h,nodes,max_diameter,nd_difference"]
            lines.extend(f"{step:.17g},{n},{d:.17g},{diff:.17g}"
                         for step, (n, d), diff in zip(exp.h_sweep, sizes, differences))
            if 'observed_order' in refinement:
                lines.append(f"# observed_order={refinement['observed_order']:.6f}")
            writer.write('refinement.csv', "\n".join(lines) + "\n")

            if 'observed_order' in refinement:
                logger.info(f"Refinement study: observed order {refinement['observed_order']:.4f}")
            summary = {'command': 'refinement', 'config': exp.to_dict(), 'refinement': refinement}
            return summary

        return self._run('refinement', body)

    def run_bounds(self) -> Dict[str, Any]:
        spec = self.experiment.bounds
        if spec is None:
            raise ValidationError("bounds: section is required for verify-bounds")

        def body(writer):
            mesh, basis = self.build_mesh()
            report = verify_monotonicity_bounds(spec.case, mesh, basis, sigma1=spec.sigma1, sigma2=spec.sigma2,
                                                c0=spec.c0, cinf=spec.cinf, solver=self.solver)
            lines = ["probe,lower,middle,upper"]
            lines.extend(f"{t.probe},{t.lower:.17g},{t.middle:.17g},{t.upper:.17g}" for t in report.triples)
            writer.write(f"bounds_{spec.case}.csv", "\n".join(lines) + "\n")

            summary = self._base_summary('verify-bounds', mesh, basis)
            summary['bounds'] = report.to_dict()
            summary['bounds']['holds'] = report.holds()
            return summary

        return self._run('verify-bounds', body)

    def run_oracle(self, variant: str = 'sigma', eps: float = 0.0, max_mode: int = 8) -> Dict[str, Any]:
        """Closed-form disk values: per-mode ND eigenvalues of the layered family and the ambiguity gap"""
        layers = disk_oracle.layered_family(variant, eps)

        def body(writer):
            lines = ["k,lambda_k"]
            eigenvalues = [disk_oracle.radial_nd_eigenvalue(layers, k) for k in range(1, max_mode + 1)]
            lines.extend(f"{k},{lam:.17g}" for k, lam in enumerate(eigenvalues, start=1))
            writer.write(f"oracle_{variant}.csv", "\n".join(lines) + "\n")
            return {
                'command': 'oracle',
                'variant': variant,
                'eps': eps,
                'layers': layers.to_dict(),
                'eigenvalues': eigenvalues,
                'coefficients': [list(c) for c in disk_oracle.layered_family_coefficients(variant, eps)],
                'ambiguity_gap': disk_oracle.limit_ambiguity_gap(),
            }

        return self._run('oracle', body)
