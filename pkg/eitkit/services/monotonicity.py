"""
Monotonicity tests and shape reconstruction

Semidefiniteness comparisons of ND matrices, the definite (linearized and
nonlinear) and indefinite reconstruction drivers, and a numerical check of
the monotonicity estimates the tests rest on.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigvalsh

from config import config
from eitkit.models.conductivity import ConductivityField, NDMap, Potential
from eitkit.models.mesh import BoundaryBasis, Mesh
from eitkit.models.reconstruction import (BoundsReport, BoundTriple, IndefiniteOutcome, IndefinitePhantom,
                                          Pipeline, ReconstructionResult, TestConfig, TestMode, TestOutcome)
from eitkit.models.region import PixelGrid, RegionSpec
from eitkit.services.forward_solver import ForwardSolver, extreme_field
from eitkit.services.mesh_builder import AdmissibilityError, check_admissibility, is_test_set_admissible
from eitkit.utils.validators import ValidationError, validate_symmetric

logger = logging.getLogger(__name__)

MatrixLike = Union[np.ndarray, NDMap]

BOUND_CASES = ('finite', 'finite_extremes', 'added_conducting', 'added_insulating',
               'insulating_inclusion', 'conducting_inclusion')


# Loewner comparisons

def _matrix(value: MatrixLike) -> np.ndarray:
    return value.matrix if isinstance(value, NDMap) else np.asarray(value, dtype=float)


def loewner_test(a: MatrixLike, b: MatrixLike, tau: float = 0.0) -> TestOutcome:
    """Check A − B ⪰ −τ through the smallest eigenvalue of the symmetric difference"""
    if isinstance(a, NDMap) and isinstance(b, NDMap):
        a.check_compatible(b)

    a, b = _matrix(a), _matrix(b)
    if a.shape != b.shape:
        raise ValidationError(f"Cannot compare matrices of shapes {a.shape} and {b.shape}")
    for name, matrix in (('A', a), ('B', b)):
        is_valid, error = validate_symmetric(matrix)
        if not is_valid:
            raise ValidationError(f"{name}: {error}")

    difference = a - b
    min_eig = float(eigvalsh(0.5 * (difference + difference.T))[0])
    return TestOutcome(passed=min_eig >= -tau, min_eig=min_eig, tau=tau)


def default_tau(background: NDMap, allowance: Optional[float] = None) -> float:
    """Round-off floor scaled by ‖Λ_bg‖₂ plus a discretization allowance"""
    allowance = config.TAU_ALLOWANCE if allowance is None else allowance
    return float(config.TAU_EPS_FACTOR * np.finfo(float).eps * background.norm() + allowance)


def _tau(cfg: TestConfig, background: NDMap, tau: Optional[float]) -> float:
    if tau is not None:
        return tau
    if cfg.tau is not None:
        return cfg.tau
    return default_tau(background, cfg.allowance)


def linearized_definite_test(data: NDMap, background: NDMap, frechet: np.ndarray, cfg: TestConfig,
                             beta: Optional[float] = None, tau: Optional[float] = None) -> TestOutcome:
    """
    Insulating mode: Λ − (Λ(γ₀) − β F_B) ⪰ −τ.
    Conducting mode: (Λ(γ₀) + β F_B) − Λ ⪰ −τ.

    F_B is the Fréchet form −∫_B ∇u_j·∇u_k of the background potentials.
    """
    data.check_compatible(background)
    frechet = np.asarray(frechet, dtype=float)
    if frechet.shape != background.matrix.shape:
        raise ValidationError(f"Fréchet form has shape {frechet.shape}, ND maps are {background.matrix.shape}")

    beta = cfg.beta if beta is None else beta
    if beta is None or not beta > 0:
        raise ValidationError(f"Linearized test needs a positive beta, got {beta}")
    tau = _tau(cfg, background, tau)

    if cfg.mode == TestMode.INSULATING:
        return loewner_test(data.matrix, background.matrix - beta * frechet, tau)
    if cfg.mode == TestMode.CONDUCTING:
        return loewner_test(background.matrix + beta * frechet, data.matrix, tau)
    raise ValidationError("Definite tests run in insulating or conducting mode, not indefinite")


def nonlinear_definite_test(data: NDMap, perturbed: NDMap, cfg: TestConfig,
                            tau: Optional[float] = None) -> TestOutcome:
    """
    Insulating mode: Λ ⪰ Λ(γ₀ − βχ_B) − τ.
    Conducting mode: Λ(γ₀ + βχ_B) ⪰ Λ − τ.
    """
    data.check_compatible(perturbed)
    tau = _tau(cfg, perturbed, tau)

    if cfg.mode == TestMode.INSULATING:
        return loewner_test(data, perturbed, tau)
    if cfg.mode == TestMode.CONDUCTING:
        return loewner_test(perturbed, data, tau)
    raise ValidationError("Definite tests run in insulating or conducting mode, not indefinite")


def indefinite_test(data: NDMap, insulating_map: NDMap, conducting_map: NDMap, tau: float,
                    required: str = 'both') -> IndefiniteOutcome:
    """Two-sided test Λ₀(C) ⪰ Λ ⪰ Λ∞(C); `required` selects a one-sided check"""
    if required not in ('both', 'insulating', 'conducting'):
        raise ValidationError(f"required must be 'both', 'insulating' or 'conducting', got '{required}'")
    data.check_compatible(insulating_map)
    data.check_compatible(conducting_map)

    return IndefiniteOutcome(
        insulating=loewner_test(insulating_map, data, tau),
        conducting=loewner_test(data, conducting_map, tau),
        required=required,
    )


# ND map cache

class NDMapCache:
    """Insert-or-get store of ND maps, safe to share between worker threads"""

    def __init__(self):
        self._maps: Dict[Tuple[str, ...], NDMap] = {}
        self._pending: Dict[Tuple[str, ...], threading.Lock] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(mesh: Mesh, basis: BoundaryBasis, background: ConductivityField,
            region: RegionSpec, kind: str) -> Tuple[str, ...]:
        return (mesh.geometry_digest(), basis.descriptor, background.digest(), region.digest(), kind)

    def get_or_compute(self, key: Tuple[str, ...], compute: Callable[[], NDMap]) -> NDMap:
        """Return the stored map for key; concurrent callers of a missing key wait for one compute"""
        with self._lock:
            if key in self._maps:
                self.hits += 1
                return self._maps[key]
            key_lock = self._pending.setdefault(key, threading.Lock())

        with key_lock:
            with self._lock:
                if key in self._maps:
                    self.hits += 1
                    return self._maps[key]

            value = compute()
            with self._lock:
                self.misses += 1
                self._maps[key] = value
                self._pending.pop(key, None)
            return value

    def __contains__(self, key: Tuple[str, ...]) -> bool:
        with self._lock:
            return key in self._maps

    def __len__(self) -> int:
        with self._lock:
            return len(self._maps)


# Test-set dictionary

def default_dictionary(mesh: Mesh, radii: Sequence[float] = (0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75),
                       lattice: Sequence[float] = (-0.4, 0.0, 0.4),
                       half_widths: Sequence[float] = (0.2, 0.35, 0.5)) -> List[RegionSpec]:
    """
    Heuristic family of test inclusions: disks centered at the origin, smaller
    disks on a coarse center lattice, origin-centered squares and the four
    half-plane slabs of an inner square. Inadmissible candidates are dropped.
    """
    candidates = [RegionSpec.disk((0.0, 0.0), r) for r in radii]
    for x in lattice:
        for y in lattice:
            if x or y:
                candidates.extend(RegionSpec.disk((x, y), r) for r in (0.2, 0.35))
    candidates.extend(RegionSpec.rect((-w, -w), (w, w)) for w in half_widths)
    candidates.extend([
        RegionSpec.rect((-0.6, -0.6), (0.0, 0.6)),
        RegionSpec.rect((0.0, -0.6), (0.6, 0.6)),
        RegionSpec.rect((-0.6, -0.6), (0.6, 0.0)),
        RegionSpec.rect((-0.6, 0.0), (0.6, 0.6)),
    ])

    dictionary, seen = [], set()
    for region in candidates:
        if region.digest() in seen:
            continue
        seen.add(region.digest())
        is_valid, reason = is_test_set_admissible(region, mesh)
        if is_valid:
            dictionary.append(region)
        else:
            logger.debug(f"Dropping test set {region.describe()}: {reason}")

    logger.info(f"Default dictionary holds {len(dictionary)} of {len(candidates)} candidate test sets")
    return dictionary


# Phantoms

def phantom_field(mesh: Mesh, phantom: IndefinitePhantom,
                  gamma0: Union[float, np.ndarray] = 1.0) -> Tuple[Mesh, ConductivityField]:
    """Tag the phantom parts on the mesh and build γ = σ(γ₀ with D_F± overrides, D₀, D∞)"""
    background = np.broadcast_to(np.asarray(gamma0, dtype=float), (mesh.n_elements,))
    phantom.check_contrast(float(background.min()), float(background.max()))

    report = check_admissibility(phantom.d0, phantom.dinf, mesh)
    if not report.ok:
        error_msg = f"Phantom extreme parts are not admissible: {', '.join(report.failures())}"
        logger.error(error_msg)
        raise AdmissibilityError(error_msg)

    return extreme_field(
        mesh, background, c0=phantom.d0, cinf=phantom.dinf,
        finite=[(phantom.dminus, phantom.gamma_minus), (phantom.dplus, phantom.gamma_plus)],
        label='phantom',
    )


# Reconstruction

class MonotonicityReconstructor:
    """Runs the definite and indefinite reconstructions against one background"""

    def __init__(self, mesh: Mesh, gamma0: ConductivityField, basis: BoundaryBasis,
                 solver: Optional[ForwardSolver] = None, cache: Optional[NDMapCache] = None,
                 threads: Optional[int] = None):
        if not gamma0.matches(mesh):
            raise ValidationError("Background conductivity was not built for this mesh")
        if not gamma0.is_finite:
            raise ValidationError("Background conductivity must be finite everywhere")

        self.mesh = mesh
        self.gamma0 = gamma0
        self.basis = basis
        self.solver = solver or ForwardSolver()
        self.cache = cache if cache is not None else NDMapCache()
        self.threads = threads or config.DEFAULT_THREADS
        self._gradients = None

    @property
    def background_map(self) -> NDMap:
        key = NDMapCache.key(self.mesh, self.basis, self.gamma0, RegionSpec.empty(), 'background')
        return self.cache.get_or_compute(key, lambda: self.solver.compute_nd_map(self.mesh, self.gamma0, self.basis))

    @property
    def gradients(self) -> np.ndarray:
        if self._gradients is None:
            self._gradients = self.solver.background_gradients(self.mesh, self.gamma0, self.basis)
        return self._gradients

    def default_tau(self, allowance: Optional[float] = None) -> float:
        return default_tau(self.background_map, allowance)

    def _map(self, function: Callable, items: Iterable) -> List:
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [function(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(function, items))

    def pixel_masks(self, grid: PixelGrid) -> Dict[Tuple[int, int], np.ndarray]:
        """Element mask of every pixel that contains at least one element centroid"""
        ix, iy = grid.cell_index(self.mesh.centroids())
        inside = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
        flat = np.where(inside, iy * grid.nx + ix, -1)

        masks = {}
        for cell in np.unique(flat[inside]):
            masks[(int(cell % grid.nx), int(cell // grid.nx))] = flat == cell
        return masks

    def perturbed_map(self, mask: np.ndarray, beta: float, mode: TestMode) -> NDMap:
        """Λ(γ₀ − βχ_B) in insulating mode, Λ(γ₀ + βχ_B) in conducting mode"""
        sign = -1.0 if TestMode(mode) == TestMode.INSULATING else 1.0
        values = np.array(self.gamma0.values)
        values[mask] += sign * beta
        field = self.gamma0.with_values(values, label=f"{self.gamma0.describe()}{'-' if sign < 0 else '+'}{beta:g}B")
        return self.solver.compute_nd_map(self.mesh, field, self.basis)

    def reconstruct_definite(self, grid: PixelGrid, data: NDMap, pipeline: Pipeline,
                             cfg: TestConfig) -> ReconstructionResult:
        """Test every pixel B against the data; the indicator marks the pixels that pass"""
        pipeline = Pipeline(pipeline)
        if pipeline == Pipeline.INDEFINITE or cfg.mode == TestMode.INDEFINITE:
            raise ValidationError("Definite reconstruction needs the linearized or nonlinear pipeline "
                                  "in insulating or conducting mode")

        background = self.background_map
        data.check_compatible(background)
        beta = cfg.resolve_beta(self.gamma0.inf_bound, pipeline)
        tau = _tau(cfg, background, None)
        masks = self.pixel_masks(grid)

        if pipeline == Pipeline.LINEARIZED:
            gradients = self.gradients

            def evaluate(mask):
                frechet = self.solver.frechet_form(self.mesh, self.gamma0, mask, self.basis, gradients=gradients)
                return linearized_definite_test(data, background, frechet, cfg, beta=beta, tau=tau)
        else:
            def evaluate(mask):
                return nonlinear_definite_test(data, self.perturbed_map(mask, beta, cfg.mode), cfg, tau=tau)

        logger.info(f"Running {pipeline.value} {cfg.mode.value} test on {len(masks)} pixels "
                    f"(beta={beta:g}, tau={tau:.3e}, threads={self.threads})")
        outcomes = self._map(evaluate, masks.values())

        indicator = np.zeros(grid.shape, dtype=np.int8)
        min_eig = np.full(grid.shape, np.nan)
        marginal = np.zeros(grid.shape, dtype=bool)
        for (ix, iy), outcome in zip(masks, outcomes):
            indicator[iy, ix] = outcome.passed
            min_eig[iy, ix] = outcome.min_eig
            marginal[iy, ix] = outcome.marginal

        if marginal.any():
            logger.warning(f"{int(marginal.sum())} pixels passed only within the tolerance")
        logger.info(f"{int(indicator.sum())} of {len(masks)} pixels classified inside")

        return ReconstructionResult(grid, indicator, min_eig, method=f"{pipeline.value}-{cfg.mode.value}",
                                    marginal=marginal, tau=tau)

    def extreme_map(self, region: RegionSpec, kind: str) -> NDMap:
        """Λ₀(C) for kind 'insulating', Λ∞(C) for kind 'conducting', both on the background γ₀"""
        if kind not in ('insulating', 'conducting'):
            raise ValidationError(f"kind must be 'insulating' or 'conducting', got '{kind}'")

        def compute():
            c0, cinf = (region, None) if kind == 'insulating' else (None, region)
            tagged, field = extreme_field(self.mesh, self.gamma0.values, c0=c0, cinf=cinf,
                                          label=f"{kind}:{region.describe()}")
            return self.solver.compute_nd_map(tagged, field, self.basis)

        return self.cache.get_or_compute(NDMapCache.key(self.mesh, self.basis, self.gamma0, region, kind), compute)

    def reconstruct_indefinite(self, dictionary: Sequence[RegionSpec], data: NDMap, grid: PixelGrid,
                               tau: Optional[float] = None, required: str = 'both') -> ReconstructionResult:
        """
        Intersect the pixelized masks of the test sets C with Λ₀(C) ⪰ Λ ⪰ Λ∞(C).

        `min_eig` holds the exclusion witness of every pixel: the largest
        witness among the test sets that leave the pixel out (NaN when every
        set contains it). A pixel is outside iff that witness is at least −τ.
        """
        dictionary = list(dictionary)
        if not dictionary:
            raise ValidationError("Test-set dictionary is empty")
        for region in dictionary:
            is_valid, reason = is_test_set_admissible(region, self.mesh)
            if not is_valid:
                logger.error(f"Inadmissible test set: {reason}")
                raise ValidationError(f"Inadmissible test set: {reason}")

        background = self.background_map
        data.check_compatible(background)
        tau = default_tau(background) if tau is None else tau

        def evaluate(region):
            return indefinite_test(data, self.extreme_map(region, 'insulating'),
                                   self.extreme_map(region, 'conducting'), tau, required)

        logger.info(f"Running indefinite test ({required}) on {len(dictionary)} test sets (tau={tau:.3e})")
        outcomes = self._map(evaluate, dictionary)

        centers = grid.centers().reshape(-1, 2)
        excluded = np.zeros(len(centers), dtype=bool)
        robustly_excluded = np.zeros(len(centers), dtype=bool)
        witness = np.full(len(centers), np.nan)
        passed_sets, tests = [], []

        for region, outcome in zip(dictionary, outcomes):
            outside = ~region.contains(centers)
            witness[outside] = np.fmax(witness[outside], outcome.witness())
            if outcome.passed:
                passed_sets.append(region.describe())
                excluded |= outside
                if not outcome.marginal:
                    robustly_excluded |= outside
            tests.append({
                'region': region.describe(),
                'passed': outcome.passed,
                'marginal': outcome.marginal,
                'min_eig_insulating': outcome.insulating.min_eig,
                'min_eig_conducting': outcome.conducting.min_eig,
            })

        vacuous = not passed_sets
        if vacuous:
            logger.warning("No test set passed; the intersection is vacuous and covers the whole grid")
        logger.info(f"{len(passed_sets)} of {len(dictionary)} test sets passed "
                    f"(cache: {self.cache.hits} hits, {self.cache.misses} misses)")

        return ReconstructionResult(
            grid,
            indicator=(~excluded).reshape(grid.shape),
            min_eig=witness.reshape(grid.shape),
            method=f"indefinite-{required}",
            marginal=(excluded & ~robustly_excluded).reshape(grid.shape),
            vacuous=vacuous,
            passed_sets=passed_sets,
            tau=tau,
            tests=tests,
        )


# Verification of the monotonicity estimates

@dataclass
class _Configuration:
    """ND map and basis potentials of one conductivity configuration"""
    mesh: Mesh
    field: ConductivityField
    nd: NDMap
    potentials: List[Potential]

    @property
    def solve_mesh(self) -> Mesh:
        return self.potentials[0].mesh

    def gradients(self) -> np.ndarray:
        return np.stack([p.gradients() for p in self.potentials], axis=1)

    def on_solve_mesh(self, full_values: np.ndarray) -> np.ndarray:
        mesh = self.solve_mesh
        return full_values[mesh.parent_elements] if mesh.is_carved else full_values


def _configuration(solver: ForwardSolver, mesh: Mesh, basis: BoundaryBasis, background: np.ndarray,
                   c0: Optional[RegionSpec] = None, cinf: Optional[RegionSpec] = None) -> _Configuration:
    tagged, field = extreme_field(mesh, background, c0=c0, cinf=cinf)
    return _Configuration(tagged, field, solver.compute_nd_map(tagged, field, basis),
                          solver.solve_basis(tagged, field, basis))


def _quadratic_form(mesh: Mesh, gradients: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Matrix of ∫ w ∇u_j·∇u_k for element-wise constant w"""
    return np.einsum('t,tjd,tkd->jk', weights * mesh.areas(), gradients, gradients)


def _require(case: str, **inputs) -> None:
    missing = [name for name, value in inputs.items() if value is None or getattr(value, 'is_empty', False)]
    if missing:
        raise ValidationError(f"Bounds case '{case}' needs {', '.join(missing)}")


def verify_monotonicity_bounds(case: str, mesh: Mesh, basis: BoundaryBasis,
                               sigma1: Union[float, np.ndarray] = 1.0,
                               sigma2: Optional[Union[float, np.ndarray]] = None,
                               c0: Optional[RegionSpec] = None, cinf: Optional[RegionSpec] = None,
                               probes: Optional[np.ndarray] = None,
                               solver: Optional[ForwardSolver] = None) -> BoundsReport:
    """
    Evaluate lower <= middle <= upper of a monotonicity estimate for each probe density.

    finite                ς₁ = sigma1, ς₂ = sigma2; middle ⟨(Λ(ς₂) − Λ(ς₁))f,f⟩
    finite_extremes       as finite, both with the extreme inclusions c0 and cinf
    added_conducting      ς = sigma1; middle ⟨(Λ_{C₀,∅} − Λ_{C₀,C∞})f,f⟩, upper up to a constant
    added_insulating      ς = sigma1; middle ⟨(Λ_{C₀,C∞} − Λ_{∅,C∞})f,f⟩
    insulating_inclusion  ς = sigma1, γ₀ = sigma2, D = c0; middle ⟨(Λ₀(D) − Λ(ς))f,f⟩
    conducting_inclusion  ς = sigma1, γ₀ = sigma2, D = cinf; middle ⟨(Λ(ς) − Λ∞(D))f,f⟩, upper up to a constant

    `probes` holds coefficient vectors in the basis as rows (default: the basis itself).
    """
    if case not in BOUND_CASES:
        raise ValidationError(f"Unknown bounds case '{case}', expected one of {BOUND_CASES}")
    solver = solver or ForwardSolver()

    m = basis.n_functions
    if probes is None:
        probes, labels = np.eye(m), list(basis.labels)
    else:
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        if probes.shape[1] != m:
            raise ValidationError(f"Probe vectors have {probes.shape[1]} entries, basis has {m}")
        labels = [f"probe{i}" for i in range(len(probes))]

    def full(values):
        return np.broadcast_to(np.asarray(values, dtype=float), (mesh.n_elements,)).copy()

    def region_on(config_, region):
        return config_.on_solve_mesh(region.contains(config_.mesh.centroids()))

    def extended_gradients(config_):
        extended = [solver.extend_into_insulator(config_.mesh, p, config_.field) for p in config_.potentials]
        return np.stack([p.gradients() for p in extended], axis=1)

    s1 = full(sigma1)
    lower_form = upper_form = constant_form = None
    sign_only = False

    if case in ('finite', 'finite_extremes'):
        _require(case, sigma2=sigma2)
        if case == 'finite':
            c0 = cinf = None
        s2 = full(sigma2)
        first = _configuration(solver, mesh, basis, s1, c0, cinf)
        second = _configuration(solver, mesh, basis, s2, c0, cinf)
        middle = second.nd.matrix - first.nd.matrix

        # gradients vanish on C∞ and C₀ is carved away, so the integrals run over Ω∖C
        w1, w2 = second.on_solve_mesh(s1), second.on_solve_mesh(s2)
        grads = second.gradients()
        lower_form = _quadratic_form(second.solve_mesh, grads, w2 / w1 * (w1 - w2))
        upper_form = _quadratic_form(second.solve_mesh, grads, w1 - w2)
        scale = max(first.nd.norm(), second.nd.norm())

    elif case == 'added_conducting':
        _require(case, cinf=cinf)
        first = _configuration(solver, mesh, basis, s1, c0, None)
        second = _configuration(solver, mesh, basis, s1, c0, cinf)
        middle = first.nd.matrix - second.nd.matrix

        in_cinf = region_on(first, cinf).astype(float)
        grads = first.gradients()
        lower_form = _quadratic_form(first.solve_mesh, grads, first.on_solve_mesh(s1) * in_cinf)
        constant_form = _quadratic_form(first.solve_mesh, grads, in_cinf)
        upper_form = np.zeros((m, m))
        sign_only = True
        scale = max(first.nd.norm(), second.nd.norm())

    elif case == 'added_insulating':
        _require(case, c0=c0)
        first = _configuration(solver, mesh, basis, s1, None, cinf)
        second = _configuration(solver, mesh, basis, s1, c0, cinf)
        middle = second.nd.matrix - first.nd.matrix

        weights = np.where(c0.contains(mesh.centroids()), s1, 0.0)
        lower_form = _quadratic_form(first.solve_mesh, first.gradients(), first.on_solve_mesh(weights))
        upper_form = _quadratic_form(second.mesh, extended_gradients(second), weights)
        scale = max(first.nd.norm(), second.nd.norm())

    elif case == 'insulating_inclusion':
        _require(case, sigma2=sigma2, c0=c0)
        g0 = full(sigma2)
        perturbed = _configuration(solver, mesh, basis, s1)
        insulated = _configuration(solver, mesh, basis, g0, c0, None)
        middle = insulated.nd.matrix - perturbed.nd.matrix

        in_d = c0.contains(mesh.centroids())
        upper_form = _quadratic_form(insulated.mesh, extended_gradients(insulated), np.where(in_d, s1, s1 - g0))
        scale = max(perturbed.nd.norm(), insulated.nd.norm())

    else:
        _require(case, sigma2=sigma2, cinf=cinf)
        g0 = full(sigma2)
        background = _configuration(solver, mesh, basis, g0)
        perturbed = _configuration(solver, mesh, basis, s1)
        conducting = _configuration(solver, mesh, basis, g0, None, cinf)
        middle = perturbed.nd.matrix - conducting.nd.matrix

        grads = background.gradients()
        upper_form = _quadratic_form(background.solve_mesh, grads, g0 / s1 * (g0 - s1))
        constant_form = _quadratic_form(background.solve_mesh, grads, cinf.contains(mesh.centroids()).astype(float))
        sign_only = True
        scale = max(perturbed.nd.norm(), conducting.nd.norm())

    def evaluate(form):
        if form is None:
            return np.full(len(probes), -np.inf)
        return np.einsum('pj,jk,pk->p', probes, form, probes)

    lower, mid, upper = evaluate(lower_form), evaluate(middle), evaluate(upper_form)
    triples = [BoundTriple(label, float(lo), float(mi), float(up))
               for label, lo, mi, up in zip(labels, lower, mid, upper)]

    implied = None
    if constant_form is not None:
        implied = _implied_constant(mid - upper, evaluate(constant_form), scale)

    report = BoundsReport(case, triples, scale=scale, sign_only=sign_only, implied_constant=implied)
    logger.info(f"Bounds {case}: worst violation {report.worst_violation:.3e} at scale {scale:.3e}"
                + (f", implied constant {implied:.4g}" if implied is not None else ""))
    return report


def _implied_constant(excess: np.ndarray, gradient_energy: np.ndarray, scale: float, rtol: float = 1e-9) -> float:
    """Smallest K >= 0 with excess <= K * gradient_energy on every probe (inf if none exists)"""
    positive = excess > rtol * scale
    if not positive.any():
        return 0.0
    if np.any(gradient_energy[positive] <= rtol * scale):
        return float('inf')
    return float((excess[positive] / gradient_energy[positive]).max())
