import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from config import config
from eitkit.models.mesh import BoundaryBasis, Mesh
from eitkit.models.region import AdmissibilityReport, RegionSpec
from eitkit.utils.validators import ValidationError, validate_target_h

logger = logging.getLogger(__name__)

BASIS_KINDS = ('fourier', 'edge_piecewise')


class MeshError(Exception):
    """Custom exception for mesh construction errors"""
    pass


class MeshResourceError(MeshError):
    """Requested mesh exceeds the configured node budget"""
    pass


class RegionConflictError(MeshError):
    """Two tagged regions claim the same element"""
    pass


class AdmissibilityError(MeshError):
    """Geometry violates the admissibility assumptions"""
    pass


class UnsupportedConfigurationError(MeshError):
    """Valid input that this toolkit does not handle"""
    pass


# Edge and adjacency helpers

def _local_edges(triangles: np.ndarray) -> np.ndarray:
    """Oriented half-edges of every triangle, shape (3T, 2)"""
    return triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)


def _edge_table(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique undirected edges, inverse index of every half-edge, and use counts"""
    keys = np.sort(_local_edges(triangles), axis=1)
    unique, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return unique, inverse.reshape(-1), counts


def element_adjacency(triangles: np.ndarray) -> coo_matrix:
    """Symmetric element graph: two triangles are adjacent when they share an edge"""
    n_elements = len(triangles)
    _, inverse, _ = _edge_table(triangles)
    owner = np.arange(3 * n_elements) // 3

    order = np.argsort(inverse, kind='stable')
    sorted_edges = inverse[order]
    shared = np.flatnonzero(sorted_edges[1:] == sorted_edges[:-1])
    a = owner[order[shared]]
    b = owner[order[shared + 1]]

    data = np.ones(2 * len(a))
    return coo_matrix((data, (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n_elements, n_elements))


def _count_components(adjacency: coo_matrix, mask: np.ndarray) -> int:
    """Number of connected components of the elements selected by mask"""
    selected = np.flatnonzero(mask)
    if len(selected) == 0:
        return 0
    sub = adjacency.tocsr()[selected][:, selected]
    n_components, _ = connected_components(sub, directed=False)
    return n_components


def _gamma_chain(edges: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Order oriented Γ edges along the boundary.

    Returns the edge order and the number of separate chains; a single
    chain means Γ is connected.
    """
    next_edge = {int(a): e for e, (a, _) in enumerate(edges)}
    ends = {int(b) for _, b in edges}
    starts = [e for e, (a, _) in enumerate(edges) if int(a) not in ends]

    order: List[int] = []
    visited = np.zeros(len(edges), dtype=bool)
    n_chains = 0
    for seed in starts + list(range(len(edges))):
        if visited[seed]:
            continue
        n_chains += 1
        e = seed
        while e is not None and not visited[e]:
            visited[e] = True
            order.append(e)
            e = next_edge.get(int(edges[e][1]))
    return np.array(order, dtype=np.int64), n_chains


# Mesh generation

def _ring_count(target_h: float) -> int:
    """
    Number of rings for a disk mesh: the smallest power of two >= 1.25 / target_h.

    Halving target_h doubles the ring count, so the 6·n² triangles quadruple.
    From four rings on (target_h < 0.625) r = 1/4 and r = 1/2 are ring circles.
    """
    required = 1.25 / target_h
    n = 1
    while n < required:
        n *= 2
    return n


def _check_budget(n_nodes: int) -> None:
    if n_nodes > config.MAX_MESH_NODES:
        error_msg = f"Mesh would need {n_nodes} nodes, budget is {config.MAX_MESH_NODES}"
        logger.error(error_msg)
        raise MeshResourceError(error_msg)


def _orient(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    negative = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    triangles[negative] = triangles[negative][:, [0, 2, 1]]
    return triangles


def generate_disk_mesh(target_h: float) -> Mesh:
    """
    Deterministic mesh of the unit disk built from concentric rings.

    Ring i (1..n) sits at radius i/n and carries 6i equally spaced nodes;
    neighbouring rings are stitched by walking both rings in angle order.
    Boundary nodes lie exactly on the unit circle and every boundary edge is
    flagged as part of Γ.
    """
    is_valid, error = validate_target_h(target_h)
    if not is_valid:
        raise ValidationError(error)

    n = _ring_count(float(target_h))
    _check_budget(1 + 3 * n * (n + 1))

    nodes = [(0.0, 0.0)]
    ring_start = [0]
    for i in range(1, n + 1):
        ring_start.append(len(nodes))
        radius = 1.0 if i == n else i / n
        angles = 2.0 * np.pi * np.arange(6 * i) / (6 * i)
        nodes.extend(zip(radius * np.cos(angles), radius * np.sin(angles)))

    triangles = []
    for k in range(6):
        triangles.append((0, 1 + k, 1 + (k + 1) % 6))

    for i in range(2, n + 1):
        m, p = 6 * (i - 1), 6 * i
        inner, outer = ring_start[i - 1], ring_start[i]
        j = k = 0
        while j < m or k < p:
            if k < p and (j == m or (k + 1) * m <= (j + 1) * p):
                triangles.append((inner + j % m, outer + k, outer + (k + 1) % p))
                k += 1
            else:
                triangles.append((inner + j % m, outer + k % p, inner + (j + 1) % m))
                j += 1

    nodes = np.array(nodes)
    triangles = _orient(nodes, np.array(triangles, dtype=np.int64))
    boundary = ring_start[n] + np.arange(6 * n)
    boundary_edges = np.stack([boundary, np.roll(boundary, -1)], axis=1)

    mesh = Mesh(nodes, triangles, boundary_edges, np.ones(len(boundary_edges), dtype=bool),
                np.zeros(len(triangles), dtype=np.int64), domain='disk')
    logger.info(f"Generated disk mesh: {n} rings, {mesh.n_nodes} nodes, {mesh.n_elements} triangles")
    return mesh


def generate_rect_mesh(corner_lo: Sequence[float], corner_hi: Sequence[float], target_h: float) -> Mesh:
    """Structured mesh of an axis-aligned rectangle with alternating diagonals"""
    is_valid, error = validate_target_h(target_h)
    if not is_valid:
        raise ValidationError(error)
    x0, y0 = float(corner_lo[0]), float(corner_lo[1])
    x1, y1 = float(corner_hi[0]), float(corner_hi[1])
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"Rectangle corners must be strictly ordered, got {corner_lo} and {corner_hi}")

    nx = max(1, math.ceil((x1 - x0) / target_h))
    ny = max(1, math.ceil((y1 - y0) / target_h))
    _check_budget((nx + 1) * (ny + 1))

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.stack([gx.ravel(), gy.ravel()], axis=1)

    def index(i, j):
        return j * (nx + 1) + i

    triangles = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)
            if (i + j) % 2 == 0:
                triangles.extend([(a, b, c), (a, c, d)])
            else:
                triangles.extend([(a, b, d), (b, c, d)])

    ring = ([index(i, 0) for i in range(nx)] + [index(nx, j) for j in range(ny)]
            + [index(i, ny) for i in range(nx, 0, -1)] + [index(0, j) for j in range(ny, 0, -1)])
    ring = np.array(ring, dtype=np.int64)
    boundary_edges = np.stack([ring, np.roll(ring, -1)], axis=1)

    mesh = Mesh(nodes, np.array(triangles, dtype=np.int64), boundary_edges,
                np.ones(len(boundary_edges), dtype=bool), np.zeros(len(triangles), dtype=np.int64),
                domain='polygon')
    logger.info(f"Generated rectangle mesh: {nx}x{ny} cells, {mesh.n_nodes} nodes")
    return mesh


def validate_mesh(mesh: Mesh) -> Tuple[bool, Optional[str]]:
    """Check orientation, edge adjacency and the Γ markers of a mesh"""
    if mesh.n_elements == 0:
        return False, "Mesh has no triangles"

    if np.any(mesh.signed_areas() <= 0):
        bad = int(np.flatnonzero(mesh.signed_areas() <= 0)[0])
        return False, f"Triangle {bad} does not have positive signed area"

    unique, _, counts = _edge_table(mesh.triangles)
    if np.any(counts > 2):
        bad = unique[np.flatnonzero(counts > 2)[0]]
        return False, f"Edge {tuple(bad)} is shared by more than two triangles"

    boundary_keys = {tuple(e) for e in unique[counts == 1]}
    declared = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    if boundary_keys != declared:
        return False, "Declared boundary edges do not match the edges used by exactly one triangle"

    gamma = mesh.gamma_edges()
    if len(gamma) == 0:
        return False, "No boundary edge is flagged as part of Γ"
    _, n_chains = _gamma_chain(gamma)
    if n_chains != 1:
        return False, f"Γ must be connected, found {n_chains} separate pieces"

    return True, None


# Regions

def tag_regions(mesh: Mesh, regions: Sequence[Tuple[int, RegionSpec]]) -> Mesh:
    """Assign region ids by centroid membership; untagged elements get id 0"""
    ids = [int(rid) for rid, _ in regions]
    if any(rid <= 0 for rid in ids):
        raise ValidationError(f"Region ids must be positive (0 is the background), got {ids}")
    if len(set(ids)) != len(ids):
        raise ValidationError(f"Region ids must be unique, got {ids}")

    centroids = mesh.centroids()
    element_region = np.zeros(mesh.n_elements, dtype=np.int64)
    claimed = np.zeros(mesh.n_elements, dtype=np.int64)

    for region_id, spec in regions:
        mask = spec.contains(centroids)
        if not mask.any():
            logger.warning(f"Region {region_id} ({spec.describe()}) tags no elements")

        overlap = mask & (claimed > 0)
        if overlap.any():
            element = int(np.flatnonzero(overlap)[0])
            error_msg = (f"Element {element} is claimed by regions {int(claimed[element])} and {region_id} "
                         f"({int(overlap.sum())} elements in conflict)")
            logger.error(error_msg)
            raise RegionConflictError(error_msg)

        claimed[mask] = region_id
        element_region[mask] = region_id

    return mesh.with_regions(element_region)


def carve_insulating(mesh: Mesh, c0_id: int) -> Mesh:
    """
    Remove the elements tagged c0_id.

    The new boundary along ∂C₀ is flagged as not part of Γ. Nodes and
    elements of the result map back to the uncarved mesh through
    parent_nodes and parent_elements.
    """
    removed = mesh.element_region == c0_id
    if not removed.any():
        return mesh

    kept_elements = np.flatnonzero(~removed)
    if len(kept_elements) == 0:
        raise AdmissibilityError(f"Region {c0_id} covers the whole mesh")

    if _count_components(element_adjacency(mesh.triangles), ~removed) != 1:
        error_msg = f"Removing region {c0_id} disconnects the remaining domain"
        logger.error(error_msg)
        raise AdmissibilityError(error_msg)

    used = np.unique(mesh.triangles[kept_elements])
    new_index = np.full(mesh.n_nodes, -1, dtype=np.int64)
    new_index[used] = np.arange(len(used))
    triangles = new_index[mesh.triangles[kept_elements]]

    half_edges = _local_edges(triangles)
    _, inverse, counts = _edge_table(triangles)
    open_edges = half_edges[counts[inverse] == 1]
    open_keys = {tuple(sorted(e)) for e in open_edges.tolist()}

    edges, flags = [], []
    for (a, b), on_gamma in zip(mesh.boundary_edges.tolist(), mesh.on_gamma.tolist()):
        na, nb = new_index[a], new_index[b]
        survives = na >= 0 and nb >= 0 and tuple(sorted((na, nb))) in open_keys
        if on_gamma and not survives:
            error_msg = f"Region {c0_id} removes part of Γ (edge {a}-{b})"
            logger.error(error_msg)
            raise AdmissibilityError(error_msg)
        if survives:
            edges.append((na, nb))
            flags.append(on_gamma)
            open_keys.discard(tuple(sorted((na, nb))))

    interface = sorted(tuple(e) for e in open_edges.tolist() if tuple(sorted(e)) in open_keys)
    edges.extend(interface)
    flags.extend([False] * len(interface))

    parent_nodes = used if mesh.parent_nodes is None else mesh.parent_nodes[used]
    parent_elements = kept_elements if mesh.parent_elements is None else mesh.parent_elements[kept_elements]

    carved = Mesh(mesh.nodes[used], triangles, np.array(edges, dtype=np.int64).reshape(-1, 2),
                  np.array(flags, dtype=bool), mesh.element_region[kept_elements], domain=mesh.domain,
                  parent_nodes=parent_nodes, parent_elements=parent_elements, origin_digest=mesh.origin)
    logger.info(f"Carved region {c0_id}: {mesh.n_elements - carved.n_elements} elements removed, "
                f"{carved.n_nodes} nodes remain")
    return carved


def _region_masks(mesh: Mesh, *specs: RegionSpec) -> List[np.ndarray]:
    centroids = mesh.centroids()
    return [spec.contains(centroids) for spec in specs]


def boundary_elements(mesh: Mesh) -> np.ndarray:
    """Mask of elements with a vertex on the outer boundary"""
    on_boundary = np.zeros(mesh.n_nodes, dtype=bool)
    on_boundary[mesh.boundary_nodes()] = True
    return on_boundary[mesh.triangles].any(axis=1)


def check_admissibility(c0: RegionSpec, cinf: RegionSpec, domain: Mesh) -> AdmissibilityReport:
    """Report disjointness, connectedness of Ω∖C₀ and interior position of C₀ ∪ C∞"""
    m0, minf = _region_masks(domain, c0, cinf)
    adjacency = element_adjacency(domain.triangles)

    report = AdmissibilityReport(
        disjoint=not bool((m0 & minf).any()),
        complement_connected=_count_components(adjacency, ~m0) == 1,
        strictly_interior=not bool(((m0 | minf) & boundary_elements(domain)).any()),
    )
    if not report.ok:
        logger.warning(f"Admissibility of C0={c0.describe()}, Cinf={cinf.describe()} fails: {report.failures()}")
    return report


def is_test_set_admissible(region: RegionSpec, mesh: Mesh) -> Tuple[bool, Optional[str]]:
    """Membership in the family of admissible test inclusions at element resolution"""
    mask, = _region_masks(mesh, region)

    if not mask.any():
        return False, f"{region.describe()} contains no element"

    if (mask & boundary_elements(mesh)).any():
        return False, f"{region.describe()} touches the outer boundary"

    if _count_components(element_adjacency(mesh.triangles), ~mask) != 1:
        return False, f"{region.describe()} does not have a connected complement"

    return True, None


def restrict_gamma(mesh: Mesh, theta_min: float, theta_max: float) -> Mesh:
    """Flag as Γ only the outer boundary edges whose midpoint angle lies in [theta_min, theta_max]"""
    mid = mesh.nodes[mesh.boundary_edges].mean(axis=1)
    theta = np.arctan2(mid[:, 1], mid[:, 0])
    on_gamma = mesh.on_gamma & (theta >= theta_min) & (theta <= theta_max)

    if not on_gamma.any():
        raise MeshError(f"No boundary edge lies in the arc [{theta_min:g}, {theta_max:g}]")
    _, n_chains = _gamma_chain(mesh.boundary_edges[on_gamma])
    if n_chains != 1:
        raise MeshError(f"The arc [{theta_min:g}, {theta_max:g}] does not give a connected Γ")

    return mesh.with_gamma(on_gamma)


# Boundary basis

def _edge_quadrature(mesh: Mesh, edges: np.ndarray, n_points: int):
    """Gauss points along Γ edges: positions t, weights with line element, polar angles"""
    x, w = np.polynomial.legendre.leggauss(n_points)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w

    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    if mesh.domain == 'disk':
        theta_a = np.arctan2(a[:, 1], a[:, 0])
        theta_b = np.arctan2(b[:, 1], b[:, 0])
        delta = np.angle(np.exp(1j * (theta_b - theta_a)))
        theta = theta_a[:, None] + t[None, :] * delta[:, None]
        weights = np.abs(delta)[:, None] * w[None, :]
    else:
        points = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        theta = np.arctan2(points[..., 1], points[..., 0])
        weights = np.linalg.norm(b - a, axis=1)[:, None] * w[None, :]
    return t, weights, theta


def build_boundary_basis(mesh: Mesh, kind: str, size: int, quad_points: Optional[int] = None) -> BoundaryBasis:
    """
    Mean-free basis of L²(Γ) discretized on the Γ edges.

    fourier: size K gives cos kθ/√π and sin kθ/√π for k = 1..K (full circle only).
    edge_piecewise: Γ is split into size + 1 contiguous groups of edges; the
    first `size` group indicators minus their means form the basis.
    """
    if kind not in BASIS_KINDS:
        raise ValidationError(f"Unknown basis kind '{kind}', expected one of {BASIS_KINDS}")
    if int(size) != size or size < 1:
        raise ValidationError(f"Basis size must be a positive integer, got {size}")
    size = int(size)
    quad_points = quad_points or config.BOUNDARY_QUAD_POINTS

    order, _ = _gamma_chain(mesh.gamma_edges())
    edges = mesh.gamma_edges()[order]
    t, weights, theta = _edge_quadrature(mesh, edges, quad_points)

    if kind == 'fourier':
        closed = edges[0, 0] == edges[-1, 1]
        on_circle = np.allclose(np.linalg.norm(mesh.nodes[edges.ravel()], axis=1), 1.0, atol=1e-12)
        if mesh.domain != 'disk' or not (closed and on_circle):
            error_msg = "Fourier basis needs Γ to be the full unit circle; use edge_piecewise on partial Γ"
            logger.error(error_msg)
            raise UnsupportedConfigurationError(error_msg)

        labels, values = [], []
        for k in range(1, size + 1):
            labels.extend([f"cos{k}", f"sin{k}"])
            values.extend([np.cos(k * theta) / np.sqrt(np.pi), np.sin(k * theta) / np.sqrt(np.pi)])
        values = np.array(values)
    else:
        # mean-free piecewise constants on N edges span N - 1 dimensions
        if size > len(edges) - 1:
            error_msg = (f"edge_piecewise basis of size {size} needs at least {size + 1} Γ edges, "
                         f"mesh has {len(edges)}; the largest size is {len(edges) - 1}")
            logger.error(error_msg)
            raise ValidationError(error_msg)
        groups = np.array_split(np.arange(len(edges)), size + 1)[:size]
        length = weights.sum()
        labels, values = [], []
        for g, members in enumerate(groups):
            indicator = np.zeros(len(edges))
            indicator[members] = 1.0
            share = weights[members].sum() / length
            labels.append(f"piece{g}")
            values.append(np.repeat((indicator - share)[:, None], len(t), axis=1))
        values = np.array(values)

    gram = np.einsum('ieq,jeq,eq->ij', values, values, weights)
    basis = BoundaryBasis(kind=kind, size=size, labels=tuple(labels), edges=edges, t=t, weights=weights,
                          values=values, gram=gram, mesh_digest=mesh.geometry_digest(), n_nodes=mesh.n_nodes)
    logger.info(f"Built {kind} boundary basis with {basis.n_functions} functions on {len(edges)} Γ edges")
    return basis
