from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple
import hashlib
import json
import math

import numpy as np

from eitkit.utils.validators import ValidationError, validate_unique_cells

REGION_KINDS = ('empty', 'disk', 'rect', 'annulus', 'pixels', 'complement', 'union')


@dataclass(frozen=True)
class PixelGrid:
    """Rectangular lattice of pixels covering [lo, hi]"""
    nx: int
    ny: int
    lo: Tuple[float, float] = (-1.0, -1.0)
    hi: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValidationError(f"Pixel grid needs at least one cell per axis, got {self.nx}x{self.ny}")
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ValidationError(f"Pixel grid corners must be strictly ordered, got {self.lo} and {self.hi}")

    @property
    def cell_size(self) -> Tuple[float, float]:
        return ((self.hi[0] - self.lo[0]) / self.nx, (self.hi[1] - self.lo[1]) / self.ny)

    @property
    def shape(self) -> Tuple[int, int]:
        """Array shape (rows, columns) of grids indexed [iy, ix]"""
        return (self.ny, self.nx)

    def cells(self) -> Iterator[Tuple[int, int]]:
        for iy in range(self.ny):
            for ix in range(self.nx):
                yield ix, iy

    def center(self, ix: int, iy: int) -> Tuple[float, float]:
        dx, dy = self.cell_size
        return (self.lo[0] + (ix + 0.5) * dx, self.lo[1] + (iy + 0.5) * dy)

    def centers(self) -> np.ndarray:
        """Pixel centers as an array of shape (ny, nx, 2)"""
        dx, dy = self.cell_size
        xs = self.lo[0] + (np.arange(self.nx) + 0.5) * dx
        ys = self.lo[1] + (np.arange(self.ny) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def cell_index(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Integer cell coordinates of points; may fall outside the grid"""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        dx, dy = self.cell_size
        ix = np.floor((points[:, 0] - self.lo[0]) / dx).astype(int)
        iy = np.floor((points[:, 1] - self.lo[1]) / dy).astype(int)
        return ix, iy

    def pixel(self, ix: int, iy: int) -> 'RegionSpec':
        return RegionSpec.pixels(self, [(ix, iy)])

    def to_dict(self) -> Dict[str, Any]:
        return {'nx': self.nx, 'ny': self.ny, 'lo': list(self.lo), 'hi': list(self.hi)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PixelGrid':
        return cls(
            nx=int(data['nx']),
            ny=int(data['ny']),
            lo=tuple(float(v) for v in data.get('lo', (-1.0, -1.0))),
            hi=tuple(float(v) for v in data.get('hi', (1.0, 1.0))),
        )


@dataclass(frozen=True)
class RegionSpec:
    """
    Geometric primitive used for inclusions, test sets and pixels.

    Build instances through the class constructors (disk, rect, annulus,
    pixels, complement, union, empty); they validate their parameters.
    Membership is decided pointwise by `contains`, which the mesh service
    applies to element centroids.
    """
    kind: str
    params: Tuple[float, ...] = ()
    cells: Tuple[Tuple[int, int], ...] = ()
    grid: Optional[PixelGrid] = None
    children: Tuple['RegionSpec', ...] = ()

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValidationError(f"Unknown region kind '{self.kind}'")

    # Constructors

    @classmethod
    def empty(cls) -> 'RegionSpec':
        return cls('empty')

    @classmethod
    def disk(cls, center: Sequence[float], radius: float) -> 'RegionSpec':
        if not radius > 0:
            raise ValidationError(f"Disk radius must be positive, got {radius}")
        return cls('disk', (float(center[0]), float(center[1]), float(radius)))

    @classmethod
    def rect(cls, corner_lo: Sequence[float], corner_hi: Sequence[float]) -> 'RegionSpec':
        if not (corner_lo[0] < corner_hi[0] and corner_lo[1] < corner_hi[1]):
            raise ValidationError(f"Rectangle corners must be strictly ordered, got {corner_lo} and {corner_hi}")
        return cls('rect', (float(corner_lo[0]), float(corner_lo[1]), float(corner_hi[0]), float(corner_hi[1])))

    @classmethod
    def annulus(cls, center: Sequence[float], r_inner: float, r_outer: float,
                theta_min: float = -math.pi, theta_max: float = math.pi) -> 'RegionSpec':
        """Annulus r_inner <= |x - center| < r_outer, optionally cut to an angular sector"""
        if not 0 <= r_inner < r_outer:
            raise ValidationError(f"Annulus radii must satisfy 0 <= r_inner < r_outer, got {r_inner}, {r_outer}")
        if not theta_min < theta_max:
            raise ValidationError(f"Annulus sector needs theta_min < theta_max, got {theta_min}, {theta_max}")
        return cls('annulus', (float(center[0]), float(center[1]), float(r_inner), float(r_outer),
                               float(theta_min), float(theta_max)))

    @classmethod
    def pixels(cls, grid: PixelGrid, cells: Sequence[Tuple[int, int]]) -> 'RegionSpec':
        cells = [(int(ix), int(iy)) for ix, iy in cells]
        is_valid, error = validate_unique_cells(cells)
        if not is_valid:
            raise ValidationError(error)
        for ix, iy in cells:
            if not (0 <= ix < grid.nx and 0 <= iy < grid.ny):
                raise ValidationError(f"Pixel ({ix}, {iy}) lies outside the {grid.nx}x{grid.ny} grid")
        return cls('pixels', cells=tuple(sorted(cells)), grid=grid)

    @classmethod
    def complement(cls, region: 'RegionSpec') -> 'RegionSpec':
        return cls('complement', children=(region,))

    @classmethod
    def union(cls, *regions: 'RegionSpec') -> 'RegionSpec':
        members = tuple(r for r in regions if not r.is_empty)
        if not members:
            return cls.empty()
        if len(members) == 1:
            return members[0]
        return cls('union', children=members)

    # Queries

    @property
    def is_empty(self) -> bool:
        return self.kind == 'empty'

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership mask for an (n, 2) array of points"""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        x, y = points[:, 0], points[:, 1]

        if self.kind == 'empty':
            return np.zeros(len(points), dtype=bool)

        if self.kind == 'disk':
            cx, cy, radius = self.params
            return (x - cx) ** 2 + (y - cy) ** 2 < radius ** 2

        if self.kind == 'rect':
            x0, y0, x1, y1 = self.params
            return (x > x0) & (x < x1) & (y > y0) & (y < y1)

        if self.kind == 'annulus':
            cx, cy, r_in, r_out, t0, t1 = self.params
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            theta = np.arctan2(y - cy, x - cx)
            return (r2 >= r_in ** 2) & (r2 < r_out ** 2) & (theta >= t0) & (theta <= t1)

        if self.kind == 'pixels':
            ix, iy = self.grid.cell_index(points)
            width = self.grid.nx
            keys = iy * width + ix
            inside = (ix >= 0) & (ix < self.grid.nx) & (iy >= 0) & (iy < self.grid.ny)
            wanted = np.array([cy * width + cx for cx, cy in self.cells])
            return inside & np.isin(keys, wanted)

        if self.kind == 'complement':
            return ~self.children[0].contains(points)

        # union
        mask = np.zeros(len(points), dtype=bool)
        for child in self.children:
            mask |= child.contains(points)
        return mask

    def describe(self) -> str:
        """Short human-readable label"""
        if self.kind == 'empty':
            return 'empty'
        if self.kind == 'disk':
            cx, cy, r = self.params
            return f"disk({cx:g},{cy:g};{r:g})"
        if self.kind == 'rect':
            return "rect({:g},{:g};{:g},{:g})".format(*self.params)
        if self.kind == 'annulus':
            return "annulus({:g},{:g};{:g}-{:g})".format(*self.params[:4])
        if self.kind == 'pixels':
            return f"pixels[{len(self.cells)}]"
        if self.kind == 'complement':
            return f"complement({self.children[0].describe()})"
        return "union(" + ",".join(c.describe() for c in self.children) + ")"

    def digest(self) -> str:
        """Stable hash of the region parameters"""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind}
        if self.kind == 'disk':
            data.update(center=list(self.params[:2]), radius=self.params[2])
        elif self.kind == 'rect':
            data.update(corner_lo=list(self.params[:2]), corner_hi=list(self.params[2:]))
        elif self.kind == 'annulus':
            data.update(center=list(self.params[:2]), r_inner=self.params[2], r_outer=self.params[3],
                        theta_min=self.params[4], theta_max=self.params[5])
        elif self.kind == 'pixels':
            data.update(grid=self.grid.to_dict(), cells=[list(c) for c in self.cells])
        elif self.kind in ('complement', 'union'):
            data.update(children=[c.to_dict() for c in self.children])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RegionSpec':
        """Create a RegionSpec from its dictionary form"""
        if not isinstance(data, dict) or 'kind' not in data:
            raise ValidationError(f"Region must be an object with a 'kind' field, got {data!r}")

        kind = data['kind']
        try:
            if kind == 'empty':
                return cls.empty()
            if kind == 'disk':
                return cls.disk(data['center'], float(data['radius']))
            if kind == 'rect':
                return cls.rect(data['corner_lo'], data['corner_hi'])
            if kind == 'annulus':
                return cls.annulus(data['center'], float(data['r_inner']), float(data['r_outer']),
                                   float(data.get('theta_min', -math.pi)), float(data.get('theta_max', math.pi)))
            if kind == 'pixels':
                return cls.pixels(PixelGrid.from_dict(data['grid']), [tuple(c) for c in data['cells']])
            if kind == 'complement':
                return cls.complement(cls.from_dict(data['children'][0]))
            if kind == 'union':
                return cls.union(*(cls.from_dict(c) for c in data['children']))
        except KeyError as e:
            raise ValidationError(f"Region of kind '{kind}' is missing field {e}")

        raise ValidationError(f"Unknown region kind '{kind}'")


@dataclass(frozen=True)
class AdmissibilityReport:
    """Geometric checks for an insulating/conducting region pair on a mesh"""
    disjoint: bool
    complement_connected: bool
    strictly_interior: bool

    @property
    def ok(self) -> bool:
        return self.disjoint and self.complement_connected and self.strictly_interior

    def failures(self) -> Tuple[str, ...]:
        return tuple(name for name, value in self.to_dict().items() if not value)

    def to_dict(self) -> Dict[str, bool]:
        return {
            'disjoint': self.disjoint,
            'complement_connected': self.complement_connected,
            'strictly_interior': self.strictly_interior,
        }
