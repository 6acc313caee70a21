"""Axis-aligned geometry for the abstraction: whitening transforms,
hyperrectangles, labeled grids, and post-image hulls.

All grid geometry lives in whitened coordinates (noise covariance mapped to
the identity); each cell also knows its preimage in the original state space
for reporting.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import for annotations only
    from .relaxation import LinearBounds

# Reserved state index for the virtual out-of-domain state. It is never an
# index into RegionGrid.cells; transition rows keep its mass in dedicated
# fields instead of the sparse maps.
UNSAFE_ID = -1

# Raster point-location tables above this many entries are refused; grids at
# that size would have failed long before lookup becomes the bottleneck.
_MAX_RASTER_CELLS = 50_000_000


@dataclass(frozen=True)
class HyperRect:
    """Axis-aligned box [lo, hi], closed on both sides."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"bounds must be 1-d arrays of equal length, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"empty box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def vertices(self) -> np.ndarray:
        """All 2^n corners, binary-counting order (lo first)."""
        corners = np.array(list(itertools.product(*zip(self.lo, self.hi))))
        return corners.reshape(2**self.dim, self.dim)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)
        return inside if np.asarray(points).ndim > 1 else inside[0]

    def intersects(self, other: "HyperRect") -> bool:
        """Closed-box intersection test (boundary touch counts)."""
        return bool(np.all(self.lo <= other.hi) & np.all(other.lo <= self.hi))

    def split(self, dim: int, at: float | None = None) -> tuple["HyperRect", "HyperRect"]:
        """Split along `dim` (default at the midpoint); returns (low, high)."""
        if not (0 <= dim < self.dim):
            raise ValueError(f"split dimension {dim} out of range for {self.dim}-d box")
        cut = 0.5 * (self.lo[dim] + self.hi[dim]) if at is None else float(at)
        if not (self.lo[dim] < cut < self.hi[dim]):
            raise ValueError(f"cut {cut} not interior to [{self.lo[dim]}, {self.hi[dim]}]")
        lo_hi = self.hi.copy()
        lo_hi[dim] = cut
        hi_lo = self.lo.copy()
        hi_lo[dim] = cut
        return HyperRect(self.lo, lo_hi), HyperRect(hi_lo, self.hi)


@dataclass(frozen=True)
class Polytope:
    """Convex hull of a finite vertex candidate set. Vertices may be
    redundant (interior points are allowed and never pruned)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.size == 0:
            raise ValueError("polytope needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise ValueError("polytope vertices must be finite")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]


@dataclass(frozen=True)
class Transform:
    """Invertible linear change of coordinates z = matrix @ x."""

    matrix: np.ndarray
    inverse: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def whitening_transform(covariance: np.ndarray, tol: float = 1e-9) -> Transform:
    """Build T such that T @ cov @ T.T = I, via the eigendecomposition of the
    noise covariance. In the whitened coordinates the process noise is a
    standard normal.
    """
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > tol * scale:
        raise ValueError("covariance must be symmetric")
    eigvals, eigvecs = np.linalg.eigh(cov)
    if np.any(eigvals <= 0):
        raise ValueError(f"covariance must be positive definite, eigenvalues {eigvals}")
    matrix = (eigvecs / np.sqrt(eigvals)).T  # diag(1/sqrt(lam)) @ V.T
    inverse = eigvecs * np.sqrt(eigvals)     # V @ diag(sqrt(lam))
    return Transform(matrix=matrix, inverse=inverse, covariance=cov)


def rect_hull(poly: Polytope) -> HyperRect:
    """Tightest axis-aligned box containing the vertex set."""
    return HyperRect(poly.vertices.min(axis=0), poly.vertices.max(axis=0))


def post_image_hull(bounds: "LinearBounds", cell: HyperRect) -> Polytope:
    """Candidate vertex set whose convex hull contains the image of `cell`
    under the bounded map.

    For each cell corner v the true image lies in the box
    [lower(v), upper(v)]; the union of those boxes' corners (2^n boxes with
    2^n corners each) spans a convex hull that contains the whole image.
    """
    verts = cell.vertices()                      # (2^n, n)
    los = bounds.lower(verts)                    # (2^n, n)
    his = bounds.upper(verts)
    box_lo = np.minimum(los, his)
    box_hi = np.maximum(los, his)
    n = cell.dim
    masks = np.array(list(itertools.product((False, True), repeat=n)))  # (2^n, n)
    corners = np.where(masks[None, :, :], box_hi[:, None, :], box_lo[:, None, :])
    return Polytope(corners.reshape(-1, n))


def _axis_map(matrix: np.ndarray, tol: float = 1e-9) -> list[tuple[int, float]] | None:
    """If `matrix` maps axis boxes to axis boxes (one significant entry per
    row), return per-row (source column, coefficient); otherwise None."""
    n = matrix.shape[0]
    out = []
    for row in matrix:
        a = np.abs(row)
        j = int(np.argmax(a))
        if a[j] == 0.0:
            return None
        rest = np.delete(a, j)
        if rest.size and np.max(rest) > tol * a[j]:
            return None
        out.append((j, float(row[j])))
    cols = {j for j, _ in out}
    return out if len(cols) == n else None


def transform_box(transform: Transform, box: HyperRect, exact: bool = False) -> HyperRect:
    """Image of an axis box under the transform. With exact=True the matrix
    must be axis-preserving (one significant entry per row); otherwise the
    rectangular hull of the vertex images is returned."""
    amap = _axis_map(transform.matrix)
    if amap is not None:
        lo = np.empty(box.dim)
        hi = np.empty(box.dim)
        for l, (j, c) in enumerate(amap):
            a, b = c * box.lo[j], c * box.hi[j]
            lo[l], hi[l] = min(a, b), max(a, b)
        return HyperRect(lo, hi)
    if exact:
        raise ValueError(
            "transform does not map axis-aligned boxes to axis-aligned boxes; "
            "regions of interest require a (block-)diagonal noise covariance"
        )
    imgs = box.vertices() @ transform.matrix.T
    return HyperRect(imgs.min(axis=0), imgs.max(axis=0))


@dataclass
class RegionGrid:
    """Partition of the whitened domain into labeled axis-aligned cells.

    Cells are stored in a flat list; refinement splits reuse the parent index
    for one child and append the other, so indices of untouched cells are
    stable across rounds. The out-of-domain state is virtual (unsafe_id, no
    geometry stored).
    """

    cells: list[HyperRect]
    labels: list[frozenset[str]]
    domain: HyperRect
    transform: Transform
    unsafe_id: int = UNSAFE_ID
    _raster: tuple[list[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.cells) != len(self.labels):
            raise ValueError("one label set per cell required")

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """All cell bounds stacked: (lows, highs), each (num_cells, dim)."""
        lo = np.array([c.lo for c in self.cells])
        hi = np.array([c.hi for c in self.cells])
        return lo, hi

    def cell_original_rect(self, i: int) -> HyperRect:
        """Rectangular hull of the cell's preimage in original coordinates
        (exact whenever the transform is axis-preserving)."""
        verts = self.cells[i].vertices() @ self.transform.inverse.T
        return HyperRect(verts.min(axis=0), verts.max(axis=0))

    def split_cell(self, i: int, dim: int) -> int:
        """Split cell i at the midpoint of `dim`. The low child replaces
        index i, the high child is appended; returns the new index."""
        low, high = self.cells[i].split(dim)
        self.cells[i] = low
        self.cells.append(high)
        self.labels.append(self.labels[i])
        self._raster = None
        return len(self.cells) - 1

    # -- point location -----------------------------------------------------

    def _build_raster(self) -> tuple[list[np.ndarray], np.ndarray]:
        lows, highs = self.boxes()
        cuts = []
        for l in range(self.dim):
            c = np.unique(np.concatenate([lows[:, l], highs[:, l]]))
            cuts.append(c)
        shape = tuple(len(c) - 1 for c in cuts)
        if np.prod(shape) > _MAX_RASTER_CELLS:
            raise RuntimeError(f"point-location raster too large: {shape}")
        owner = np.full(shape, -1, dtype=np.int32)
        for i in range(self.num_cells):
            idx = tuple(
                slice(
                    int(np.searchsorted(cuts[l], lows[i, l])),
                    int(np.searchsorted(cuts[l], highs[i, l])),
                )
                for l in range(self.dim)
            )
            owner[idx] = i
        return cuts, owner

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Cell index containing each whitened point; -1 when outside the
        domain. Interior boundaries resolve to the upper cell."""
        if self._raster is None:
            self._raster = self._build_raster()
        cuts, owner = self._raster
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.empty((pts.shape[0], self.dim), dtype=np.int64)
        for l in range(self.dim):
            k = np.searchsorted(cuts[l], pts[:, l], side="right") - 1
            idx[:, l] = np.clip(k, 0, len(cuts[l]) - 2)
        outside = ~((pts >= self.domain.lo) & (pts <= self.domain.hi)).all(axis=1)
        found = owner[tuple(idx[:, l] for l in range(self.dim))].astype(np.int64)
        found[outside] = UNSAFE_ID
        return found if np.asarray(points).ndim > 1 else found[0]


def _insert_cuts(base: np.ndarray, extra: Iterable[float], lo: float, hi: float) -> np.ndarray:
    vals = np.concatenate([base, np.fromiter(extra, dtype=float)])
    vals = vals[(vals >= lo) & (vals <= hi)]
    vals = np.unique(vals)
    # collapse cuts closer than snapping noise so no degenerate cells appear
    keep = [vals[0]]
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    for v in vals[1:]:
        if v - keep[-1] > tol:
            keep.append(v)
    keep[0], keep[-1] = lo, hi
    return np.asarray(keep)


def build_grid(
    domain: HyperRect,
    transform: Transform,
    counts: Sequence[int],
    regions: Sequence[tuple[str, HyperRect]] = (),
) -> RegionGrid:
    """Uniform grid over the whitened image of `domain`, with the boundaries
    of every labeled region inserted as extra cut planes so each region is
    exactly a union of cells.

    `domain` and the region boxes are in original coordinates; the grid is
    built in whitened coordinates.
    """
    counts = list(counts)
    if len(counts) != domain.dim or any(c < 1 for c in counts):
        raise ValueError(f"need one positive cell count per dimension, got {counts}")
    for label, box in regions:
        if box.dim != domain.dim:
            raise ValueError(f"region {label!r} has dimension {box.dim}, domain has {domain.dim}")
        if np.any(box.lo < domain.lo) or np.any(box.hi > domain.hi):
            raise ValueError(f"region {label!r} is not contained in the domain")

    domain_t = transform_box(transform, domain, exact=False)
    regions_t = [(label, transform_box(transform, box, exact=True)) for label, box in regions]

    cuts = []
    for l in range(domain.dim):
        base = np.linspace(domain_t.lo[l], domain_t.hi[l], counts[l] + 1)
        extra = [b.lo[l] for _, b in regions_t] + [b.hi[l] for _, b in regions_t]
        cuts.append(_insert_cuts(base, extra, domain_t.lo[l], domain_t.hi[l]))

    cells: list[HyperRect] = []
    labels: list[frozenset[str]] = []
    for idx in itertools.product(*(range(len(c) - 1) for c in cuts)):
        lo = np.array([cuts[l][idx[l]] for l in range(domain.dim)])
        hi = np.array([cuts[l][idx[l] + 1] for l in range(domain.dim)])
        center = 0.5 * (lo + hi)
        labs = frozenset(
            label for label, b in regions_t
            if np.all(center >= b.lo) and np.all(center <= b.hi)
        )
        cells.append(HyperRect(lo, hi))
        labels.append(labs)
    return RegionGrid(cells=cells, labels=labels, domain=domain_t, transform=transform)
