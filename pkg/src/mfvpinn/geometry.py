"""Reference patch, axis-aligned patches, covers and hole cutting.

Every patch is the image of the unit square under a positive diagonal
scaling plus a translation, so a patch is fully described by its center and
its two edge lengths.  The reference square is split into a fan of four
triangles around its center; the hat test function and all quadrature rules
live on that fan.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
REF_CENTER = np.array([0.5, 0.5])
# T_j = (v_j, v_{j+1}, c): bottom, right, top, left
REF_TRIANGLES = ((0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4))
N_TRIANGLES = 4


def ref_triangle_vertices(j: int) -> np.ndarray:
    """Vertices (3, 2) of the j-th fan triangle of the reference square."""
    pts = np.vstack([REF_VERTICES, REF_CENTER])
    return pts[list(REF_TRIANGLES[j])]


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def interior_overlap(self, other: "Rect") -> "Rect | None":
        """Intersection if it has positive area, else None (tangency ignored)."""
        x0, x1 = max(self.x0, other.x0), min(self.x1, other.x1)
        y0, y1 = max(self.y0, other.y0), min(self.y1, other.y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1, y1)

    def contains(self, points: np.ndarray, closed: bool = True) -> np.ndarray:
        x, y = points[..., 0], points[..., 1]
        if closed:
            return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)


@dataclass(frozen=True)
class Patch:
    """Image of the reference square: ``x = center + diag(hx, hy) (xi - c_ref)``."""

    id: int
    center: tuple[float, float]
    half_widths: tuple[float, float]
    level: int = 0

    def __post_init__(self):
        if min(self.half_widths) <= 0:
            raise ValueError(f"patch {self.id}: half widths must be positive")

    @property
    def edges(self) -> np.ndarray:
        return 2.0 * np.asarray(self.half_widths)

    @property
    def area(self) -> float:
        return 4.0 * self.half_widths[0] * self.half_widths[1]

    @property
    def gamma(self) -> float:
        return 1.0 / self.area

    @property
    def diameter(self) -> float:
        return float(np.hypot(*self.edges))

    @property
    def rect(self) -> Rect:
        (cx, cy), (ax, ay) = self.center, self.half_widths
        return Rect(cx - ax, cy - ay, cx + ax, cy + ay)

    def map_point(self, ref_points) -> np.ndarray:
        ref_points = np.asarray(ref_points, dtype=float)
        return np.asarray(self.center) + self.edges * (ref_points - REF_CENTER)

    def inverse_map(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return REF_CENTER + (points - np.asarray(self.center)) / self.edges

    @classmethod
    def from_rect(cls, id: int, rect: Rect, level: int = 0) -> "Patch":
        return cls(
            id,
            (0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1)),
            (0.5 * rect.width, 0.5 * rect.height),
            level,
        )

    @classmethod
    def square(cls, id: int, center, h: float, level: int = 0) -> "Patch":
        return cls(id, (float(center[0]), float(center[1])), (0.5 * h, 0.5 * h), level)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "center": list(self.center),
            "half_widths": list(self.half_widths),
            "level": self.level,
            "gamma": self.gamma,
        }


@dataclass(frozen=True)
class Domain:
    """Unit square minus pairwise disjoint rectangular holes."""

    holes: tuple[Rect, ...] = ()

    def __post_init__(self):
        for h in self.holes:
            if not (h.x0 > 0 and h.y0 > 0 and h.x1 < 1 and h.y1 < 1):
                raise ValueError(f"hole {h} must lie strictly inside the unit square")
        for a, b in itertools.combinations(self.holes, 2):
            if a.interior_overlap(b) is not None:
                raise ValueError("holes must be pairwise disjoint")

    @classmethod
    def with_holes(cls, specs) -> "Domain":
        """Build from ``(center, half_base, half_height)`` triples."""
        return cls(
            tuple(Rect(cx - a, cy - b, cx + a, cy + b) for (cx, cy), a, b in specs)
        )

    def inside(self, points: np.ndarray) -> np.ndarray:
        """Mask of points in the closed domain (hole interiors excluded)."""
        points = np.asarray(points, dtype=float)
        mask = Rect(0.0, 0.0, 1.0, 1.0).contains(points)
        for h in self.holes:
            mask &= ~h.contains(points, closed=False)
        return mask


UNIT_SQUARE = Domain()


@dataclass
class Cover:
    """Ordered set of patches of one adaptive generation."""

    patches: list[Patch]
    generation: int = 0
    next_id: int = field(default=-1)

    def __post_init__(self):
        if self.next_id < 0:
            self.next_id = max((p.id for p in self.patches), default=-1) + 1

    def __len__(self) -> int:
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def new_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.patches]

    def snapshot(self, eta_gamma=None) -> list[dict]:
        rows = []
        for k, p in enumerate(self.patches):
            row = p.to_dict()
            if eta_gamma is not None:
                row["eta_gamma"] = float(eta_gamma[k])
            rows.append(row)
        return rows


def initial_covers(domain: Domain = UNIT_SQUARE) -> tuple[Cover, Cover]:
    """The single-patch start and its five-patch enrichment.

    The second cover adds four squares of edge 0.6 centered at
    ``(0.3|0.7, 0.3|0.7)``.  With holes, every patch is cut first.
    """
    centers = [(0.3, 0.3), (0.7, 0.3), (0.3, 0.7), (0.7, 0.7)]
    cover0 = Cover([], 0, next_id=0)
    cover0.patches.extend(
        cut_patch(Patch.square(cover0.new_id(), (0.5, 0.5), 1.0), domain, cover0.new_id)
    )
    cover1 = Cover(list(cover0.patches), 1, next_id=cover0.next_id)
    for c in centers:
        p = Patch.square(cover1.new_id(), c, 0.6, level=1)
        cover1.patches.extend(cut_patch(p, domain, cover1.new_id))
    return cover0, cover1


def _keep(rect: Rect, original_area: float, max_aspect: float, min_area_ratio: float) -> bool:
    w, h = rect.width, rect.height
    if w <= 0 or h <= 0:
        return False
    if max(w, h) / min(w, h) > max_aspect:
        return False
    return rect.area * min_area_ratio >= original_area


def _rect_minus_hole(r: Rect, hole: Rect) -> list[Rect]:
    """Maximal rectangles whose union is ``r`` minus ``hole``."""
    out = []
    if hole.x0 > r.x0:
        out.append(Rect(r.x0, r.y0, hole.x0, r.y1))
    if hole.x1 < r.x1:
        out.append(Rect(hole.x1, r.y0, r.x1, r.y1))
    if hole.y0 > r.y0:
        out.append(Rect(r.x0, r.y0, r.x1, hole.y0))
    if hole.y1 < r.y1:
        out.append(Rect(r.x0, hole.y1, r.x1, r.y1))
    return out


def split_quadrants(r: Rect, overlap: float = 0.1) -> list[Rect]:
    """Four sub-rectangles tiling ``r`` with ``overlap`` relative linear overlap."""
    fx = 0.5 + 0.5 * overlap
    xs = [(r.x0, r.x0 + fx * r.width), (r.x1 - fx * r.width, r.x1)]
    ys = [(r.y0, r.y0 + fx * r.height), (r.y1 - fx * r.height, r.y1)]
    return [Rect(x0, y0, x1, y1) for (y0, y1) in ys for (x0, x1) in xs]


def cut_patch(
    patch: Patch,
    domain: Domain,
    new_id=None,
    max_aspect: float = 100.0,
    min_area_ratio: float = 100.0,
    overlap: float = 0.1,
) -> list[Patch]:
    """Replace a patch by rectangles covering ``patch`` minus the holes.

    A patch meeting no hole comes back unchanged.  A patch meeting two or more
    holes is split into four overlapping quadrants, recursively.  A patch
    meeting exactly one hole becomes the (at most four) maximal rectangles of
    the difference.  Pieces with aspect ratio above ``max_aspect`` or area
    ``min_area_ratio`` times smaller than the original patch are dropped.

    ``new_id`` is a callable returning fresh ids; pieces keep the level of the
    original patch.
    """
    if new_id is None:
        counter = itertools.count(patch.id + 1)
        new_id = counter.__next__
    original_area = patch.area
    hits = [h for h in domain.holes if patch.rect.interior_overlap(h) is not None]
    if not hits:
        return [patch]

    pieces: list[Rect] = []

    def recurse(r: Rect, depth: int):
        hit = [h for h in domain.holes if r.interior_overlap(h) is not None]
        if not hit:
            pieces.append(r)
        elif len(hit) == 1:
            pieces.extend(_rect_minus_hole(r, r.interior_overlap(hit[0])))
        elif depth > 30:
            raise RuntimeError("hole cutting did not separate the holes")
        else:
            for q in split_quadrants(r, overlap):
                recurse(q, depth + 1)

    recurse(patch.rect, 0)
    return [
        Patch.from_rect(new_id(), r, patch.level)
        for r in pieces
        if _keep(r, original_area, max_aspect, min_area_ratio)
    ]


def cover_check(cover, domain: Domain = UNIT_SQUARE, grid_n: int = 101) -> bool:
    """True iff every sample of a ``grid_n x grid_n`` grid in the domain is covered."""
    return bool(uncovered_points(cover, domain, grid_n).shape[0] == 0)


def uncovered_points(cover, domain: Domain = UNIT_SQUARE, grid_n: int = 101) -> np.ndarray:
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    t = np.linspace(0.0, 1.0, grid_n)
    pts = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = pts[domain.inside(pts)]
    covered = np.zeros(len(pts), dtype=bool)
    # small slack so that patch edges computed as c +- h/2 still count as closed
    eps = 1e-12
    for p in cover:
        r = p.rect
        covered |= (
            (pts[:, 0] >= r.x0 - eps)
            & (pts[:, 0] <= r.x1 + eps)
            & (pts[:, 1] >= r.y0 - eps)
            & (pts[:, 1] <= r.y1 + eps)
        )
    return pts[~covered]
