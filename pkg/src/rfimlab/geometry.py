"""Finite sublattices of Z^2: boxes, annuli, rotated rectangles, boundaries,
coverings and intrinsic (induced-subgraph) distances.

Sites are plain (x, y) integer tuples.  Regions are either one of the shape
classes below or any iterable of sites; every operation normalizes through
`site_set`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

Site = tuple[int, int]

NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def neighbors(v: Site):
    x, y = v
    return ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))


@dataclass(frozen=True)
class BoxRegion:
    """Box {v : |v - center|_inf <= radius}."""

    radius: int
    center: Site = (0, 0)

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def site_count(self) -> int:
        return self.side * self.side

    def contains(self, v: Site) -> bool:
        return (abs(v[0] - self.center[0]) <= self.radius
                and abs(v[1] - self.center[1]) <= self.radius)

    def sites(self):
        cx, cy = self.center
        r = self.radius
        return ((x, y)
                for x in range(cx - r, cx + r + 1)
                for y in range(cy - r, cy + r + 1))

    def ring(self, k: int):
        """Sites at ell_inf distance exactly k from the center (k <= radius)."""
        if k > self.radius:
            raise ValueError("ring outside box")
        cx, cy = self.center
        if k == 0:
            return [(cx, cy)]
        out = []
        for x in range(cx - k, cx + k + 1):
            out.append((x, cy + k))
            out.append((x, cy - k))
        for y in range(cy - k + 1, cy + k):
            out.append((cx + k, y))
            out.append((cx - k, y))
        return out


@dataclass(frozen=True)
class Annulus:
    """outer \\ inner for concentric boxes, inner strictly smaller."""

    outer: BoxRegion
    inner: BoxRegion

    def __post_init__(self):
        if self.inner.center != self.outer.center:
            raise ValueError("annulus boxes must be concentric")
        if self.inner.radius >= self.outer.radius:
            raise ValueError("inner radius must be < outer radius")

    def contains(self, v: Site) -> bool:
        return self.outer.contains(v) and not self.inner.contains(v)

    def sites(self):
        return (v for v in self.outer.sites() if not self.inner.contains(v))

    @property
    def site_count(self) -> int:
        return self.outer.site_count - self.inner.site_count


@dataclass(frozen=True)
class Rectangle:
    """Possibly rotated rectangle; a site belongs if its point lies in the
    closed rectangle (membership via inverse rotation)."""

    center: tuple[float, float]
    half_lengths: tuple[float, float]
    angle: float = 0.0

    def __post_init__(self):
        if min(self.half_lengths) <= 0:
            raise ValueError("degenerate rectangle")

    @property
    def long_side(self) -> float:
        return 2.0 * max(self.half_lengths)

    @property
    def aspect_ratio(self) -> float:
        return max(self.half_lengths) / min(self.half_lengths)

    def to_local(self, v) -> tuple[float, float]:
        dx = v[0] - self.center[0]
        dy = v[1] - self.center[1]
        c, s = math.cos(-self.angle), math.sin(-self.angle)
        return (c * dx - s * dy, s * dx + c * dy)

    def contains(self, v) -> bool:
        u, w = self.to_local(v)
        tol = 1e-12
        return (abs(u) <= self.half_lengths[0] + tol
                and abs(w) <= self.half_lengths[1] + tol)

    def sites(self):
        reach = math.hypot(*self.half_lengths)
        x0 = math.floor(self.center[0] - reach)
        x1 = math.ceil(self.center[0] + reach)
        y0 = math.floor(self.center[1] - reach)
        y1 = math.ceil(self.center[1] + reach)
        return ((x, y)
                for x in range(x0, x1 + 1)
                for y in range(y0, y1 + 1)
                if self.contains((x, y)))


def site_set(region) -> frozenset:
    """Normalize any region-like argument to a frozenset of sites."""
    if isinstance(region, frozenset):
        return region
    if isinstance(region, (BoxRegion, Annulus, Rectangle)):
        return frozenset(region.sites())
    return frozenset((int(x), int(y)) for (x, y) in region)


def boundary(region) -> frozenset:
    """External boundary: sites outside the region adjacent (|u-v|_1 = 1) to it."""
    sites = site_set(region)
    out = set()
    for v in sites:
        for u in neighbors(v):
            if u not in sites:
                out.add(u)
    return frozenset(out)


def edge_set(a, b) -> list[tuple[Site, Site]]:
    """Ordered adjacent pairs <u, v> with u in A, v in B."""
    sa, sb = site_set(a), site_set(b)
    return [(u, v) for u in sorted(sa) for v in neighbors(u) if v in sb]


def intrinsic_distance(carrier, a1, a2) -> float:
    """Graph distance between A1 and A2 inside the induced subgraph on the
    carrier; inf when either intersection is empty or no path exists."""
    c = site_set(carrier)
    src = site_set(a1) & c
    dst = site_set(a2) & c
    if not src or not dst:
        return math.inf
    if src & dst:
        return 0
    dist = {v: 0 for v in src}
    q = deque(src)
    while q:
        v = q.popleft()
        d = dist[v]
        for u in neighbors(v):
            if u in c and u not in dist:
                if u in dst:
                    return d + 1
                dist[u] = d + 1
                q.append(u)
    return math.inf


def _shape_center_and_ell(shape):
    if isinstance(shape, BoxRegion):
        return (float(shape.center[0]), float(shape.center[1])), 2.0 * shape.radius
    if isinstance(shape, Rectangle):
        return shape.center, shape.long_side
    raise TypeError(f"cannot enlarge {type(shape).__name__}")


def enlarge(shape, factor: str) -> BoxRegion:
    """Concentric axis-parallel enlargement.

    factor: "Large" -> side 32*ell, "Big" -> side 4*ell, "large" -> doubled side,
    where ell is the longer side length of the shape.  Radii are floored.
    """
    center, ell = _shape_center_and_ell(shape)
    if factor == "Large":
        side = 32.0 * ell
    elif factor == "Big":
        side = 4.0 * ell
    elif factor == "large":
        side = 2.0 * ell
    else:
        raise ValueError(f"unknown enlargement factor {factor!r}")
    cx, cy = int(round(center[0])), int(round(center[1]))
    radius = int(side // 2)
    return BoxRegion(radius=radius, center=(cx, cy))


def cover_annulus(N: int, tile_radius: int) -> list[BoxRegion]:
    """Cover the frame Lambda_{N/2} \\ Lambda_{N/4} with translated copies of
    Lambda_{tile_radius}.  Each tile stays inside the frame; the Big
    enlargement (side 4 * tile side) of every tile avoids Lambda_{N/8} and
    stays inside Lambda_N.
    """
    if N < 32 or N & (N - 1):
        raise ValueError("N must be a power of two >= 32")
    if tile_radius < 1:
        raise ValueError("tile_radius must be >= 1")
    lo = N // 4 + 1          # innermost coordinate of the frame
    hi = N // 2              # outermost coordinate
    rt = tile_radius
    s = 2 * rt + 1

    def centers_1d(a, b):
        """Tile centers so that [c-rt, c+rt] boxes cover [a, b] staying inside."""
        if b - a + 1 < s:
            raise ValueError("frame too thin for the tile size")
        cs = list(range(a + rt, b - rt + 1, s))
        if cs[-1] + rt < b:
            cs.append(b - rt)
        return cs

    tiles = []
    # four strips partitioning the frame: top/bottom full width, left/right rest
    xs_full = centers_1d(-N // 2, N // 2)
    ys_band = centers_1d(lo, hi)
    for cy in ys_band:
        for cx in xs_full:
            tiles.append(BoxRegion(rt, (cx, cy)))
            tiles.append(BoxRegion(rt, (cx, -cy)))
    ys_mid = centers_1d(-N // 4, N // 4)
    xs_band = centers_1d(lo, hi)
    for cx in xs_band:
        for cy in ys_mid:
            tiles.append(BoxRegion(rt, (cx, cy)))
            tiles.append(BoxRegion(rt, (-cx, cy)))

    for t in tiles:
        big = enlarge(t, "Big")  # side 4 * (2 * rt), radius 4 * rt
        bx, by = big.center
        if (max(abs(bx), abs(by)) - big.radius) <= N // 8:
            raise ValueError("Big enlargement intersects the inner guard box")
        if max(abs(bx), abs(by)) + big.radius > N:
            raise ValueError("Big enlargement escapes the ambient box")
    return tiles


def bounding_box(sites) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1) inclusive bounds."""
    xs = [v[0] for v in sites]
    ys = [v[1] for v in sites]
    return min(xs), min(ys), max(xs), max(ys)


class GridIndex:
    """Dense index of a site set over its bounding box, for array-based kernels.

    Orders sites in raster order: y descending then x ascending (top row first),
    matching the sweep order used by the samplers.
    """

    def __init__(self, region):
        sites = site_set(region)
        if not sites:
            raise ValueError("empty region")
        x0, y0, x1, y1 = bounding_box(sites)
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1
        self.width = x1 - x0 + 1
        self.height = y1 - y0 + 1
        self.mask = np.zeros((self.height, self.width), dtype=bool)
        for (x, y) in sites:
            self.mask[y - y0, x - x0] = True
        self.sites = [(x, y)
                      for y in range(y1, y0 - 1, -1)
                      for x in range(x0, x1 + 1)
                      if self.mask[y - y0, x - x0]]
        self.index = {v: i for i, v in enumerate(self.sites)}
        self.n = len(self.sites)

    def rows_cols(self) -> tuple[np.ndarray, np.ndarray]:
        ij = np.array([[v[1] - self.y0, v[0] - self.x0] for v in self.sites],
                      dtype=np.int64)
        return ij[:, 0], ij[:, 1]

    def contains(self, v: Site) -> bool:
        return v in self.index

    def interior_bonds(self) -> list[tuple[int, int]]:
        """Each unordered interior adjacent pair once, as index pairs."""
        bonds = []
        for v in self.sites:
            i = self.index[v]
            for u in ((v[0] + 1, v[1]), (v[0], v[1] + 1)):
                j = self.index.get(u)
                if j is not None:
                    bonds.append((i, j))
        return bonds

    def boundary_sites(self) -> frozenset:
        return boundary(self.sites)

    def boundary_adjacency(self) -> dict[Site, list[Site]]:
        """For each boundary site, the interior sites adjacent to it."""
        out = {}
        for v in self.sites:
            for u in neighbors(v):
                if u not in self.index:
                    out.setdefault(u, []).append(v)
        return out
