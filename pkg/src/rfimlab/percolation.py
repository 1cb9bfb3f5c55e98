"""Crossing events, separating circuits and planar duality, outermost
contours, lattice animals and coarse-grained box percolation.

Convention (made exact by the duality self-test): connecting paths use
4-adjacency, separating circuits use 8-adjacency.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import (Annulus, BoxRegion, Rectangle, neighbors, site_set)

EIGHT_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1),
                 (1, 1), (1, -1), (-1, 1), (-1, -1))


def neighbors8(v):
    x, y = v
    return tuple((x + dx, y + dy) for dx, dy in EIGHT_OFFSETS)


@dataclass(frozen=True)
class CrossingQuery:
    shape: object
    carrier: frozenset
    mode: str  # rectangle-short-sides | annulus-easy | annulus-hard


def _four_connected(sources, targets, allowed) -> bool:
    sources = [v for v in sources if v in allowed]
    targets = set(t for t in targets if t in allowed)
    if not sources or not targets:
        return False
    seen = set(sources)
    q = deque(sources)
    while q:
        v = q.popleft()
        if v in targets:
            return True
        for u in neighbors(v):
            if u in allowed and u not in seen:
                seen.add(u)
                q.append(u)
    return False


def cross_rectangle(shape: Rectangle, carrier) -> bool:
    """4-connected path in carrier inside the rectangle joining the two short
    sides; endpoints lie within distance < 1 of each short side (measured
    along the long axis in the rectangle frame)."""
    if min(shape.half_lengths) <= 0:
        raise ValueError("degenerate rectangle")
    carrier = site_set(carrier)
    inside = [v for v in shape.sites() if v in carrier]
    long_axis = 0 if shape.half_lengths[0] >= shape.half_lengths[1] else 1
    hl = shape.half_lengths[long_axis]
    side_a, side_b = [], []
    for v in inside:
        u = shape.to_local(v)[long_axis]
        if hl - u < 1.0:
            side_a.append(v)
        if hl + u < 1.0:
            side_b.append(v)
    return _four_connected(side_a, side_b, frozenset(inside))


def _annulus_rings(annulus: Annulus):
    inner_touch = annulus.inner.radius + 1
    outer_rim = annulus.outer.radius
    cx, cy = annulus.outer.center
    ring_in = {v for v in annulus.sites()
               if max(abs(v[0] - cx), abs(v[1] - cy)) == inner_touch}
    ring_out = {v for v in annulus.sites()
                if max(abs(v[0] - cx), abs(v[1] - cy)) == outer_rim}
    return ring_in, ring_out


def cross_annulus_easy(annulus: Annulus, carrier) -> bool:
    """4-connected path in carrier from the innermost to the outermost ring
    of the annulus."""
    carrier = site_set(carrier)
    ring_in, ring_out = _annulus_rings(annulus)
    allowed = frozenset(v for v in annulus.sites() if v in carrier)
    return _four_connected(ring_in & allowed, ring_out, allowed)


def _eight_components(cells: set) -> list:
    comps = []
    left = set(cells)
    while left:
        start = left.pop()
        comp = {start}
        q = [start]
        while q:
            v = q.pop()
            for u in neighbors8(v):
                if u in left:
                    left.remove(u)
                    comp.add(u)
                    q.append(u)
        comps.append(comp)
    return comps


def cross_annulus_hard(annulus: Annulus, carrier) -> bool:
    """An 8-connected circuit within the carrier separating the inner box
    from the outside: some 8-component of carrier-in-annulus whose removal
    4-disconnects the innermost ring from the outermost ring (through any
    annulus cells)."""
    if annulus.inner.radius >= annulus.outer.radius:
        raise ValueError("inner not strictly inside outer")
    carrier = site_set(carrier)
    ann_sites = frozenset(annulus.sites())
    ring_in, ring_out = _annulus_rings(annulus)
    occupied = set(v for v in ann_sites if v in carrier)
    for comp in _eight_components(occupied):
        allowed = ann_sites - comp
        if not _four_connected(ring_in, ring_out, allowed):
            return True
    return False


def cross_annulus(query: CrossingQuery) -> bool:
    if query.mode == "annulus-easy":
        return cross_annulus_easy(query.shape, query.carrier)
    if query.mode == "annulus-hard":
        return cross_annulus_hard(query.shape, query.carrier)
    raise ValueError(f"bad mode {query.mode!r}")


def crossing(query: CrossingQuery) -> bool:
    if query.mode == "rectangle-short-sides":
        return cross_rectangle(query.shape, query.carrier)
    return cross_annulus(query)


def complement_easy_crossing(annulus: Annulus, carrier) -> bool:
    """Easy crossing of the annulus by the complement of the carrier."""
    carrier = site_set(carrier)
    comp = frozenset(v for v in annulus.sites() if v not in carrier)
    return cross_annulus_easy(annulus, comp)


def outermost_plus_contour(spins: dict, annulus: Annulus):
    """The outermost 8-connected circuit of +1 sites in the annulus
    surrounding the inner box, or None.

    Built from outside in: flood the non-plus cells 4-connectedly from the
    outside; the plus sites 4-adjacent to that flooded outside (or sitting on
    the outer rim) form the outermost interface, the outer site boundary of a
    4-connected set, which is 8-connected.  The interface is a surrounding
    circuit iff the flood never reaches the inner ring, and it only depends on
    spins on or outside itself: sites neither in the flood nor 4-adjacent to
    it cannot change either.
    """
    ann_sites = frozenset(annulus.sites())
    plus = {v for v in ann_sites if spins[v] == 1}
    ring_in, ring_out = _annulus_rings(annulus)
    outside_seed = [v for v in ring_out if v not in plus]
    flood = set(outside_seed)
    q = deque(outside_seed)
    while q:
        v = q.popleft()
        for u in neighbors(v):
            if u in ann_sites and u not in plus and u not in flood:
                flood.add(u)
                q.append(u)
    if flood & ring_in:
        return None
    # the inner ring might itself be blocked by plus sites; check separation
    if not plus:
        return None
    contour = {p for p in plus
               if p in ring_out or any(u in flood for u in neighbors(p))}
    return frozenset(contour) if contour else None


@dataclass
class BoxGrid:
    """Partition of Lambda_N into side-N' boxes anchored at the lower-left
    corner; partial boxes at the two far edges are dropped."""

    N: int
    n_prime: int

    def __post_init__(self):
        side = 2 * self.N + 1
        self.cells_per_axis = side // self.n_prime
        if self.cells_per_axis < 1:
            raise ValueError("box side exceeds the region")
        self.open_flags = np.zeros((self.cells_per_axis, self.cells_per_axis),
                                   dtype=bool)

    def box_sites(self, bx: int, by: int) -> list:
        x0 = -self.N + bx * self.n_prime
        y0 = -self.N + by * self.n_prime
        return [(x, y) for x in range(x0, x0 + self.n_prime)
                for y in range(y0, y0 + self.n_prime)]

    def box_center(self, bx: int, by: int):
        x0 = -self.N + bx * self.n_prime
        y0 = -self.N + by * self.n_prime
        return (x0 + (self.n_prime - 1) / 2.0, y0 + (self.n_prime - 1) / 2.0)

    def boxes(self):
        return [(bx, by) for bx in range(self.cells_per_axis)
                for by in range(self.cells_per_axis)]


def coarse_grain_scan(N: int, n_prime: int, open_definition, instances: int,
                      seeds, epsilon: float = 1.0):
    """Coarse-grained box percolation scan at T=0.

    open_definition:
      "nonempty-disagreement" - a box is open when the disagreement set of its
        doubled concentric enlargement meets the box;
      ("distance", alpha)     - open when, inside the 32x concentric
        enlargement's disagreement set, the box rim connects to the doubled
        enlargement's rim within graph distance n_prime**alpha;
      "always-false"          - every box closed (calibration mode).

    Returns a ResultTable with one row per (instance seed, box); per-instance
    largest-animal sizes and the pooled open fraction land in the metadata.
    """
    from .experiments import ResultTable, wilson_interval
    from .geometry import BoxRegion, intrinsic_distance
    from .groundstate import GroundStateSolver
    from .randomfield import site_gaussian

    if isinstance(open_definition, tuple):
        mode, alpha = open_definition
        if mode != "distance":
            raise ValueError(f"bad open definition {open_definition!r}")
    else:
        mode, alpha = open_definition, None
        if mode not in ("nonempty-disagreement", "always-false"):
            raise ValueError(f"bad open definition {open_definition!r}")

    grid = BoxGrid(N, n_prime)
    probe_radius = n_prime if mode != "distance" else 16 * n_prime
    if 2 * probe_radius + 1 <= n_prime:
        raise ValueError("enlargement smaller than the box itself")
    probe = BoxRegion(probe_radius)
    solver = GroundStateSolver(probe) if mode != "always-false" else None
    if solver is not None:
        xs = np.array([v[0] for v in solver.grid.sites])
        ys = np.array([v[1] for v in solver.grid.sites])

    table = ResultTable(columns=("seed", "bx", "by", "open"))
    animals, open_total, box_total = [], 0, 0
    for seed in seeds[:instances]:
        grid.open_flags[:] = False
        for (bx, by) in grid.boxes():
            is_open = False
            if mode != "always-false":
                cx, cy = grid.box_center(bx, by)
                cx, cy = int(round(cx)), int(round(cy))
                vals = site_gaussian(seed, xs + cx, ys + cy, epsilon)
                dis = solver.disagreements(vals)
                dsites = {(int(xs[i]) + cx, int(ys[i]) + cy)
                          for i in np.flatnonzero(dis)}
                box = set(grid.box_sites(bx, by))
                if mode == "nonempty-disagreement":
                    is_open = bool(dsites & box)
                else:
                    rim = {v for v in box
                           if any(u not in box for u in neighbors(v))}
                    outer = {(x + cx, y + cy) for (x, y) in
                             BoxRegion(n_prime).ring(n_prime)}
                    d = intrinsic_distance(dsites, rim, outer)
                    is_open = d <= n_prime ** alpha
            grid.open_flags[bx, by] = is_open
            open_total += int(is_open)
            box_total += 1
            table.add(seed=seed, bx=bx, by=by, open=int(is_open))
        animals.append(largest_lattice_animal(grid))
    p_hat = open_total / box_total if box_total else 0.0
    table.metadata.update({
        "N": N, "n_prime": n_prime, "mode": mode, "alpha": alpha,
        "epsilon": epsilon, "p_hat": p_hat,
        "p_wilson95": wilson_interval(open_total, box_total),
        "largest_animals": animals,
    })
    return table


def largest_lattice_animal(grid: BoxGrid) -> int:
    """Largest 8-connected (ell_inf-adjacent) component of open boxes."""
    flags = grid.open_flags
    seen = np.zeros_like(flags)
    best = 0
    idx = np.argwhere(flags)
    for (i, j) in idx:
        if seen[i, j]:
            continue
        size = 0
        q = [(i, j)]
        seen[i, j] = True
        while q:
            a, b = q.pop()
            size += 1
            for da in (-1, 0, 1):
                for db in (-1, 0, 1):
                    na, nb = a + da, b + db
                    if (0 <= na < flags.shape[0] and 0 <= nb < flags.shape[1]
                            and flags[na, nb] and not seen[na, nb]):
                        seen[na, nb] = True
                        q.append((na, nb))
        best = max(best, size)
    return best
