import networkx as nx
import numpy as np
import pytest

from rfimlab.geometry import Annulus, BoxRegion, Rectangle, neighbors, site_set
from rfimlab.percolation import (BoxGrid, CrossingQuery,
                                 coarse_grain_scan, complement_easy_crossing,
                                 cross_annulus_easy, cross_annulus_hard,
                                 cross_rectangle, crossing,
                                 largest_lattice_animal, neighbors8,
                                 outermost_plus_contour)


def test_neighbors8():
    assert len(set(neighbors8((0, 0)))) == 8
    assert (1, 1) in neighbors8((0, 0)) and (2, 0) not in neighbors8((0, 0))


def test_duality_on_random_bitmaps():
    # hard crossing by the carrier iff no easy crossing by its complement
    ann = Annulus(BoxRegion(8), BoxRegion(4))
    sites = sorted(ann.sites())
    rng = np.random.default_rng(0)
    for trial in range(100):
        p = rng.uniform(0.2, 0.8)
        carrier = frozenset(v for v in sites if rng.random() < p)
        assert cross_annulus_hard(ann, carrier) == (
            not complement_easy_crossing(ann, carrier))


def test_rectangle_crossing_against_networkx():
    rect = Rectangle(center=(0.0, 0.0), half_lengths=(5.0, 2.0))
    inside = sorted(rect.sites())
    rng = np.random.default_rng(3)
    for trial in range(40):
        carrier = frozenset(v for v in inside if rng.random() < 0.6)
        g = nx.Graph()
        g.add_nodes_from(carrier)
        for v in carrier:
            for u in neighbors(v):
                if u in carrier:
                    g.add_edge(v, u)
        left = [v for v in carrier if v[0] == -5]
        right = [v for v in carrier if v[0] == 5]
        want = any(nx.has_path(g, a, b) for a in left for b in right)
        assert cross_rectangle(rect, carrier) == want


def test_annulus_ring_carriers():
    ann = Annulus(BoxRegion(4), BoxRegion(2))
    one_ring = frozenset(v for v in ann.sites()
                         if max(abs(v[0]), abs(v[1])) == 3)
    assert cross_annulus_hard(ann, one_ring)
    assert not cross_annulus_easy(ann, one_ring)
    full = frozenset(ann.sites())
    assert cross_annulus_hard(ann, full)
    assert cross_annulus_easy(ann, full)
    assert not cross_annulus_hard(ann, frozenset())
    assert not cross_annulus_easy(ann, frozenset())


def test_crossing_query_dispatch():
    ann = Annulus(BoxRegion(4), BoxRegion(2))
    full = frozenset(ann.sites())
    assert crossing(CrossingQuery(ann, full, "annulus-easy"))
    assert crossing(CrossingQuery(ann, full, "annulus-hard"))
    rect = Rectangle(center=(0.0, 0.0), half_lengths=(3.0, 1.0))
    assert crossing(CrossingQuery(rect, frozenset(rect.sites()),
                                  "rectangle-short-sides"))
    with pytest.raises(ValueError):
        crossing(CrossingQuery(ann, full, "sideways"))


def test_contour_constant_spins():
    ann = Annulus(BoxRegion(4), BoxRegion(2))
    all_plus = {v: 1 for v in ann.sites()}
    c = outermost_plus_contour(all_plus, ann)
    assert c == {v for v in ann.sites() if max(abs(v[0]), abs(v[1])) == 4}
    all_minus = {v: -1 for v in ann.sites()}
    assert outermost_plus_contour(all_minus, ann) is None


def test_contour_separates_and_pairs_with_complement_crossing():
    ann = Annulus(BoxRegion(5), BoxRegion(2))
    rng = np.random.default_rng(7)
    found = 0
    for trial in range(300):
        spins = {v: (1 if rng.random() < 0.6 else -1) for v in ann.sites()}
        c = outermost_plus_contour(spins, ann)
        minus_carrier = frozenset(v for v in ann.sites() if spins[v] == -1)
        if c is None:
            assert cross_annulus_easy(ann, minus_carrier)
        else:
            found += 1
            assert cross_annulus_hard(ann, c)
            assert not cross_annulus_easy(ann, minus_carrier)
    assert found > 10


def test_contour_ignores_interior_spins():
    # flipping spins strictly inside the contour leaves it unchanged
    ann = Annulus(BoxRegion(5), BoxRegion(2))
    rng = np.random.default_rng(11)
    checked = 0
    for trial in range(200):
        spins = {v: (1 if rng.random() < 0.65 else -1) for v in ann.sites()}
        c = outermost_plus_contour(spins, ann)
        if c is None:
            continue
        # the interior is whatever a 4-connected flood from the outer rim,
        # blocked by the contour, cannot reach
        flood_allowed = {v for v in ann.sites() if v not in c}
        interior = set(ann.sites()) - set(c)
        seed0 = [v for v in ann.sites()
                 if max(abs(v[0]), abs(v[1])) == 5 and v not in c]
        stack = list(seed0)
        reached = set(seed0)
        while stack:
            v = stack.pop()
            for u in neighbors(v):
                if u in flood_allowed and u not in reached:
                    reached.add(u)
                    stack.append(u)
        interior -= reached
        if not interior:
            continue
        checked += 1
        flipped = dict(spins)
        for v in interior:
            flipped[v] = -spins[v]
        assert outermost_plus_contour(flipped, ann) == c
    assert checked > 10


def test_box_grid_partition():
    g = BoxGrid(4, 3)  # side 9, three boxes per axis
    assert g.cells_per_axis == 3
    assert len(g.boxes()) == 9
    sites = [set(g.box_sites(bx, by)) for (bx, by) in g.boxes()]
    union = set().union(*sites)
    assert len(union) == 81 and union == site_set(BoxRegion(4))
    g2 = BoxGrid(4, 4)  # side 9, one partial strip dropped
    assert g2.cells_per_axis == 2
    with pytest.raises(ValueError):
        BoxGrid(1, 9)


def union_find_largest(flags):
    """Independent oracle for the largest 8-connected open component."""
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ij in map(tuple, np.argwhere(flags)):
        parent[ij] = ij
    for (i, j) in list(parent):
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                other = (i + di, j + dj)
                if other in parent:
                    parent[find((i, j))] = find(other)
    sizes = {}
    for ij in parent:
        r = find(ij)
        sizes[r] = sizes.get(r, 0) + 1
    return max(sizes.values(), default=0)


def test_largest_animal_matches_union_find():
    rng = np.random.default_rng(2)
    for trial in range(30):
        g = BoxGrid(7, 3)
        g.open_flags = rng.random(g.open_flags.shape) < 0.4
        assert largest_lattice_animal(g) == union_find_largest(g.open_flags)
    g = BoxGrid(7, 3)
    g.open_flags[:] = True
    assert largest_lattice_animal(g) == g.cells_per_axis ** 2
    g.open_flags[:] = False
    assert largest_lattice_animal(g) == 0


def test_coarse_grain_scan_calibration_mode():
    t = coarse_grain_scan(4, 3, "always-false", 2, seeds=[1, 2])
    assert t.metadata["p_hat"] == 0.0
    assert t.metadata["largest_animals"] == [0, 0]
    assert len(t.column("open")) == 2 * 9
    with pytest.raises(ValueError):
        coarse_grain_scan(4, 3, "never-heard-of-it", 1, seeds=[1])


def test_coarse_grain_scan_nonempty_mode():
    t = coarse_grain_scan(4, 3, "nonempty-disagreement", 3, seeds=[5, 6, 7],
                          epsilon=1.0)
    opens = t.column("open")
    assert len(opens) == 3 * 9
    assert set(opens) <= {0, 1}
    lo, hi = t.metadata["p_wilson95"]
    assert 0.0 <= lo <= t.metadata["p_hat"] <= hi <= 1.0
