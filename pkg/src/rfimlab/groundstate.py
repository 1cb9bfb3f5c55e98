"""Exact T=0 ground states of the random-field ferromagnet via minimum cut,
plus agree/disagree labels for the plus/minus boundary pair.

Energy of sigma in {-1,+1}^region with boundary tau on the external boundary
and field h:

    H(sigma) = -( sum_{u~v interior} s_u s_v
                + sum_{u in region, v in boundary, u~v} s_u tau_v
                + sum_u s_u h_u )

each unordered adjacent pair counted once.  The pairwise terms are submodular,
so the exact minimizer is a source/sink min cut; the source side reads as +1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import maxflow
from .geometry import GridIndex, neighbors, site_set
from .randomfield import FieldSample

PLUS, MINUS, ZERO = "PLUS", "MINUS", "ZERO"

DEGENERACY_GAP = 1e-9


def _boundary_map(grid: GridIndex, boundary) -> dict:
    """Accepts +1/-1 scalar shorthand or an explicit site map."""
    bsites = grid.boundary_sites()
    if boundary in (1, -1):
        return {v: boundary for v in bsites}
    bmap = dict(boundary)
    missing = bsites - bmap.keys()
    if missing:
        raise ValueError(f"boundary map missing {len(missing)} sites")
    return {v: bmap[v] for v in bsites}


@dataclass
class SpinConfig:
    region: object
    grid: GridIndex
    spins_arr: np.ndarray  # int8, aligned with grid.sites
    boundary: dict
    degenerate: bool = False

    def spin(self, v) -> int:
        return int(self.spins_arr[self.grid.index[v]])

    def as_dict(self) -> dict:
        return {v: int(self.spins_arr[i]) for i, v in enumerate(self.grid.sites)}

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("x,y,spin\n")
            for v in sorted(self.grid.sites):
                f.write(f"{v[0]},{v[1]},{self.spin(v)}\n")

    def to_runlength_json(self) -> dict:
        """Run-length encoding of (spin == +1) in the grid's raster order."""
        bits = (self.spins_arr > 0).astype(np.int8)
        runs = []
        cur, count = int(bits[0]), 0
        for b in bits:
            if int(b) == cur:
                count += 1
            else:
                runs.append(count)
                cur, count = int(b), 1
        runs.append(count)
        return {"first": int(bits[0]), "runs": runs,
                "bbox": [self.grid.x0, self.grid.y0, self.grid.x1, self.grid.y1]}


def hamiltonian(config: SpinConfig, field) -> float:
    grid = config.grid
    if isinstance(field, FieldSample):
        fval = field.value
    else:
        fval = lambda v: field[v]
    total = 0.0
    for v in grid.sites:
        sv = config.spin(v)
        total += sv * fval(v)
        for u in ((v[0] + 1, v[1]), (v[0], v[1] + 1)):
            if u in grid.index:
                total += sv * config.spin(u)
    for v in grid.sites:
        sv = config.spin(v)
        for u in neighbors(v):
            if u not in grid.index:
                total += sv * config.boundary[u]
    return -total


class GroundStateSolver:
    """Caches the lattice structure of one region for repeated solves."""

    def __init__(self, region):
        self.grid = GridIndex(region)
        g = self.grid
        self.bonds = np.array(g.interior_bonds(), dtype=np.int64).reshape(-1, 2)
        badj = g.boundary_adjacency()
        self.boundary_sites = sorted(badj)
        # per interior site, how many boundary neighbors it has under a
        # scalar boundary; and index lists to apply site-dependent boundaries
        self._badj_pairs = [(b, [g.index[v] for v in vs])
                            for b, vs in sorted(badj.items())]
        self.n = g.n
        self._fg = None
        self._bias_unit = np.zeros(self.n)
        for _, idxs in self._badj_pairs:
            for i in idxs:
                self._bias_unit[i] += 1.0

    def _bias_from_boundary(self, boundary) -> np.ndarray:
        """bias[v] = sum of boundary spins adjacent to v."""
        if boundary in (1, -1):
            return boundary * self._bias_unit
        bias = np.zeros(self.n)
        missing = [b for b, _ in self._badj_pairs if b not in boundary]
        if missing:
            raise ValueError(f"boundary map missing {len(missing)} sites")
        for b, idxs in self._badj_pairs:
            tau = boundary[b]
            if tau not in (1, -1):
                raise ValueError("boundary spins must be +-1")
            for i in idxs:
                bias[i] += tau
        return bias

    def _build_graph(self):
        """Static arc structure: interior bonds plus, for every site, both a
        source arc and a sink arc (the unused one gets capacity 0 per solve)."""
        n = self.n
        fg = maxflow.FlowGraph(n + 2, len(self.bonds) + 2 * n)
        s, t = n, n + 1
        for i, j in self.bonds:
            fg.add_edge(int(i), int(j), 2.0, 2.0)
        self._src_arc = np.empty(n, dtype=np.int64)
        self._snk_arc = np.empty(n, dtype=np.int64)
        for v in range(n):
            self._src_arc[v] = fg.add_edge(s, v, 0.0)
            self._snk_arc[v] = fg.add_edge(v, t, 0.0)
        self._fg = fg
        self._cap_template = fg.cap.copy()

    def solve_arrays(self, field_values: np.ndarray, boundary):
        """Returns (spins_min, spins_max, degenerate): the two extreme
        minimizers as int8 arrays (+1 = source side) and a tie flag."""
        n = self.n
        bias = self._bias_from_boundary(boundary)
        a = 2.0 * (np.asarray(field_values) + bias)
        if self._fg is None:
            self._build_graph()
        fg = self._fg
        s, t = n, n + 1
        cap = self._cap_template.copy()
        cap[self._src_arc] = np.maximum(a, 0.0)
        cap[self._snk_arc] = np.maximum(-a, 0.0)
        fg.cap = cap
        maxflow.max_flow(n + 2, s, t, fg.head, fg.nxt, fg.to, fg.cap)
        src_side = maxflow.residual_reachable(n + 2, s, fg.head, fg.nxt,
                                              fg.to, fg.cap, True)
        sink_side = maxflow.residual_reachable(n + 2, t, fg.head, fg.nxt,
                                               fg.to, fg.cap, False)
        spins_min = np.where(src_side[:n] == 1, 1, -1).astype(np.int8)
        spins_max = np.where(sink_side[:n] == 1, -1, 1).astype(np.int8)
        degenerate = bool(np.any(spins_min != spins_max))
        return spins_min, spins_max, degenerate

    def disagreements(self, field_values: np.ndarray) -> np.ndarray:
        """Boolean array: sites where the plus- and minus-boundary ground
        states differ.  Uses the maximal minimizer for plus boundary and the
        minimal one for minus so ordering holds even under ties."""
        _, sp, _ = self.solve_arrays(field_values, 1)
        sm, _, _ = self.solve_arrays(field_values, -1)
        if np.any(sp < sm):
            raise AssertionError("plus ground state fails to dominate")
        return sp != sm


def ground_state(region, field, boundary) -> SpinConfig:
    solver = GroundStateSolver(region)
    grid = solver.grid
    if isinstance(field, FieldSample):
        vals = np.array([field.value(v) for v in grid.sites])
    else:
        vals = np.array([field[v] for v in grid.sites])
    smin, smax, degen = solver.solve_arrays(vals, boundary)
    bmap = _boundary_map(grid, boundary)
    return SpinConfig(region=region, grid=grid, spins_arr=smin,
                      boundary=bmap, degenerate=degen)


@dataclass
class XiLabeling:
    region: object
    grid: GridIndex
    labels_arr: np.ndarray  # int8: +1 PLUS, -1 MINUS, 0 ZERO
    degenerate: bool

    def label(self, v) -> str:
        x = int(self.labels_arr[self.grid.index[v]])
        return {1: PLUS, -1: MINUS, 0: ZERO}[x]

    def disagreement_set(self) -> frozenset:
        return frozenset(v for i, v in enumerate(self.grid.sites)
                         if self.labels_arr[i] == 0)


def xi_labels(region, field) -> XiLabeling:
    solver = GroundStateSolver(region)
    grid = solver.grid
    if isinstance(field, FieldSample):
        vals = np.array([field.value(v) for v in grid.sites])
    else:
        vals = np.array([field[v] for v in grid.sites])
    _, sp, dp = solver.solve_arrays(vals, 1)
    sm, _, dm = solver.solve_arrays(vals, -1)
    if np.any(sp < sm):
        raise AssertionError("sigma+ >= sigma- violated (solver bug or tie)")
    labels = np.where(sp == sm, sp, 0).astype(np.int8)
    return XiLabeling(region=region, grid=grid, labels_arr=labels,
                      degenerate=dp or dm)


def disagreement_set(region, field) -> frozenset:
    return xi_labels(region, field).disagreement_set()


def restriction_monotonicity_check(field_b: FieldSample, subregion) -> bool:
    """True iff disagreements of the big region, restricted to the subregion,
    are contained in the subregion's own disagreement set."""
    big = disagreement_set(field_b.region, field_b)
    sub_sites = site_set(subregion)
    small = disagreement_set(subregion, field_b.restricted_to(subregion))
    return (big & sub_sites) <= small


def flip_inequality_report(labeling: XiLabeling, field) -> list[dict]:
    """For each 4-connected ZERO component S: the quantity
    h_S + #g(S,PLUS) - #g(S,MINUS) + #g(S,ZERO) (boundary sites of the
    ambient region count as ZERO, since the pair disagrees there)."""
    if isinstance(field, FieldSample):
        fval = field.value
    else:
        fval = lambda v: field[v]
    grid = labeling.grid
    zeros = labeling.disagreement_set()
    seen = set()
    reports = []
    for start in sorted(zeros):
        if start in seen:
            continue
        comp = {start}
        queue = [start]
        while queue:
            v = queue.pop()
            for u in neighbors(v):
                if u in zeros and u not in comp:
                    comp.add(u)
                    queue.append(u)
        seen |= comp
        h_s = sum(fval(v) for v in comp)
        g_plus = g_minus = g_zero = 0
        for v in comp:
            for u in neighbors(v):
                if u in comp:
                    continue
                if u not in grid.index:
                    g_zero += 1  # boundary pair is (+1, -1)
                else:
                    lab = labeling.labels_arr[grid.index[u]]
                    if lab > 0:
                        g_plus += 1
                    elif lab < 0:
                        g_minus += 1
                    else:
                        g_zero += 1
        value = h_s + g_plus - g_minus + g_zero
        reports.append({"component_size": len(comp), "value": value,
                        "holds": value >= -1e-9})
    return reports
