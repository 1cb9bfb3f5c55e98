"""Adaptive admissible couplings of ordered (boundary, field) families.

Two sampling backends:

* exact mode — every step draws one site from the exact conditional marginal
  of each measure (enumeration on the full region), all chains sharing one
  uniform through the monotone threshold rule: sigma_i = -1 iff
  U <= 1 - theta_i(+1).
* lockstep-cftp mode — steps are blocks: the joint conditional law of the
  whole unexplored remainder is drawn by a grand monotone CFTP with a shared
  stream, and only the block's sites are kept.  Marginals stay exact and the
  coupling stays admissible, but it is a different admissible coupling than
  the site-by-site one; traces record which mode produced them.

On top of these run the two exploration schedules: the multi-phase
shell/stage procedure and the breadth-first frontier growth, plus the
hat-boundary transform of the admissible 4-tuples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

from .cftp import (DEFAULT_MAX_POW, _chain_ext, _family_order, _grand_cftp,
                   BudgetError, derive_seed)
from .geometry import BoxRegion, GridIndex, neighbors, site_set
from .gibbs import EnumGibbs, GibbsSpec
from .randomfield import keyed_uniform

STREAM_COUPLING = 0x33

EXACT_LIMIT = 18  # free spins for the enumeration backend

# admissible local 4-tuples (tau+, tau-, tau~+, tau~-), Table rows a..f
ADMISSIBLE_ROWS = {
    "a": (-1, -1, -1, -1),
    "b": (-1, -1, +1, -1),
    "c": (-1, -1, +1, +1),
    "d": (+1, +1, +1, +1),
    "e": (+1, -1, +1, +1),
    "f": (+1, -1, +1, -1),
}
ROW_OF = {v: k for k, v in ADMISSIBLE_ROWS.items()}

HAT_MAP = {
    "a": (-1, -1, -1, -1),
    "b": (-1, -1, -1, -1),
    "c": (+1, +1, +1, +1),
    "d": (+1, +1, +1, +1),
    "e": (+1, +1, +1, +1),
    "f": (+1, -1, +1, -1),
}


@dataclass
class HatBoundary:
    original: dict  # site -> 4-tuple
    mapped: dict    # site -> 4-tuple

    def component(self, idx: int) -> dict:
        return {v: t[idx] for v, t in self.mapped.items()}


def hat_transform(tuples: dict) -> HatBoundary:
    mapped = {}
    for v, t in tuples.items():
        row = ROW_OF.get(tuple(t))
        if row is None:
            raise ValueError(f"inadmissible boundary 4-tuple {t} at {v}")
        mapped[v] = HAT_MAP[row]
    hb = HatBoundary(original=dict(tuples), mapped=mapped)
    for v in tuples:
        tp, tm, ttp, ttm = tuples[v]
        hp, hm, htp, htm = mapped[v]
        assert hp >= hm >= tm and ttp >= htp >= htm
        assert htp == hp >= tp and htm == hm == ttm
    return hb


def hat_disagreement_sites(tuples: dict) -> frozenset:
    """{v: tau^+=tau~+=+1 and tau^-=tau~-=-1}; equals the full-disagreement
    set of the hat tuples."""
    return frozenset(v for v, (tp, tm, ttp, ttm) in tuples.items()
                     if tp == ttp == 1 and tm == ttm == -1)


# ---------------------------------------------------------------------------
# trace plumbing

@dataclass
class CouplingStep:
    site: tuple
    spins: tuple           # one per chain
    thetas: tuple | None = None
    uniform: float | None = None
    block: int | None = None


@dataclass
class StageRecord:
    phase: int
    stage: int
    frontier: list
    event: str | None = None  # "empty" | "deep" | None


@dataclass
class CouplingTrace:
    mode: str
    k: int
    beta: float
    seed: int
    steps: list = dc_field(default_factory=list)
    stages: list = dc_field(default_factory=list)
    meta: dict = dc_field(default_factory=dict)

    def visit_order(self) -> list:
        return [s.site for s in self.steps]

    def spins_of(self, chain: int) -> dict:
        return {s.site: s.spins[chain] for s in self.steps}

    def to_json(self) -> str:
        return json.dumps({
            "schema": "trace_v1",
            "mode": self.mode,
            "k": self.k,
            "beta": self.beta,
            "seed": self.seed,
            "steps": [{
                "site": list(s.site),
                "spins": list(s.spins),
                "theta": None if s.thetas is None else list(s.thetas),
                "u": s.uniform,
                "block": s.block,
            } for s in self.steps],
            "stages": [{
                "phase": r.phase, "stage": r.stage,
                "frontier": [list(v) for v in r.frontier],
                "event": r.event,
            } for r in self.stages],
            "meta": self.meta,
        })

    @classmethod
    def from_json(cls, text: str) -> "CouplingTrace":
        d = json.loads(text)
        if d.get("schema") != "trace_v1":
            raise ValueError("unknown trace schema")
        tr = cls(mode=d["mode"], k=d["k"], beta=d["beta"], seed=d["seed"],
                 meta=d["meta"])
        for s in d["steps"]:
            tr.steps.append(CouplingStep(
                site=tuple(s["site"]), spins=tuple(s["spins"]),
                thetas=None if s["theta"] is None else tuple(s["theta"]),
                uniform=s["u"], block=s["block"]))
        for r in d["stages"]:
            tr.stages.append(StageRecord(
                phase=r["phase"], stage=r["stage"],
                frontier=[tuple(v) for v in r["frontier"]],
                event=r["event"]))
        return tr


# ---------------------------------------------------------------------------
# exact backend

@njit(cache=True)
def _static_exact_run(W, bits, order, uniforms, thetas, spins):
    """Site-by-site adaptive sampling along a fixed order.  W is consumed."""
    k, M = W.shape
    n = order.shape[0]
    for t in range(n):
        v = order[t]
        u = uniforms[t]
        for i in range(k):
            num = 0.0
            den = 0.0
            for m in range(M):
                w = W[i, m]
                den += w
                if bits[v, m]:
                    num += w
            th = num / den
            thetas[i, t] = th
            if u <= 1.0 - th:
                spins[i, t] = -1
                for m in range(M):
                    if bits[v, m]:
                        W[i, m] = 0.0
            else:
                spins[i, t] = 1
                for m in range(M):
                    if not bits[v, m]:
                        W[i, m] = 0.0


class ExactFamilySampler:
    """Reusable exact-conditional coupling engine over one instance."""

    def __init__(self, family: list):
        self.family = family
        self.k = len(family)
        self.grid = GridIndex(family[0].region)
        self.n = self.grid.n
        if self.n > EXACT_LIMIT:
            raise BudgetError(f"{self.n} free spins exceeds exact-mode limit")
        self.beta = family[0].beta
        engines = [EnumGibbs(sp) for sp in family]
        lws = np.stack([e.log_weights_full() for e in engines])
        self.W0 = np.exp(lws - lws.max(axis=1, keepdims=True))
        m = 1 << self.n
        idx = np.arange(m, dtype=np.uint32)
        self.bits = np.stack([((idx >> s) & 1).astype(np.uint8)
                              for s in range(self.n)])
        self.order_pairs = _family_order(family, [self.grid] * self.k)

    def _uniforms(self, seed, count):
        return np.asarray(keyed_uniform(seed, STREAM_COUPLING,
                                        np.arange(count), 0), dtype=np.float64)

    def run_order(self, order_sites: list, seed: int) -> CouplingTrace:
        """Run the coupling along a fully prefixed site order (fast path)."""
        order = np.array([self.grid.index[v] for v in order_sites],
                         dtype=np.int64)
        n = len(order)
        uniforms = self._uniforms(seed, n)
        thetas = np.empty((self.k, n))
        spins = np.empty((self.k, n), dtype=np.int8)
        _static_exact_run(self.W0.copy(), self.bits, order, uniforms,
                          thetas, spins)
        self._check_thresholds(thetas)
        trace = CouplingTrace(mode="exact", k=self.k, beta=self.beta, seed=seed)
        for t, v in enumerate(order_sites):
            trace.steps.append(CouplingStep(
                site=v, spins=tuple(int(s) for s in spins[:, t]),
                thetas=tuple(float(x) for x in thetas[:, t]),
                uniform=float(uniforms[t])))
        return trace

    def _check_thresholds(self, thetas):
        for lo, hi in self.order_pairs:
            if np.any(thetas[hi] < thetas[lo] - 1e-9):
                raise AssertionError("conditional marginals violate ordering")

    def start_run(self, seed: int) -> "ExactRunState":
        return ExactRunState(self, seed)


class ExactRunState:
    """Incremental run for adaptive (spin-dependent) exploration orders."""

    def __init__(self, sampler: ExactFamilySampler, seed: int):
        self.s = sampler
        self.seed = seed
        self.W = sampler.W0.copy()
        self.t = 0
        self.trace = CouplingTrace(mode="exact", k=sampler.k,
                                   beta=sampler.beta, seed=seed)
        self.revealed = {}

    def unexplored(self) -> list:
        return [v for v in self.s.grid.sites if v not in self.revealed]

    def reveal(self, site) -> tuple:
        b = self.s.bits[self.s.grid.index[site]].astype(bool)
        den = self.W.sum(axis=1)
        num = (self.W[:, b]).sum(axis=1)
        thetas = num / den
        for lo, hi in self.s.order_pairs:
            if thetas[hi] < thetas[lo] - 1e-9:
                raise AssertionError("conditional marginals violate ordering")
        u = float(keyed_uniform(self.seed, STREAM_COUPLING, self.t, 0))
        spins = tuple(-1 if u <= 1.0 - th else 1 for th in thetas)
        for i, sp in enumerate(spins):
            self.W[i, ~b if sp == 1 else b] = 0.0
        self.trace.steps.append(CouplingStep(
            site=site, spins=spins,
            thetas=tuple(float(x) for x in thetas), uniform=u))
        self.revealed[site] = spins
        self.t += 1
        return spins


# ---------------------------------------------------------------------------
# lockstep-CFTP backend

class BlockCouplingEngine:
    """Block-conditional sampling of a family by grand monotone CFTP on the
    unexplored remainder; array-based for speed."""

    def __init__(self, family: list, max_pow: int = DEFAULT_MAX_POW):
        self.family = family
        self.k = len(family)
        self.beta = family[0].beta
        self.grid = GridIndex(family[0].region)
        g = self.grid
        self.max_pow = max_pow
        self.ext_base = np.stack([_chain_ext(sp, g) for sp in family])
        self.mask0 = g.mask.copy()
        self.explored = np.zeros_like(self.mask0)
        self.revealed_sp = np.zeros((self.k,) + self.mask0.shape, dtype=np.int8)
        rows, cols = g.rows_cols()
        self._rows, self._cols = rows, cols
        self.revealed = {}
        self.blocks = 0
        self.order_pairs = _family_order(family, [g] * self.k)

    def _rc(self, v):
        return v[1] - self.grid.y0, v[0] - self.grid.x0

    def sample_block(self, keep_sites: list, seed: int) -> list:
        """Draw the conditional joint on the remainder, keep only
        `keep_sites`; returns their spin tuples in order."""
        mask_un = self.mask0 & ~self.explored
        ext = self.ext_base.copy()
        sp = self.revealed_sp.astype(np.float64)
        ext[:, 1:, :] += sp[:, :-1, :]
        ext[:, :-1, :] += sp[:, 1:, :]
        ext[:, :, 1:] += sp[:, :, :-1]
        ext[:, :, :-1] += sp[:, :, 1:]
        sel = mask_un[self._rows, self._cols]
        rows = self._rows[sel]
        cols = self._cols[sel]
        states, ok, _ = _grand_cftp(mask_un, ext, self.beta,
                                    np.uint64(seed & (2**64 - 1)),
                                    self.max_pow, rows, cols)
        if not ok:
            raise BudgetError("lockstep block failed to coalesce")
        out = []
        self.blocks += 1
        for v in keep_sites:
            r, c = self._rc(v)
            if not mask_un[r, c]:
                raise ValueError(f"site {v} already explored")
            spins = tuple(int(states[2 * i, r, c]) for i in range(self.k))
            self.revealed_sp[:, r, c] = spins
            self.explored[r, c] = True
            self.revealed[v] = spins
            out.append(spins)
        return out

    def unexplored(self) -> list:
        return [v for v in self.grid.sites if v not in self.revealed]


# ---------------------------------------------------------------------------
# samplers presented to the schedule drivers

class SiteSampler:
    """granularity "site": exact conditional per site."""

    granularity = "site"
    mode = "exact"

    def __init__(self, family, seed):
        self._run = ExactFamilySampler(family).start_run(seed)

    def sample_sites(self, sites):
        return [self._run.reveal(v) for v in sites]

    @property
    def trace(self):
        return self._run.trace

    def unexplored(self):
        return self._run.unexplored()


class BlockSampler:
    """granularity "block": lockstep-CFTP conditional blocks."""

    granularity = "block"
    mode = "lockstep-cftp"

    def __init__(self, family, seed, max_pow=DEFAULT_MAX_POW):
        self._eng = BlockCouplingEngine(family, max_pow)
        self._seed = seed
        self.trace = CouplingTrace(mode=self.mode, k=len(family),
                                   beta=family[0].beta, seed=seed)

    def sample_sites(self, sites):
        if not sites:
            return []
        blk = self._eng.blocks
        spins = self._eng.sample_block(sites, derive_seed(self._seed, blk))
        for v, sp in zip(sites, spins):
            self.trace.steps.append(CouplingStep(site=v, spins=sp, block=blk))
        return spins

    def unexplored(self):
        return self._eng.unexplored()


class ReplaySampler:
    """Feeds recorded spins back through a schedule driver."""

    def __init__(self, trace: CouplingTrace):
        self.granularity = "site" if trace.mode == "exact" else "block"
        self.mode = trace.mode
        self._spins = {s.site: s.spins for s in trace.steps}
        self._order = [s.site for s in trace.steps]
        self._cursor = 0
        self.trace = CouplingTrace(mode=trace.mode, k=trace.k,
                                   beta=trace.beta, seed=trace.seed,
                                   meta=dict(trace.meta))

    def sample_sites(self, sites):
        out = []
        for v in sites:
            if self._cursor >= len(self._order) or self._order[self._cursor] != v:
                raise AssertionError(f"replay order mismatch at {v}")
            self._cursor += 1
            sp = self._spins[v]
            self.trace.steps.append(CouplingStep(site=v, spins=sp))
            out.append(sp)
        return out

    def unexplored(self):
        return [v for v in self._order[self._cursor:]]


# ---------------------------------------------------------------------------
# generic adaptive run with a pluggable site-selection policy

def adaptive_admissible_sample(family, policy, seed,
                               mode: str = "exact"):
    """Runs the site-by-site adaptive coupling with `policy(state) -> site or
    None` choosing the next unexplored site (None = finish in raster order).
    Returns (list of spin dicts, CouplingTrace)."""
    if mode != "exact":
        raise ValueError("generic policies require exact mode")
    run = ExactFamilySampler(family).start_run(seed)
    while len(run.revealed) < run.s.n:
        v = policy(run) if policy is not None else None
        if v is None:
            for w in run.unexplored():
                run.reveal(w)
            break
        if v in run.revealed:
            raise ValueError("policy returned an explored site")
        run.reveal(v)
    configs = [{v: sp[i] for v, sp in run.revealed.items()}
               for i in range(run.s.k)]
    return configs, run.trace


# ---------------------------------------------------------------------------
# schedule drivers

def box_boundary_ring(radius: int) -> list:
    """External boundary of Lambda_{radius-1}: the ell_inf ring at `radius`
    without its four corners (those touch no site of the box), clockwise from
    the top-right."""
    return [v for v in ring_clockwise(radius)
            if not (abs(v[0]) == radius and abs(v[1]) == radius)]


def ring_clockwise(radius: int, center=(0, 0)) -> list:
    """Sites at ell_inf distance `radius`, clockwise from the top-right
    corner: down the right edge, left along the bottom, up the left edge,
    right along the top."""
    cx, cy = center
    r = radius
    if r == 0:
        return [(cx, cy)]
    out = []
    for y in range(cy + r, cy - r, -1):
        out.append((cx + r, y))
    for x in range(cx + r, cx - r, -1):
        out.append((x, cy - r))
    for y in range(cy - r, cy + r):
        out.append((cx - r, y))
    for x in range(cx - r, cx + r):
        out.append((x, cy + r))
    return out


def _pair_disagrees(sp, i, j):
    return sp[i] > sp[j]


def full_disagreement(sp) -> bool:
    """All-chain disagreement for 4-chain (tau+, tau-, tilde+, tilde-)."""
    return sp[0] > sp[1] and sp[2] > sp[3]


def breadth_first_coupling(N: int, field, beta: float, seed: int,
                           mode: str = "auto",
                           max_pow: int = DEFAULT_MAX_POW,
                           _sampler=None):
    """Frontier-growth coupling of the plus/minus pair on Lambda_N.

    Stage k+1 explores all unexplored neighbors of the stage-k disagreement
    frontier; when the frontier dies the rest is sampled in raster order.
    Returns (sigma_plus dict, sigma_minus dict, trace).
    """
    region = BoxRegion(N)
    family = [GibbsSpec(region, 1, field, beta),
              GibbsSpec(region, -1, field, beta)]
    if _sampler is not None:
        sampler = _sampler
    else:
        n = region.site_count
        if mode == "auto":
            mode = "exact" if n <= EXACT_LIMIT else "lockstep"
        if mode == "exact":
            sampler = SiteSampler(family, seed)
        else:
            sampler = BlockSampler(family, seed, max_pow)
    region_sites = site_set(region)
    frontier = box_boundary_ring(N + 1)  # external boundary of Lambda_N
    explored = set()
    k = 0
    sampler.trace.meta.update({"kind": "breadth_first", "N": N})
    while True:
        sampler.trace.stages.append(StageRecord(phase=0, stage=k,
                                                frontier=list(frontier)))
        if not frontier:
            rest = [v for v in sampler.unexplored()]
            sampler.sample_sites(rest)
            sampler.trace.stages[-1].event = "empty"
            break
        targets = []
        seen = set()
        for a in frontier:
            for u in neighbors(a):
                if u in region_sites and u not in explored and u not in seen:
                    seen.add(u)
                    targets.append(u)
        targets.sort(key=lambda v: (-v[1], v[0]))  # raster: top row first
        spins = sampler.sample_sites(targets)
        explored |= set(targets)
        frontier = [v for v, sp in zip(targets, spins) if sp[0] > sp[1]]
        k += 1
    tr = sampler.trace
    sigma_p = tr.spins_of(0)
    sigma_m = tr.spins_of(1)
    return sigma_p, sigma_m, tr


def percolation_property_holds(sigma_p: dict, sigma_m: dict, N: int) -> bool:
    """Origin disagreement must come with a disagreement path to the edge."""
    o = (0, 0)
    if sigma_p[o] == sigma_m[o]:
        return True
    carrier = {v for v in sigma_p if sigma_p[v] != sigma_m[v]}
    stack = [o]
    seen = {o}
    while stack:
        v = stack.pop()
        if max(abs(v[0]), abs(v[1])) == N:
            return True
        for u in neighbors(v):
            if u in carrier and u not in seen:
                seen.add(u)
                stack.append(u)
    return False


def multi_phase_exploration(N: int, field, beta: float, seed: int,
                            delta: float, alpha_prime: float = 0.9,
                            K: int | None = None, ell: int | None = None,
                            mode: str = "auto",
                            max_pow: int = DEFAULT_MAX_POW,
                            _sampler=None) -> CouplingTrace:
    """Shell-then-phases exploration coupling the four chains
    (+, h), (-, h), (+, h+Delta on the outer annulus), (-, same).

    Shells boundary(Lambda_k) for k = N-1 .. N/2 go first, clockwise from the
    top-right corner.  Phase j then grows the full-disagreement frontier from
    boundary(Lambda_{N'}), N' = N/2 - (j-1)*step, for up to K stages, raising
    the "empty" event when the frontier dies and the "deep" event when a newly
    sampled vertex reaches boundary(Lambda_{N'-step}).
    """
    step = int(N ** alpha_prime)
    if K is None:
        K = max(1, step)
    if ell is None:
        ell = max(1, int(0.25 * N ** (1.0 - alpha_prime)))
    if step < 1:
        raise ValueError("N^{alpha'} rounds to zero")
    for j in range(1, ell + 1):
        np_j = N // 2 - (j - 1) * step
        if np_j - step <= N // 4:
            raise ValueError("invalid parameters: N' - N^{alpha'} <= N/4")

    region = BoxRegion(N)
    annulus = site_set(region) - site_set(BoxRegion(N // 4))
    tilde = field.shifted(((annulus, delta),))
    family = [GibbsSpec(region, 1, field, beta),
              GibbsSpec(region, -1, field, beta),
              GibbsSpec(region, 1, tilde, beta),
              GibbsSpec(region, -1, tilde, beta)]
    if _sampler is not None:
        sampler = _sampler
    else:
        if mode == "auto":
            mode = "exact" if region.site_count <= EXACT_LIMIT else "lockstep"
        if mode == "exact":
            sampler = SiteSampler(family, seed)
        else:
            sampler = BlockSampler(family, seed, max_pow)
    tr = sampler.trace
    tr.meta.update({"kind": "multi_phase", "N": N, "delta": delta,
                    "alpha_prime": alpha_prime, "K": K, "ell": ell,
                    "step": step})
    revealed = {}
    c_star = set()

    def sample(sites):
        spins = sampler.sample_sites(sites)
        for v, sp in zip(sites, spins):
            revealed[v] = sp
            if full_disagreement(sp):
                c_star.add(v)
        return spins

    def finish():
        sample(list(sampler.unexplored()))

    # shells
    for kk in range(N - 1, N // 2 - 1, -1):
        sample(ring_clockwise(kk + 1))

    region_sites = site_set(region)
    for j in range(1, ell + 1):
        np_j = N // 2 - (j - 1) * step
        inner_ring = set(box_boundary_ring(np_j - step + 1))  # deep trigger
        lam_np = site_set(BoxRegion(np_j))
        frontier = [v for v in box_boundary_ring(np_j + 1) if v in c_star]
        for k in range(K + 1):
            rec = StageRecord(phase=j, stage=k, frontier=list(frontier))
            tr.stages.append(rec)
            if not frontier:
                rec.event = "empty"
                finish()
                return tr
            targets = []
            seen = set()
            for a in frontier:
                for u in neighbors(a):
                    if (u in lam_np and u not in revealed and u not in seen):
                        seen.add(u)
                        targets.append(u)
            targets.sort(key=lambda v: (-v[1], v[0]))
            deep = False
            if sampler.granularity == "site":
                newly = []
                for v in targets:
                    sample([v])
                    newly.append(v)
                    if v in inner_ring:
                        deep = True
                        break
            else:
                sample(targets)
                newly = targets
                deep = any(v in inner_ring for v in targets)
            if deep:
                rec.event = "deep"
                finish()
                return tr
            frontier = [v for v in newly if v in c_star]
        # end of phase: fill the probed band
        band = [v for v in sorted(lam_np - site_set(BoxRegion(np_j - step)),
                                  key=lambda v: (-v[1], v[0]))
                if v not in revealed]
        sample(band)
    finish()
    return tr


def replay_trace(trace: CouplingTrace, field, beta: float):
    """Re-derives the exploration schedule from the recorded spins and
    compares visit order and stage records; raises on mismatch."""
    rep = ReplaySampler(trace)
    kind = trace.meta.get("kind")
    if kind == "multi_phase":
        tr2 = multi_phase_exploration(
            trace.meta["N"], field, beta, trace.seed, trace.meta["delta"],
            alpha_prime=trace.meta["alpha_prime"], K=trace.meta["K"],
            ell=trace.meta["ell"], _sampler=rep)
    elif kind == "breadth_first":
        _, _, tr2 = breadth_first_coupling(trace.meta["N"], field, beta,
                                           trace.seed, _sampler=rep)
    else:
        raise ValueError(f"trace kind {kind!r} not replayable")
    if [s.site for s in tr2.steps] != [s.site for s in trace.steps]:
        raise AssertionError("replayed visit order differs")
    got = [(r.phase, r.stage, sorted(r.frontier), r.event) for r in tr2.stages]
    want = [(r.phase, r.stage, sorted(r.frontier), r.event)
            for r in trace.stages]
    if got != want:
        raise AssertionError("replayed stage records differ")
    return tr2


# ---------------------------------------------------------------------------
# hat-extended family and per-run inclusion check

def build_hat_family(region, tuples: dict, field, tilde_zone, delta: float,
                     beta: float):
    """Eight chains: the four original (tau, field-or-tilde) measures followed
    by their hat versions.  tuples maps every boundary site of `region` to an
    admissible 4-tuple; the tilde field adds delta on `tilde_zone`."""
    hb = hat_transform(tuples)
    tilde = field.shifted(((site_set(tilde_zone), delta),))

    def bmap(idx, src):
        return {v: src[v][idx] for v in src}

    fam = [
        GibbsSpec(region, bmap(0, hb.original), field, beta),
        GibbsSpec(region, bmap(1, hb.original), field, beta),
        GibbsSpec(region, bmap(2, hb.original), tilde, beta),
        GibbsSpec(region, bmap(3, hb.original), tilde, beta),
        GibbsSpec(region, bmap(0, hb.mapped), field, beta),
        GibbsSpec(region, bmap(1, hb.mapped), field, beta),
        GibbsSpec(region, bmap(2, hb.mapped), tilde, beta),
        GibbsSpec(region, bmap(3, hb.mapped), tilde, beta),
    ]
    return fam, hb


def c_star_from_steps(trace: CouplingTrace, chains=(0, 1, 2, 3)) -> frozenset:
    i, j, a, b = chains
    return frozenset(s.site for s in trace.steps
                     if s.spins[i] > s.spins[j] and s.spins[a] > s.spins[b])


# ---------------------------------------------------------------------------
# stopping-set audit

def stopping_set_conditional_audit(family, stop_after: list, n_runs: int,
                                   seed: int, min_bin: int = 500):
    """Runs the exact coupling exploring `stop_after` first (the stopping set)
    then the rest in raster order; bins runs by the spins on the stopping set
    and compares, per chain and bin, the empirical conditional distribution of
    the remainder against the exact Gibbs conditional.

    Returns a report dict with per-bin chi-square p-values.
    """
    from scipy.stats import chisquare

    sampler = ExactFamilySampler(family)
    grid = sampler.grid
    stop_idx = [grid.index[v] for v in stop_after]
    rest = [v for v in grid.sites if v not in set(stop_after)]
    order_sites = list(stop_after) + rest
    rest_idx = [grid.index[v] for v in rest]

    counts = {}
    for r in range(n_runs):
        tr = sampler.run_order(order_sites, derive_seed(seed, r))
        spins = {s.site: s.spins for s in tr.steps}
        key = tuple(spins[v] for v in stop_after)
        tail = tuple(spins[v] for v in rest)
        counts.setdefault(key, {})
        counts[key][tail] = counts[key].get(tail, 0) + 1

    m = 1 << sampler.n
    idx = np.arange(m)
    report = {"bins": [], "n_runs": n_runs, "total_bins": len(counts)}
    for key, tails in counts.items():
        n_bin = sum(tails.values())
        if n_bin < min_bin:
            continue
        entry = {"key": key, "count": n_bin, "pvalues": []}
        for i in range(sampler.k):
            w = sampler.W0[i].copy()
            for v, sp in zip(stop_after, key):
                b = sampler.bits[grid.index[v]].astype(bool)
                w[~b if sp[i] == 1 else b] = 0.0
            # conditional distribution over remainder states
            probs = {}
            wsum = w.sum()
            for mm in np.nonzero(w > 0)[0]:
                tail_state = tuple(1 if (mm >> s) & 1 else -1
                                   for s in rest_idx)
                probs[tail_state] = probs.get(tail_state, 0.0) + w[mm] / wsum
            states = sorted(probs)
            obs = np.array([sum(c for t, c in tails.items()
                                if tuple(tt[i] for tt in t) == st)
                            for st in states], dtype=float)
            exp = np.array([probs[st] * n_bin for st in states])
            # lump low-expectation cells so the chi-square reference is valid
            big = exp >= 5.0
            obs_l = list(obs[big])
            exp_l = list(exp[big])
            if (~big).any():
                obs_l.append(obs[~big].sum())
                exp_l.append(exp[~big].sum())
            obs_l = np.array(obs_l)
            exp_l = np.array(exp_l)
            res = chisquare(obs_l, exp_l * obs_l.sum() / exp_l.sum())
            entry["pvalues"].append(float(res.pvalue))
            entry.setdefault("max_dev", 0.0)
            entry["max_dev"] = max(entry["max_dev"],
                                   float(np.abs(obs / n_bin - exp / n_bin).max()))
        report["bins"].append(entry)
    return report
