"""Exact finite-temperature inference on small regions.

Partition functions, restricted log-partition functions, conditional
marginals, magnetization sums, and the free-energy derivative / inequality
audits.  Enumeration handles up to 24 free spins (chunked); unrestricted
partition functions on strips of width <= 12 go through a transfer matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geometry import GridIndex, site_set
from .randomfield import FieldSample

ENUMERATION_LIMIT = 24
STRIP_WIDTH_LIMIT = 12
_CHUNK_BITS = 18


class CapacityError(Exception):
    pass


# spin blocks and bond energies are field-independent, so they are shared
# across engines with the same free-spin count / bond structure
_BLOCK_CACHE: dict = {}
_BOND_CACHE: dict = {}


@dataclass(frozen=True)
class GibbsSpec:
    """region + boundary condition + field + inverse temperature.

    boundary: +1 / -1 scalar, an explicit map on the external boundary, or
    None for a free boundary.
    """

    region: object
    boundary: object
    field: object
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class ConfigPredicate:
    """Evaluable event over configurations; evaluate takes a (m, n) int8
    block of configurations (columns ordered like the engine's site list)
    and returns a boolean mask."""

    evaluate: object
    monotonicity: str = "none"  # increasing | decreasing | none

    def __call__(self, block):
        return self.evaluate(block)


def _field_value(field, v):
    if isinstance(field, FieldSample):
        return field.value(v)
    return field[v]


class EnumGibbs:
    """Enumeration engine over all configurations of a region."""

    def __init__(self, spec: GibbsSpec):
        self.spec = spec
        self.grid = GridIndex(spec.region)
        self.n = self.grid.n
        if self.n > ENUMERATION_LIMIT:
            raise CapacityError(f"{self.n} free spins exceeds enumeration limit")
        self.sites = self.grid.sites
        self.bonds = self.grid.interior_bonds()
        self.heff = np.array([_field_value(spec.field, v) for v in self.sites])
        if spec.boundary is not None:
            badj = self.grid.boundary_adjacency()
            for b, vs in badj.items():
                tau = spec.boundary if spec.boundary in (1, -1) else spec.boundary[b]
                for v in vs:
                    self.heff[self.grid.index[v]] += tau
        self._log_weights = None

    def config_blocks(self):
        """Yields (spin block (m, n) int8, base index)."""
        total = 1 << self.n
        if total <= (1 << _CHUNK_BITS):
            yield self._cached_block(), 0
            return
        step = 1 << _CHUNK_BITS
        cols = np.arange(self.n, dtype=np.uint32)
        for base in range(0, total, step):
            idx = np.arange(base, base + step, dtype=np.uint32)
            block = (((idx[:, None] >> cols[None, :]) & 1) * 2 - 1).astype(np.int8)
            yield block, base

    def _cached_block(self) -> np.ndarray:
        block = _BLOCK_CACHE.get(self.n)
        if block is None:
            idx = np.arange(1 << self.n, dtype=np.uint32)
            cols = np.arange(self.n, dtype=np.uint32)
            block = (((idx[:, None] >> cols[None, :]) & 1) * 2.0 - 1.0)
            _BLOCK_CACHE[self.n] = block
        return block

    def log_weights_full(self) -> np.ndarray:
        """-beta * H for every configuration (index = bitmask of +1 spins)."""
        if self._log_weights is None:
            out = np.empty(1 << self.n)
            for block, base in self.config_blocks():
                out[base:base + len(block)] = self._log_weight_block(
                    block, base)
            self._log_weights = out
        return self._log_weights

    def _log_weight_block(self, block, base=None) -> np.ndarray:
        b = np.asarray(block, dtype=np.float64)
        energy = -(b @ self.heff)
        key = (self.n, tuple(self.bonds)) if base == 0 else None
        bond_e = _BOND_CACHE.get(key) if key is not None else None
        if bond_e is None:
            bond_e = np.zeros(len(b))
            for (i, j) in self.bonds:
                bond_e += b[:, i] * b[:, j]
            if key is not None:
                _BOND_CACHE[key] = bond_e
        energy -= bond_e
        return -self.spec.beta * energy

    def log_z(self, restriction: ConfigPredicate | None = None) -> float:
        parts = []
        any_cfg = False
        for block, base in self.config_blocks():
            lw = self._log_weight_block(block, base)
            if restriction is not None:
                keep = restriction(block)
                if not keep.any():
                    continue
                lw = lw[keep]
            any_cfg = True
            parts.append(logsumexp(lw))
        if not any_cfg:
            raise ValueError("empty restriction: log of zero")
        return float(logsumexp(parts))

    def mean_spins(self, restriction: ConfigPredicate | None = None) -> np.ndarray:
        """<sigma_v> for every site under the (restricted) measure."""
        lz = self.log_z(restriction)
        acc = np.zeros(self.n)
        for block, base in self.config_blocks():
            lw = self._log_weight_block(block, base)
            if restriction is not None:
                keep = restriction(block)
                if not keep.any():
                    continue
                lw = lw[keep]
                block = block[keep]
            acc += (np.exp(lw - lz)[:, None] * block).sum(axis=0)
        return acc

    def probability(self, restriction: ConfigPredicate) -> float:
        return float(np.exp(self.log_z(restriction) - self.log_z()))


def _strip_axis(grid: GridIndex):
    """Returns (width, axis) when the region is a full rectangular strip of
    width <= STRIP_WIDTH_LIMIT along one axis, else None."""
    if grid.mask.sum() != grid.mask.size:
        return None
    h, w = grid.mask.shape
    if h <= STRIP_WIDTH_LIMIT:
        return h, "x"
    if w <= STRIP_WIDTH_LIMIT:
        return w, "y"
    return None


def _transfer_matrix_log_z(spec: GibbsSpec) -> float:
    grid = GridIndex(spec.region)
    strip = _strip_axis(grid)
    if strip is None:
        raise CapacityError("region is neither enumerable nor a thin strip")
    wdt, axis = strip
    heff = np.zeros((grid.height, grid.width))
    for v in site_set(spec.region):
        heff[v[1] - grid.y0, v[0] - grid.x0] = _field_value(spec.field, v)
    if spec.boundary is not None:
        for b, vs in grid.boundary_adjacency().items():
            tau = spec.boundary if spec.boundary in (1, -1) else spec.boundary[b]
            for v in vs:
                heff[v[1] - grid.y0, v[0] - grid.x0] += tau
    if axis == "y":
        heff = heff.T  # columns advance along the long axis
    m = 1 << wdt
    s = (((np.arange(m)[:, None] >> np.arange(wdt)[None, :]) & 1) * 2.0 - 1.0)
    in_col_bonds = (s[:, :-1] * s[:, 1:]).sum(axis=1)  # vertical bonds
    cross = spec.beta * (s @ s.T)  # horizontal bonds between columns
    log_p = cross  # (m, m)
    v = np.zeros(m)
    log_scale = 0.0
    ncols = heff.shape[1]
    for c in range(ncols):
        a = spec.beta * (s @ heff[:, c] + in_col_bonds)
        if c == 0:
            v = a.copy()
        else:
            v = a + logsumexp(v[None, :] + log_p, axis=1)
        shift = v.max()
        v -= shift
        log_scale += shift
    return float(log_scale + logsumexp(v))


def log_partition(spec: GibbsSpec,
                  restriction: ConfigPredicate | None = None) -> float:
    """F = (1/beta) log sum_{sigma in Omega} exp(-beta H)."""
    if spec.beta == 0:
        raise ValueError("beta=0 has no log-partition normalization here")
    grid = GridIndex(spec.region)
    if grid.n <= ENUMERATION_LIMIT:
        lz = EnumGibbs(spec).log_z(restriction)
    elif restriction is None:
        lz = _transfer_matrix_log_z(spec)
    else:
        raise CapacityError("restricted partition function needs enumeration")
    return lz / spec.beta


def conditional_marginal(spec: GibbsSpec, conditioned: dict, site) -> float:
    """P(sigma_site = +1 | conditioned spins)."""
    eng = EnumGibbs(spec)
    for v in conditioned:
        if v not in eng.grid.index:
            raise ValueError(f"conditioned site {v} outside region")
    if site not in eng.grid.index:
        raise ValueError(f"site {site} outside region")
    cond_idx = [(eng.grid.index[v], s) for v, s in conditioned.items()]
    i_site = eng.grid.index[site]

    def keep(block, want_plus):
        mask = np.ones(len(block), dtype=bool)
        for i, s in cond_idx:
            mask &= block[:, i] == s
        if want_plus:
            mask &= block[:, i_site] == 1
        return mask

    num = eng.log_z(ConfigPredicate(lambda b: keep(b, True)))
    den = eng.log_z(ConfigPredicate(lambda b: keep(b, False)))
    return float(np.exp(num - den))


def magnetization_sum(spec: GibbsSpec, restriction, window) -> float:
    win = site_set(window)
    if not win:
        return 0.0
    eng = EnumGibbs(spec)
    means = eng.mean_spins(restriction)
    return float(sum(means[eng.grid.index[v]] for v in win))


def free_energy_derivative_check(spec_at, zone, delta: float, t: float,
                                 restriction=None, dt: float = 1e-5):
    """spec_at(t) -> GibbsSpec with the inner zone shifted by t*delta.
    Returns (analytic, finite_difference) of dF/dt at t."""
    spec = spec_at(t)
    analytic = delta * magnetization_sum(spec, restriction, zone)
    f_hi = log_partition(spec_at(t + dt), restriction)
    f_lo = log_partition(spec_at(t - dt), restriction)
    return analytic, (f_hi - f_lo) / (2 * dt)


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    holds: bool
    vacuous: bool = False
    detail: dict | None = None


def _gauss_legendre_01(nodes: int = 16):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def free_energy_inequality_audit(region, field, beta: float,
                                 tau_plus, tau_minus,
                                 omega_plus: ConfigPredicate,
                                 omega_minus: ConfigPredicate,
                                 delta: float, delta_prime: float,
                                 outer_zone, inner_zone,
                                 window=None) -> InequalityReport:
    """Audits the two-zone free-energy difference bound.

    Field family over t: field + delta_prime on outer_zone + t*delta on
    inner_zone.  LHS = delta * int_0^1 (m^{tau+,t}_{Omega+} -
    m^{tau-,t}_{Omega-}) dt with m summing <sigma_v> over `window`
    (default: inner_zone).  RHS = 8 * sum_Gamma (tau+ - tau-)
    - (1/beta)(log mu^{tau+,0}(Omega+) + log mu^{tau-,1}(Omega-)).
    """
    window = inner_zone if window is None else window
    outer = site_set(outer_zone)
    inner = site_set(inner_zone)

    def spec_at(tau, t):
        f = field.shifted(((outer, delta_prime), (inner, t * delta)))
        return GibbsSpec(region=region, boundary=tau, field=f, beta=beta)

    ts, ws = _gauss_legendre_01()
    lhs = 0.0
    for t, w in zip(ts, ws):
        m_p = magnetization_sum(spec_at(tau_plus, t), omega_plus, window)
        m_m = magnetization_sum(spec_at(tau_minus, t), omega_minus, window)
        lhs += w * (m_p - m_m)
    lhs *= delta

    gamma = sorted(GridIndex(region).boundary_sites())
    tp = {g: (tau_plus if tau_plus in (1, -1) else tau_plus[g]) for g in gamma}
    tm = {g: (tau_minus if tau_minus in (1, -1) else tau_minus[g]) for g in gamma}
    if any(tp[g] < tm[g] for g in gamma):
        raise ValueError("tau+ must dominate tau-")
    bterm = 8.0 * sum(tp[g] - tm[g] for g in gamma)

    p_plus = EnumGibbs(spec_at(tau_plus, 0.0)).probability(omega_plus)
    p_minus = EnumGibbs(spec_at(tau_minus, 1.0)).probability(omega_minus)
    if p_plus == 0.0 or p_minus == 0.0:
        return InequalityReport(lhs=lhs, rhs=np.inf, holds=True, vacuous=True,
                                detail={"p_plus": p_plus, "p_minus": p_minus})
    rhs = bterm - (np.log(p_plus) + np.log(p_minus)) / beta
    return InequalityReport(lhs=lhs, rhs=float(rhs), holds=lhs <= rhs + 1e-9,
                            detail={"boundary_term": bterm,
                                    "p_plus": p_plus, "p_minus": p_minus})
