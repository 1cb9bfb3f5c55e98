"""Declarative experiment harness: decay curves, perturbation audits,
crossing scans, free-energy suites and coupling suites, all reproducible
from (config, seed) with machine-readable outputs.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from scipy import stats

from . import couplings, gibbs, percolation
from .cftp import BudgetError, derive_seed, grand_monotone_sample
from .geometry import (Annulus, BoxRegion, GridIndex, boundary,
                       intrinsic_distance, site_set)
from .gibbs import ConfigPredicate, EnumGibbs, GibbsSpec
from .groundstate import GroundStateSolver, flip_inequality_report, xi_labels
from .randomfield import sample_field, site_gaussian

CENSOR_LIMIT = 0.05  # acceptance runs require < 5% budget-censored instances


def wilson_interval(k: int, n: int, z: float = 1.96):
    """95% score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def lumped_chisquare(counts: np.ndarray, expected: np.ndarray):
    """Chi-square with all cells of expectation < 5 lumped into one bucket,
    so the statistic has a valid reference distribution."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    small = expected < 5.0
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
    if len(counts) < 2:
        return 0.0, 1.0
    expected = expected * counts.sum() / expected.sum()
    stat, p = stats.chisquare(counts, expected)
    return float(stat), float(p)


@dataclass
class ExperimentConfig:
    """All free parameters of an experiment, serialized alongside results."""

    kind: str = "decay"
    n_values: tuple = (8,)
    epsilon: float = 1.0
    beta: float = 1.0
    mode: str = "t0"  # t0 | exact | cftp
    delta: float | None = None
    delta_prime: float = 0.0
    gamma: float = 1.0
    alpha_prime: float = 0.9
    big_k: int | None = None
    ell: int | None = None
    instances: int = 100
    samples: int = 1
    seed: int = 0
    out_dir: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.mode not in ("t0", "exact", "cftp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.n_values = tuple(int(n) for n in self.n_values)

    def to_file(self, path) -> None:
        cp = configparser.ConfigParser()
        cp["experiment"] = {k: self._fmt(getattr(self, k))
                            for k in self._keys()}
        with open(path, "w") as f:
            cp.write(f)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        with open(path) as f:
            cp.read_file(f)
        sec = cp["experiment"]
        kwargs = {}
        for f_ in fields(cls):
            if f_.name not in sec:
                continue
            raw = sec[f_.name]
            if raw == "none":
                kwargs[f_.name] = None
            elif f_.name == "n_values":
                kwargs[f_.name] = tuple(int(x) for x in raw.split(","))
            elif f_.name in ("kind", "mode", "out_dir"):
                kwargs[f_.name] = raw
            elif f_.name in ("instances", "samples", "seed", "big_k",
                             "ell", "jobs"):
                kwargs[f_.name] = int(raw)
            else:
                kwargs[f_.name] = float(raw)
        return cls(**kwargs)

    def _keys(self):
        return [f_.name for f_ in fields(self)]

    @staticmethod
    def _fmt(v):
        if v is None:
            return "none"
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    def config_hash(self) -> str:
        blob = ";".join(f"{k}={self._fmt(getattr(self, k))}"
                        for k in sorted(self._keys()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ResultTable:
    """Rows of named numeric columns plus a metadata block."""

    def __init__(self, columns, metadata=None):
        self.columns = tuple(columns)
        self.rows = []
        self.metadata = dict(metadata or {})
        self.metadata.setdefault("wall_time", None)

    def add(self, **kw):
        if set(kw) != set(self.columns):
            raise ValueError(f"row keys {sorted(kw)} != columns")
        self.rows.append(tuple(kw[c] for c in self.columns))

    def column(self, name) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    @property
    def censored(self) -> int:
        if "censored" not in self.columns:
            return 0
        return sum(int(bool(x)) for x in self.column("censored"))

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(self.columns) + "\n")
            for r in self.rows:
                f.write(",".join(str(x) for x in r) + "\n")

    def to_json(self, path) -> None:
        meta = {k: v for k, v in self.metadata.items() if k != "wall_time"}
        with open(path, "w") as f:
            json.dump({"columns": self.columns, "rows": self.rows,
                       "metadata": meta,
                       "wall_time": self.metadata.get("wall_time")}, f,
                      default=str)


def _stamp(table: ResultTable, config: ExperimentConfig, t0: float):
    table.metadata["config_hash"] = config.config_hash()
    table.metadata["wall_time"] = time.time() - t0
    return table


def _field_values(solver: GroundStateSolver, seed: int, epsilon: float):
    xs = np.array([v[0] for v in solver.grid.sites])
    ys = np.array([v[1] for v in solver.grid.sites])
    return site_gaussian(seed, xs, ys, epsilon)


# ---------------------------------------------------------------- decay


def run_decay(config: ExperimentConfig) -> ResultTable:
    """Boundary influence at the center: T=0 disagreement indicator via
    min cut, or finite-temperature magnetization gap via coupled CFTP."""
    t0 = time.time()
    table = ResultTable(columns=("N", "instance", "seed", "value", "censored"))
    for N in config.n_values:
        region = BoxRegion(N)
        solver = GroundStateSolver(region) if config.mode == "t0" else None
        origin = solver.grid.index[(0, 0)] if solver is not None else None
        tasks = [(N, i, derive_seed(config.seed, N, i))
                 for i in range(config.instances)]
        for N_, i, seed_i in tasks:
            censored = 0
            if config.mode == "t0":
                vals = _field_values(solver, seed_i, config.epsilon)
                dis = solver.disagreements(vals)
                value = float(dis[origin])
            else:
                fld = sample_field(region, config.epsilon, seed_i)
                specs = [GibbsSpec(region, 1, fld, config.beta),
                         GibbsSpec(region, -1, fld, config.beta)]
                acc = 0.0
                done = 0
                for s in range(config.samples):
                    try:
                        g = grand_monotone_sample(
                            specs, derive_seed(seed_i, 0xD2AA, s))
                    except BudgetError:
                        censored = 1
                        continue
                    acc += g.configs[0][(0, 0)] - g.configs[1][(0, 0)]
                    done += 1
                value = acc / done if done else math.nan
            table.add(N=N_, instance=i, seed=seed_i, value=value,
                      censored=censored)
    return _stamp(table, config, t0)


def aggregate_decay(table: ResultTable) -> list:
    """Per-N mean and standard error over uncensored instances."""
    byn = {}
    for (N, i, seed, value, censored) in table.rows:
        if censored or math.isnan(value):
            continue
        byn.setdefault(N, []).append(value)
    out = []
    for N in sorted(byn):
        xs = np.array(byn[N])
        se = xs.std(ddof=1) / math.sqrt(len(xs)) if len(xs) > 1 else math.inf
        out.append({"N": N, "m_hat": float(xs.mean()), "se": float(se),
                    "n": len(xs)})
    return out


def log_slope(aggregates: list):
    """Weighted least-squares slope of log(m_hat) against N, with its
    standard error (delta method on each point)."""
    pts = [(a["N"], a["m_hat"], a["se"]) for a in aggregates if a["m_hat"] > 0]
    if len(pts) < 2:
        raise ValueError("need at least two positive estimates")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    var = np.array([(p[2] / p[1]) ** 2 for p in pts])
    w = 1.0 / var
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    coef = cov @ (X.T @ (w * y))
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


# ------------------------------------------------- perturbation audits


def run_perturbation_audit(config: ExperimentConfig) -> ResultTable:
    """Per-instance checks of the three T=0 perturbation facts: the
    incompatibility of the distance/mass conditions under a uniform shift,
    the path-to-boundary property under a nonnegative sitewise shift, and
    the flip inequality on every disagreement component."""
    t0 = time.time()
    N = config.n_values[0]
    delta = config.delta if config.delta is not None else config.gamma / N
    K = config.big_k if config.big_k is not None else N // 4
    region = BoxRegion(N)
    solver = GroundStateSolver(region)
    sites = solver.grid.sites
    idx_of = solver.grid.index
    ring_q = boundary(BoxRegion(N // 4))   # the two distance target rings
    ring_h = boundary(BoxRegion(N // 2))
    annulus = site_set(BoxRegion(N // 2)) - site_set(BoxRegion(N // 4))
    quarter = site_set(BoxRegion(N // 4))
    rim = {v for v in sites if max(abs(v[0]), abs(v[1])) == N}

    table = ResultTable(columns=(
        "instance", "seed", "cond_a", "cond_b", "incompatible_ok",
        "path_ok", "flip_ok", "degenerate"))
    for i in range(config.instances):
        seed_i = derive_seed(config.seed, 0xBEA7, i)
        vals = _field_values(solver, seed_i, config.epsilon)
        dis = solver.disagreements(vals)
        dis_t = solver.disagreements(vals + delta)
        c_star = {v for v in sites if dis[idx_of[v]] and dis_t[idx_of[v]]}
        d = intrinsic_distance(c_star, ring_q & set(sites), ring_h & set(sites))
        cond_a = d >= K
        lhs = len(c_star & quarter) * delta
        rhs = (8.0 / K) * len(c_star & annulus)
        cond_b = lhs > rhs
        # path-to-boundary with a fresh nonnegative sitewise shift
        x = site_gaussian(derive_seed(seed_i, 0xC3),
                          np.array([v[0] for v in sites]),
                          np.array([v[1] for v in sites]),
                          config.epsilon)
        x = np.abs(x)
        dis_c = solver.disagreements(vals + x)
        joint = {v for v in sites if dis[idx_of[v]] and dis_c[idx_of[v]]}
        path_ok = _all_reach(joint, rim)
        labeling = xi_labels(region, {v: vals[idx_of[v]] for v in sites})
        flips = flip_inequality_report(labeling,
                                       {v: vals[idx_of[v]] for v in sites})
        flip_ok = all(r["holds"] for r in flips)
        table.add(instance=i, seed=seed_i, cond_a=int(cond_a),
                  cond_b=int(cond_b),
                  incompatible_ok=int(not (cond_a and cond_b)),
                  path_ok=int(path_ok), flip_ok=int(flip_ok),
                  degenerate=int(labeling.degenerate))
    table.metadata.update({"N": N, "delta": delta, "K": K})
    return _stamp(table, config, t0)


def _all_reach(carrier: set, targets: set) -> bool:
    """Every 4-connected component of carrier meets targets."""
    from collections import deque

    from .geometry import neighbors
    left = set(carrier)
    while left:
        start = left.pop()
        comp = {start}
        q = deque([start])
        touched = start in targets
        while q:
            v = q.popleft()
            for u in neighbors(v):
                if u in left:
                    left.remove(u)
                    comp.add(u)
                    q.append(u)
                    if u in targets:
                        touched = True
        if not touched:
            return False
    return True


# ------------------------------------------------------- crossing scan


def run_crossing_scan(config: ExperimentConfig) -> ResultTable:
    """Hard/easy crossing frequencies of the disagreement set over a
    concentric annulus, with Wilson intervals."""
    t0 = time.time()
    N = config.n_values[0]
    out_r = max(N // 8, 2)
    in_r = max(N // 32, 1)
    if in_r >= out_r:
        raise ValueError("annulus degenerate at this N")
    ann = Annulus(BoxRegion(out_r), BoxRegion(in_r))
    ann_sites = site_set(ann)
    region = BoxRegion(N)
    solver = GroundStateSolver(region) if config.mode == "t0" else None
    table = ResultTable(columns=("instance", "seed", "hard", "easy",
                                 "nonempty", "censored"))
    for i in range(config.instances):
        seed_i = derive_seed(config.seed, 0xC805, i)
        censored = 0
        if config.mode == "t0":
            vals = _field_values(solver, seed_i, config.epsilon)
            dis = solver.disagreements(vals)
            carrier = frozenset(v for j, v in enumerate(solver.grid.sites)
                                if dis[j])
        else:
            fld = sample_field(region, config.epsilon, seed_i)
            specs = [GibbsSpec(region, 1, fld, config.beta),
                     GibbsSpec(region, -1, fld, config.beta)]
            try:
                g = grand_monotone_sample(specs, derive_seed(seed_i, 0xC806))
            except BudgetError:
                table.add(instance=i, seed=seed_i, hard=0, easy=0,
                          nonempty=0, censored=1)
                continue
            carrier = frozenset(v for v in g.configs[0]
                                if g.configs[0][v] != g.configs[1][v])
        hard = percolation.cross_annulus_hard(ann, carrier)
        easy = percolation.cross_annulus_easy(ann, carrier)
        nonempty = bool(carrier & ann_sites)
        if hard and not nonempty:
            raise AssertionError("hard crossing with empty carrier")
        table.add(instance=i, seed=seed_i, hard=int(hard), easy=int(easy),
                  nonempty=int(nonempty), censored=censored)
    n_ok = len(table.rows) - table.censored
    k_hard = sum(table.column("hard"))
    k_easy = sum(table.column("easy"))
    table.metadata.update({
        "N": N, "annulus": (in_r, out_r),
        "p_hard": k_hard / n_ok if n_ok else math.nan,
        "p_easy": k_easy / n_ok if n_ok else math.nan,
        "hard_wilson95": wilson_interval(k_hard, n_ok),
        "easy_wilson95": wilson_interval(k_easy, n_ok),
    })
    return _stamp(table, config, t0)


# ---------------------------------------------------- free-energy suite


def _square_region(side: int) -> frozenset:
    return frozenset((x, y) for x in range(side) for y in range(side))


def _random_admissible_boundary(gamma_sites, rng):
    """One random admissible 4-tuple of boundary spins per site."""
    rows = [couplings.ADMISSIBLE_ROWS[k]
            for k in sorted(couplings.ADMISSIBLE_ROWS)]
    return {g: rows[rng.integers(len(rows))] for g in sorted(gamma_sites)}


def _boundary_component(tuples: dict, idx: int) -> dict:
    return {g: t[idx] for g, t in tuples.items()}


def two_zone_free_energy_audit(region, fld, beta, tuples, delta, delta_prime,
                               outer_zone, inner_zone, window,
                               restricted: bool):
    """One instance of the two-zone inequality, using the plus/minus pair of
    the admissible 4-tuple as the ordered boundary pair."""
    tau_p = _boundary_component(tuples, 0)
    tau_m = _boundary_component(tuples, 1)
    if restricted:
        gi = GridIndex(region)
        j = gi.index[sorted(site_set(window))[0]]
        omega_p = ConfigPredicate(lambda b: b[:, j] == 1, "increasing")
        omega_m = ConfigPredicate(lambda b: b[:, j] == -1, "decreasing")
    else:
        omega_p = ConfigPredicate(lambda b: np.ones(len(b), dtype=bool),
                                  "increasing")
        omega_m = ConfigPredicate(lambda b: np.ones(len(b), dtype=bool),
                                  "decreasing")
    return gibbs.free_energy_inequality_audit(
        region, fld, beta, tau_p, tau_m, omega_p, omega_m,
        delta, delta_prime, outer_zone, inner_zone, window)


def hat_free_energy_audit(region, fld, beta, tuples, delta, tilde_zone,
                          count_zone, mc_runs: int, seed: int):
    """The hat-boundary sandwich: Monte Carlo lower bound (with 3-SE slack)
    vs the exact log-partition difference vs the exact boundary count."""
    specs, _ = couplings.build_hat_family(region, tuples, fld, tilde_zone,
                                          delta, beta)
    # chains: 0..3 original (tau+, tau-, tilde tau+, tilde tau-),
    #         4..7 hat versions
    middle = ((gibbs.log_partition(specs[6]) - gibbs.log_partition(specs[7]))
              - (gibbs.log_partition(specs[4]) - gibbs.log_partition(specs[5])))
    full_dis = couplings.hat_disagreement_sites(tuples)
    upper = 16.0 * len(full_dis)
    zone = site_set(count_zone)
    sampler = couplings.ExactFamilySampler(specs)
    order = sorted(site_set(region))
    counts = np.empty(mc_runs)
    inclusion_ok = True
    for r in range(mc_runs):
        trace = sampler.run_order(order, derive_seed(seed, 0xFACE, r))
        c_orig = couplings.c_star_from_steps(trace, chains=(0, 1, 2, 3))
        c_hat = couplings.c_star_from_steps(trace, chains=(4, 5, 6, 7))
        if not c_orig <= c_hat:
            inclusion_ok = False
        counts[r] = len(c_hat & zone)
    mean = counts.mean()
    se = counts.std(ddof=1) / math.sqrt(mc_runs) if mc_runs > 1 else math.inf
    lower_mc = 2.0 * delta * mean
    lower_slack = 2.0 * delta * (mean - 3.0 * se)
    return {
        "middle": float(middle), "upper": upper,
        "lower_mc": float(lower_mc), "lower_3se": float(lower_slack),
        "upper_ok": middle <= upper + 1e-9,
        "lower_ok": lower_slack <= middle + 1e-9,
        "inclusion_ok": inclusion_ok,
        "n_boundary_dis": len(full_dis),
    }


def run_free_energy_suite(config: ExperimentConfig) -> ResultTable:
    """Random small instances with random admissible boundary 4-tuples:
    derivative identity rows, the two-zone inequality, and the hat-boundary
    sandwich, one row per (instance, beta)."""
    t0 = time.time()
    side = 4
    region = _square_region(side)
    gamma = boundary(region)
    inner_zone = frozenset((x, y) for x in (1, 2) for y in (1, 2))
    outer_zone = region - inner_zone
    window = inner_zone
    betas = (0.3, 1.0, 3.0)
    delta = config.delta if config.delta is not None else 0.5
    delta_prime = config.delta_prime
    table = ResultTable(columns=(
        "instance", "beta", "seed", "deriv_rel_err", "two_zone_ok",
        "two_zone_vacuous", "hat_upper_ok", "hat_lower_ok",
        "hat_inclusion_ok"))
    rng = np.random.default_rng(config.seed)
    for i in range(config.instances):
        seed_i = derive_seed(config.seed, 0xFE, i)
        fld = sample_field(region, config.epsilon, seed_i)
        tuples = _random_admissible_boundary(gamma, rng)
        for beta in betas:
            tau_p = _boundary_component(tuples, 0)

            def spec_at(t):
                f = fld.shifted(((site_set(outer_zone), delta_prime),
                                 (site_set(inner_zone), t * delta)))
                return GibbsSpec(region, tau_p, f, beta)

            analytic, fd = gibbs.free_energy_derivative_check(
                spec_at, inner_zone, delta, t=0.37)
            rel = abs(analytic - fd) / max(abs(fd), 1e-12)
            rep = two_zone_free_energy_audit(
                region, fld, beta, tuples, delta, delta_prime,
                outer_zone, inner_zone, window, restricted=bool(i % 2))
            hat = hat_free_energy_audit(
                region, fld, beta, tuples, delta, tilde_zone=region,
                count_zone=outer_zone,
                mc_runs=config.samples if config.samples > 1 else 150,
                seed=derive_seed(seed_i, int(beta * 1000)))
            table.add(instance=i, beta=beta, seed=seed_i,
                      deriv_rel_err=rel, two_zone_ok=int(rep.holds),
                      two_zone_vacuous=int(rep.vacuous),
                      hat_upper_ok=int(hat["upper_ok"]),
                      hat_lower_ok=int(hat["lower_ok"]),
                      hat_inclusion_ok=int(hat["inclusion_ok"]))
    table.metadata.update({"side": side, "delta": delta,
                           "delta_prime": delta_prime, "betas": betas})
    return _stamp(table, config, t0)


# ------------------------------------------------------ coupling suite


def run_coupling_suite(config: ExperimentConfig) -> ResultTable:
    """Breadth-first coupling audits plus adaptive-coupling marginal and
    admissibility checks; one summary row per audit."""
    t0 = time.time()
    N = config.n_values[0]
    beta = config.beta
    table = ResultTable(columns=("audit", "runs", "violations", "pvalue"))

    # percolation property of the breadth-first coupling
    region = BoxRegion(N)
    viol = 0
    for i in range(config.instances):
        seed_i = derive_seed(config.seed, 0xBF5, i)
        fld = sample_field(region, config.epsilon, seed_i)
        sp, sm, _ = couplings.breadth_first_coupling(
            N, fld, beta, derive_seed(seed_i, 1), mode="auto")
        if not couplings.percolation_property_holds(sp, sm, N):
            viol += 1
    table.add(audit="bfs_percolation", runs=config.instances,
              violations=viol, pvalue=math.nan)

    # adaptive coupling marginals on a 3x3 box, plus/minus family
    small = BoxRegion(1)
    fld = sample_field(small, config.epsilon,
                       derive_seed(config.seed, 0xAD))
    specs = [GibbsSpec(small, 1, fld, beta), GibbsSpec(small, -1, fld, beta)]
    sampler = couplings.ExactFamilySampler(specs)
    order = sorted(site_set(small))
    n_runs = config.samples if config.samples > 1 else 2000
    counts = np.zeros((2, 512))
    engines = [EnumGibbs(sp) for sp in specs]
    bad_rows = 0
    for r in range(n_runs):
        trace = sampler.run_order(order,
                                  derive_seed(config.seed, 0xAD1, r))
        for step in trace.steps:
            if (step.spins[0], step.spins[1]) not in (
                    (-1, -1), (1, -1), (1, 1)):
                bad_rows += 1
        for c in range(2):
            spins = trace.spins_of(c)
            code = sum((1 << k) for k, v in enumerate(engines[c].sites)
                       if spins[v] == 1)
            counts[c, code] += 1
    pvals = []
    for c in range(2):
        lw = engines[c].log_weights_full()
        probs = np.exp(lw - lw.max())
        probs /= probs.sum()
        _, p = lumped_chisquare(counts[c], probs * n_runs)
        pvals.append(p)
    table.add(audit="adaptive_marginals", runs=n_runs, violations=bad_rows,
              pvalue=min(pvals))
    table.metadata.update({"N": N, "beta": beta})
    return _stamp(table, config, t0)


# ------------------------------------------------------------ parallel


def _call(args):
    fn, cfg = args
    return fn(cfg)


def parallel_instances(fn, configs: list, jobs: int = 1) -> list:
    """Runs fn over configs, in order, optionally across processes; results
    are merged by task index regardless of completion order."""
    if jobs <= 1:
        return [fn(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_call, [(fn, c) for c in configs]))


RUNNERS = {
    "decay": run_decay,
    "perturb-audit": run_perturbation_audit,
    "crossing-scan": run_crossing_scan,
    "free-energy": run_free_energy_suite,
    "coupling-suite": run_coupling_suite,
}
