import itertools

import numpy as np
import pytest
from scipy import stats

from rfimlab.cftp import derive_seed
from rfimlab.couplings import (ADMISSIBLE_ROWS, HAT_MAP, CouplingStep,
                               CouplingTrace, ExactFamilySampler,
                               adaptive_admissible_sample, box_boundary_ring,
                               breadth_first_coupling, build_hat_family,
                               c_star_from_steps, full_disagreement,
                               hat_disagreement_sites, hat_transform,
                               multi_phase_exploration,
                               percolation_property_holds, replay_trace,
                               ring_clockwise, stopping_set_conditional_audit)
from rfimlab.geometry import BoxRegion, site_set
from rfimlab.gibbs import EnumGibbs, GibbsSpec
from rfimlab.randomfield import sample_field


def test_hat_transform_table():
    for row, tup in ADMISSIBLE_ROWS.items():
        hb = hat_transform({(0, 2): tup})
        assert hb.mapped[(0, 2)] == HAT_MAP[row]
    with pytest.raises(ValueError):
        hat_transform({(0, 2): (-1, 1, -1, -1)})


def test_admissible_rows_are_exactly_the_ordered_tuples():
    want = {t for t in itertools.product((-1, 1), repeat=4)
            if t[0] >= t[1] and t[2] >= t[3] and t[2] >= t[0] and t[3] >= t[1]}
    assert set(ADMISSIBLE_ROWS.values()) == want


def test_hat_disagreement_sites():
    tuples = {(0, 0): ADMISSIBLE_ROWS["f"], (1, 0): ADMISSIBLE_ROWS["e"],
              (2, 0): ADMISSIBLE_ROWS["a"]}
    assert hat_disagreement_sites(tuples) == {(0, 0)}


def _square(side):
    return frozenset((x, y) for x in range(side) for y in range(side))


def test_exact_sampler_marginals_match_enumeration():
    region = _square(2)
    f = sample_field(region, 1.0, 31)
    family = [GibbsSpec(region, 1, f, 0.8), GibbsSpec(region, -1, f, 0.8)]
    sampler = ExactFamilySampler(family)
    order = sorted(site_set(region))
    engines = [EnumGibbs(sp) for sp in family]
    n_runs = 8000
    counts = np.zeros((2, 16))
    for r in range(n_runs):
        tr = sampler.run_order(order, derive_seed(9, r))
        spins = {s.site: s.spins for s in tr.steps}
        for c in range(2):
            code = 0
            for i, v in enumerate(engines[c].grid.sites):
                if spins[v][c] == 1:
                    code |= 1 << i
            counts[c, code] += 1
    for c in range(2):
        lw = engines[c].log_weights_full()
        probs = np.exp(lw - lw.max())
        probs /= probs.sum()
        expected = probs * n_runs
        keep = expected >= 5
        obs = np.append(counts[c][keep], counts[c][~keep].sum())
        exp = np.append(expected[keep], expected[~keep].sum())
        exp *= obs.sum() / exp.sum()
        assert stats.chisquare(obs, exp).pvalue > 0.001


def test_four_chain_spins_stay_admissible():
    region = _square(2)
    f = sample_field(region, 1.0, 12)
    annulus = {(0, 0), (1, 0)}
    tilde = f.shifted(((annulus, 0.7),))
    family = [GibbsSpec(region, 1, f, 1.0), GibbsSpec(region, -1, f, 1.0),
              GibbsSpec(region, 1, tilde, 1.0),
              GibbsSpec(region, -1, tilde, 1.0)]
    sampler = ExactFamilySampler(family)
    allowed = set(ADMISSIBLE_ROWS.values())
    order = sorted(site_set(region))
    for r in range(200):
        tr = sampler.run_order(order, derive_seed(77, r))
        for s in tr.steps:
            assert s.spins in allowed


def test_trace_json_roundtrip():
    tr = CouplingTrace(mode="exact", k=2, beta=1.0, seed=5)
    tr.steps.append(CouplingStep(site=(0, 1), spins=(1, -1),
                                 thetas=(0.7, 0.2), uniform=0.4))
    tr.meta["kind"] = "breadth_first"
    tr.meta["N"] = 1
    back = CouplingTrace.from_json(tr.to_json())
    assert back.steps[0].site == (0, 1)
    assert back.steps[0].spins == (1, -1)
    assert back.meta == tr.meta and back.beta == 1.0
    with pytest.raises(ValueError):
        CouplingTrace.from_json('{"schema": "other"}')


def test_breadth_first_exact_small_box():
    f = sample_field(BoxRegion(1), 1.0, 3)
    for seed in range(30):
        sp, sm, tr = breadth_first_coupling(1, f, 1.0, seed)
        assert set(sp) == site_set(BoxRegion(1))
        assert all(sp[v] >= sm[v] for v in sp)
        assert percolation_property_holds(sp, sm, 1)
        assert tr.mode == "exact"


def test_breadth_first_lockstep_and_replay():
    f = sample_field(BoxRegion(4), 1.0, 21)
    sp, sm, tr = breadth_first_coupling(4, f, 1.0, 11)
    assert tr.mode != "exact"
    assert all(sp[v] >= sm[v] for v in sp)
    assert percolation_property_holds(sp, sm, 4)
    replay_trace(CouplingTrace.from_json(tr.to_json()), f, 1.0)
    bad = CouplingTrace.from_json(tr.to_json())
    bad.meta["kind"] = "mystery"
    with pytest.raises(ValueError):
        replay_trace(bad, f, 1.0)


def test_multi_phase_runs_and_replays():
    f = sample_field(BoxRegion(8), 1.0, 5)
    tr = multi_phase_exploration(8, f, 1.0, 3, delta=0.25, alpha_prime=0.3,
                                 K=2, ell=1)
    assert tr.meta["kind"] == "multi_phase"
    assert len(tr.steps) == BoxRegion(8).site_count
    assert tr.stages and tr.stages[0].phase == 0 or tr.stages[0].phase == 1
    replay_trace(CouplingTrace.from_json(tr.to_json()), f, 1.0)


def test_multi_phase_invalid_parameters():
    f = sample_field(BoxRegion(8), 1.0, 5)
    with pytest.raises(ValueError):
        multi_phase_exploration(8, f, 1.0, 3, delta=0.25)  # default step too big


def test_rings():
    for r in (1, 2, 5):
        ring = ring_clockwise(r)
        assert len(ring) == 8 * r and len(set(ring)) == 8 * r
        assert ring[0] == (r, r)
        bb = box_boundary_ring(r)
        assert len(bb) == 8 * r - 4
        assert all(abs(x) < r or abs(y) < r for (x, y) in bb)
    assert ring_clockwise(0, center=(3, 4)) == [(3, 4)]


def test_full_disagreement():
    assert full_disagreement((1, -1, 1, -1))
    assert not full_disagreement((1, -1, 1, 1))
    assert not full_disagreement((1, 1, 1, -1))


def test_c_star_from_steps():
    tr = CouplingTrace(mode="exact", k=4, beta=1.0, seed=0)
    tr.steps.append(CouplingStep(site=(0, 0), spins=(1, -1, 1, -1)))
    tr.steps.append(CouplingStep(site=(1, 0), spins=(1, 1, 1, -1)))
    assert c_star_from_steps(tr) == {(0, 0)}


def test_adaptive_policy_controls_order():
    region = _square(2)
    f = sample_field(region, 1.0, 8)
    family = [GibbsSpec(region, 1, f, 1.0), GibbsSpec(region, -1, f, 1.0)]
    want_first = (1, 1)

    def policy(run):
        if not run.revealed:
            return want_first
        return None

    configs, tr = adaptive_admissible_sample(family, policy, 7)
    assert tr.steps[0].site == want_first
    assert len(tr.steps) == 4
    assert set(configs[0]) == site_set(region)

    def bad_policy(run):
        return want_first

    with pytest.raises(ValueError):
        adaptive_admissible_sample(family, bad_policy, 7)
    with pytest.raises(ValueError):
        adaptive_admissible_sample(family, None, 7, mode="lockstep")


def test_stopping_set_audit_small_family():
    region = _square(2)
    f = sample_field(region, 1.0, 14)
    family = [GibbsSpec(region, 1, f, 0.6), GibbsSpec(region, -1, f, 0.6)]
    stop = [(0, 0), (1, 1)]
    rep = stopping_set_conditional_audit(family, stop, n_runs=6000, seed=2,
                                         min_bin=200)
    assert rep["n_runs"] == 6000 and rep["total_bins"] >= 1
    assert rep["bins"], "no bin reached the minimum occupancy"
    for entry in rep["bins"]:
        assert entry["count"] >= 200
        for p in entry["pvalues"]:
            assert p > 0.001


def test_build_hat_family_shapes():
    region = _square(2)
    f = sample_field(region, 1.0, 4)
    from rfimlab.geometry import GridIndex
    bsites = GridIndex(region).boundary_sites()
    tuples = {v: ADMISSIBLE_ROWS["f"] for v in bsites}
    fam, hb = build_hat_family(region, tuples, f, {(0, 0)}, 0.5, 1.0)
    assert len(fam) == 8
    assert all(sp.beta == 1.0 for sp in fam)
    assert fam[2].field.value((0, 0)) == pytest.approx(f.value((0, 0)) + 0.5)
    assert fam[0].boundary == {v: 1 for v in bsites}
    assert hb.mapped == hb.original  # row f is a fixed point
