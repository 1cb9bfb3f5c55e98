import json
import math

import numpy as np
import pytest

from rfimlab import cli
from rfimlab.couplings import CouplingTrace, breadth_first_coupling
from rfimlab.experiments import (ExperimentConfig, ResultTable,
                                 aggregate_decay, log_slope,
                                 lumped_chisquare, parallel_instances,
                                 run_coupling_suite, run_crossing_scan,
                                 run_decay, run_free_energy_suite,
                                 run_perturbation_audit, wilson_interval)
from rfimlab.geometry import BoxRegion
from rfimlab.randomfield import load_field_binary, sample_field


def test_config_roundtrip_and_hash(tmp_path):
    cfg = ExperimentConfig(kind="decay", n_values=(4, 8), epsilon=3.0,
                           delta=None, instances=7, seed=42)
    p = tmp_path / "exp.cfg"
    cfg.to_file(p)
    back = ExperimentConfig.from_file(p)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    other = ExperimentConfig(kind="decay", n_values=(4, 8), epsilon=3.0,
                             delta=None, instances=7, seed=43)
    assert other.config_hash() != cfg.config_hash()
    with pytest.raises(ValueError):
        ExperimentConfig(mode="warp")


def test_result_table_behaviour(tmp_path):
    t = ResultTable(columns=("a", "b", "censored"))
    t.add(a=1, b=2.5, censored=0)
    t.add(a=2, b=3.5, censored=1)
    with pytest.raises(ValueError):
        t.add(a=1, c=2)
    assert t.column("b") == [2.5, 3.5]
    assert t.censored == 1
    csv = tmp_path / "t.csv"
    t.to_csv(csv)
    assert csv.read_text().splitlines()[0] == "a,b,censored"
    jsn = tmp_path / "t.json"
    t.metadata["note"] = "x"
    t.to_json(jsn)
    d = json.loads(jsn.read_text())
    assert d["metadata"]["note"] == "x"
    assert "wall_time" not in d["metadata"]


def test_wilson_interval():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    assert wilson_interval(0, 50)[0] == 0.0
    assert wilson_interval(50, 50)[1] == 1.0


def test_lumped_chisquare():
    counts = np.array([100, 95, 105, 2, 1])
    expected = np.array([100, 100, 100, 1.5, 1.5])
    stat, p = lumped_chisquare(counts, expected)
    assert p > 0.05
    stat2, p2 = lumped_chisquare(np.array([3]), np.array([3.0]))
    assert (stat2, p2) == (0.0, 1.0)


def test_decay_t0_reproducible_and_epsilon_limit():
    cfg = ExperimentConfig(kind="decay", n_values=(2,), epsilon=1.0,
                           instances=40, seed=5)
    a = run_decay(cfg)
    b = run_decay(cfg)
    assert a.rows == b.rows
    strong = ExperimentConfig(kind="decay", n_values=(2,), epsilon=100.0,
                              instances=60, seed=5)
    agg = aggregate_decay(run_decay(strong))
    assert agg[0]["m_hat"] < 0.1


def test_decay_cftp_mode():
    cfg = ExperimentConfig(kind="decay", n_values=(1,), epsilon=1.0,
                           beta=0.5, mode="cftp", instances=10, samples=3,
                           seed=1)
    t = run_decay(cfg)
    assert t.censored == 0
    for v in t.column("value"):
        assert 0.0 <= v <= 2.0


def test_aggregate_and_log_slope_on_synthetic_points():
    t = ResultTable(columns=("N", "instance", "seed", "value", "censored"))
    rng = np.random.default_rng(0)
    rate = 0.5
    for N in (2, 4, 8):
        p = math.exp(-rate * N)
        for i in range(4000):
            t.add(N=N, instance=i, seed=0,
                  value=float(rng.random() < p), censored=0)
    agg = aggregate_decay(t)
    assert [a["N"] for a in agg] == [2, 4, 8]
    slope, se = log_slope(agg)
    assert abs(slope + rate) < 4 * se
    with pytest.raises(ValueError):
        log_slope([{"N": 2, "m_hat": 0.5, "se": 0.1}])


def test_perturbation_audit_all_green():
    cfg = ExperimentConfig(kind="perturb-audit", n_values=(8,), epsilon=1.0,
                           instances=5, seed=3)
    t = run_perturbation_audit(cfg)
    assert all(v == 1 for v in t.column("incompatible_ok"))
    assert all(v == 1 for v in t.column("path_ok"))
    assert all(v == 1 for v in t.column("flip_ok"))
    assert t.metadata["delta"] == pytest.approx(1.0 / 8)
    assert t.metadata["K"] == 2


def test_crossing_scan_metadata():
    cfg = ExperimentConfig(kind="crossing-scan", n_values=(16,), epsilon=1.0,
                           instances=10, seed=2)
    t = run_crossing_scan(cfg)
    assert len(t.rows) == 10
    for (i, s, hard, easy, nonempty, cen) in t.rows:
        if hard:
            assert nonempty
    lo, hi = t.metadata["hard_wilson95"]
    assert lo <= t.metadata["p_hard"] <= hi


def test_coupling_suite_small():
    cfg = ExperimentConfig(kind="coupling-suite", n_values=(2,), epsilon=1.0,
                           beta=1.0, instances=5, samples=400, seed=6)
    t = run_coupling_suite(cfg)
    rows = {r[0]: r for r in t.rows}
    assert rows["bfs_percolation"][2] == 0
    assert rows["adaptive_marginals"][2] == 0
    assert not math.isnan(rows["adaptive_marginals"][3])


def test_free_energy_suite_small():
    cfg = ExperimentConfig(kind="free-energy", n_values=(4,), epsilon=1.0,
                           instances=1, samples=40, seed=9)
    t = run_free_energy_suite(cfg)
    assert len(t.rows) == 3  # one instance, three temperatures
    assert max(t.column("deriv_rel_err")) < 1e-6
    for col in ("two_zone_ok", "hat_upper_ok", "hat_lower_ok",
                "hat_inclusion_ok"):
        assert all(v == 1 for v in t.column(col))


def test_parallel_matches_serial():
    cfgs = [ExperimentConfig(kind="decay", n_values=(2,), instances=10,
                             seed=s) for s in (1, 2)]
    serial = parallel_instances(run_decay, cfgs, jobs=1)
    para = parallel_instances(run_decay, cfgs, jobs=2)
    assert [t.rows for t in serial] == [t.rows for t in para]


def test_cli_experiment_writes_outputs(tmp_path):
    out = tmp_path / "res"
    cfg = ExperimentConfig(kind="perturb-audit", n_values=(8,), instances=3,
                           seed=1)
    cfg_path = tmp_path / "run.cfg"
    cfg.to_file(cfg_path)
    rc = cli.main(["perturb-audit", "--config", str(cfg_path),
                   "--out", str(out)])
    assert rc == 0
    written = sorted(p.name for p in out.iterdir())
    assert any(n.endswith(".csv") for n in written)
    assert any(n.endswith(".json") for n in written)
    assert any(n.endswith(".cfg") for n in written)


def test_cli_field_dump_roundtrip(tmp_path):
    rc = cli.main(["field", "dump", "--n", "2", "--seed", "9",
                   "--out", str(tmp_path)])
    assert rc == 0
    vals, eps, seed = load_field_binary(tmp_path / "field-N2-s9.bin")
    ref = sample_field(BoxRegion(2), 1.0, 9)
    assert seed == 9 and vals == ref.as_dict()


def test_cli_replay_trace(tmp_path):
    f = sample_field(BoxRegion(4), 1.0, 0)
    _, _, tr = breadth_first_coupling(4, f, 1.0, 13)
    p = tmp_path / "trace.json"
    p.write_text(tr.to_json())
    rc = cli.main(["replay-trace", "--trace", str(p), "--field-seed", "0"])
    assert rc == 0
    bad = CouplingTrace.from_json(tr.to_json())
    bad.steps[0] = type(bad.steps[0])(site=bad.steps[1].site,
                                      spins=bad.steps[0].spins)
    p.write_text(bad.to_json())
    assert cli.main(["replay-trace", "--trace", str(p),
                     "--field-seed", "0"]) == 2
