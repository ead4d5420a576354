import json

import numpy as np

from sparselb.cli import main
from sparselb.graph import read_graph
from sparselb.records import read_trajectory_csv


def run(*argv):
    return main(list(argv))


def _data_rows(path):
    return [
        ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")
    ]


def test_gen_complete(tmp_path):
    out = tmp_path / "c.bpg"
    assert run("gen", "--kind", "complete", "--n", "4", "--m", "4", "--out", str(out)) == 0
    g = read_graph(out)
    assert g.n_edges == 16


def test_gen_braess(tmp_path):
    out = tmp_path / "b.bpg"
    assert run("gen", "--kind", "braess", "--out", str(out)) == 0
    assert read_graph(out).n_edges == 14


def test_gen_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.bpg", tmp_path / "b.bpg"
    args = ["gen", "--kind", "fixed-degree", "--n", "200", "--m", "200", "--c", "11", "--seed", "7"]
    assert run(*args, "--out", str(a)) == 0
    assert run(*args, "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_check_braess_optimal_load(tmp_path):
    g = tmp_path / "b.bpg"
    run("gen", "--kind", "braess", "--out", str(g))
    out = tmp_path / "check.csv"
    assert run("check", "--graph", str(g), "--d", "2", "--epsilons", "0.2",
               "--mode", "exact", "--optimal", "--out", str(out)) == 0
    rows = _data_rows(out)
    header = rows[0].split(",")
    row = dict(zip(header, rows[1].split(",")))
    assert abs(float(row["optimal_load"]) - 5 / 3) <= 1e-6
    assert abs(float(row["uniform_metric"]) - 7 / 3) <= 1e-9


def test_check_matching_and_complete(tmp_path):
    g = tmp_path / "m.bpg"
    run("gen", "--kind", "matching", "--n", "4", "--out", str(g))
    out = tmp_path / "check.csv"
    assert run("check", "--graph", str(g), "--epsilons", "0.4", "--mode", "exact",
               "--out", str(out)) == 0
    header, row = (r.split(",") for r in _data_rows(out))
    assert float(dict(zip(header, row))["deficiency"]) == 1.0

    g2 = tmp_path / "c.bpg"
    run("gen", "--kind", "complete", "--n", "8", "--m", "5", "--out", str(g2))
    out2 = tmp_path / "check2.csv"
    assert run("check", "--graph", str(g2), "--epsilons", "0.05,0.2,0.5",
               "--mode", "exact", "--out", str(out2)) == 0
    for line in _data_rows(out2)[1:]:
        assert float(line.split(",")[1]) == 0.0


def test_simulate_deterministic_csv(tmp_path):
    g = tmp_path / "c.bpg"
    run("gen", "--kind", "complete", "--n", "100", "--m", "100", "--out", str(g))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--graph", str(g), "--d", "2", "--lambda", "0.8",
            "--horizon", "10", "--seed", "1"]
    assert run(*args, "--out", str(a)) == 0
    assert run(*args, "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_steady_mm1(tmp_path):
    g = tmp_path / "one.bpg"
    run("gen", "--kind", "complete", "--n", "1", "--m", "1", "--out", str(g))
    out = tmp_path / "steady.csv"
    assert run("steady", "--graph", str(g), "--d", "1", "--lambda", "0.5",
               "--warmup", "20", "--measure", "2000", "--replicas", "2",
               "--out", str(out)) == 0
    meta = {
        k.strip("# "): v.strip()
        for k, v in (ln.split(":", 1) for ln in out.read_text().splitlines() if ln.startswith("#") and ":" in ln)
    }
    assert abs(float(meta["mean_qlen"]) - 1.0) <= 0.05


def test_coupled_command(tmp_path):
    g = tmp_path / "fd.bpg"
    run("gen", "--kind", "fixed-degree", "--n", "60", "--m", "60", "--c", "9",
        "--seed", "3", "--out", str(g))
    out = tmp_path / "coup.csv"
    assert run("coupled", "--graph", str(g), "--d", "2", "--lambda", "0.8",
               "--horizon", "10", "--out", str(out)) == 0
    rows = _data_rows(out)
    assert rows[0].split(",")[-2:] == ["delta", "margin_min_so_far"]
    last = rows[-1].split(",")
    assert int(last[-1]) >= 0  # margin_min_so_far stays nonnegative


def test_ode_and_compare_zero_distance(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["ode", "--lambda", "0.8", "--d", "2", "--horizon", "5", "--depth", "10"]
    assert run(*args, "--out", str(a)) == 0
    assert run(*args, "--out", str(b)) == 0
    assert run("compare", "--a", str(a), "--b", str(b)) == 0
    rec, meta = read_trajectory_csv(a)
    assert meta["depth"] == "10"
    assert rec.depth == 10


def test_compare_refuses_mismatched_metadata(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("ode", "--lambda", "0.8", "--horizon", "5", "--depth", "10", "--out", str(a))
    run("ode", "--lambda", "0.5", "--horizon", "5", "--depth", "10", "--out", str(b))
    assert run("compare", "--a", str(a), "--b", str(b)) == 1


def test_compare_refuses_horizon_mismatch(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("ode", "--lambda", "0.8", "--horizon", "5", "--depth", "10", "--out", str(a))
    run("ode", "--lambda", "0.8", "--horizon", "6", "--depth", "10", "--out", str(b))
    assert run("compare", "--a", str(a), "--b", str(b)) == 1


def test_simulate_vs_ode_compare(tmp_path):
    g = tmp_path / "c.bpg"
    run("gen", "--kind", "complete", "--n", "500", "--m", "500", "--out", str(g))
    sim, ode = tmp_path / "sim.csv", tmp_path / "ode.csv"
    assert run("simulate", "--graph", str(g), "--d", "2", "--lambda", "0.8",
               "--horizon", "10", "--seed", "2", "--depth", "12", "--out", str(sim)) == 0
    assert run("ode", "--lambda", "0.8", "--d", "2", "--horizon", "10",
               "--depth", "12", "--out", str(ode)) == 0
    assert run("compare", "--a", str(sim), "--b", str(ode), "--levels", "8") == 0


def test_exit_codes(tmp_path):
    assert run("gen", "--kind", "complete", "--n", "0", "--m", "2",
               "--out", str(tmp_path / "x.bpg")) == 1  # bad parameters
    assert run("simulate", "--graph", str(tmp_path / "missing.bpg"),
               "--out", str(tmp_path / "y.csv")) == 3  # I/O
    bad = tmp_path / "bad.bpg"
    bad.write_text("not a graph\n")
    assert run("check", "--graph", str(bad), "--out", str(tmp_path / "z.csv")) == 3
    assert run("reproduce", "no-such-recipe") == 1
    assert run("compare", "--a", str(tmp_path / "nope.csv"), "--b", str(tmp_path / "nope.csv")) == 3


def test_usage_error_is_exit_1():
    assert run("gen", "--kind", "complete") == 1  # missing --out
    assert run("nonexistent-command") == 1


def test_disconnected_graph_exit(tmp_path):
    g = tmp_path / "m.bpg"
    run("gen", "--kind", "matching", "--n", "4", "--out", str(g))
    assert run("simulate", "--graph", str(g), "--d", "1", "--lambda", "0.5",
               "--horizon", "1", "--out", str(tmp_path / "t.csv")) == 1
    assert run("simulate", "--graph", str(g), "--d", "1", "--lambda", "0.5",
               "--horizon", "1", "--allow-disconnected",
               "--out", str(tmp_path / "t.csv")) == 0


def test_config_file_defaults_and_override(tmp_path):
    g = tmp_path / "c.bpg"
    run("gen", "--kind", "complete", "--n", "20", "--m", "20", "--out", str(g))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": 0.6, "horizon": 3.0, "seed": 5}))
    out = tmp_path / "sim.csv"
    assert run("simulate", "--graph", str(g), "--config", str(cfg),
               "--out", str(out)) == 0
    _, meta = read_trajectory_csv(out)
    assert meta["lambda"] == "0.6"
    assert meta["seed"] == "5"
    # explicit flag beats the config file
    assert run("simulate", "--graph", str(g), "--config", str(cfg),
               "--lambda", "0.7", "--out", str(out)) == 0
    _, meta = read_trajectory_csv(out)
    assert meta["lambda"] == "0.7"


def test_trend_command(tmp_path):
    out = tmp_path / "trend.csv"
    assert run("trend", "--family", "fixed-degree-log2", "--sizes", "32,64",
               "--seeds", "0..2", "--epsilons", "0.15", "--budget", "16",
               "--out", str(out)) == 0
    rows = _data_rows(out)
    assert len(rows) == 1 + 2 * 3
    assert run("trend", "--family", "unknown", "--sizes", "8", "--seeds", "0",
               "--out", str(out)) == 1


def test_reproduce_erg_trajectories(tmp_path):
    out = tmp_path / "erg.csv"
    assert run("reproduce", "erg-trajectories", "--sizes", "40", "--horizon", "3",
               "--depth", "8", "--out", str(out)) == 0
    rows = _data_rows(out)
    sources = {ln.split(",")[0] for ln in rows[1:]}
    assert sources == {"sim-N40", "ode"}


def test_reproduce_degree_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("reproduce", "degree-sweep", "--sizes", "40", "--out", str(out)) == 0
    rows = _data_rows(out)
    families = {ln.split(",")[0] for ln in rows[1:]}
    assert families == {"fixed-degree-4", "fixed-degree-log", "fixed-degree-log2"}


def test_reproduce_service_sweep(tmp_path):
    out = tmp_path / "svc.csv"
    assert run("reproduce", "service-sweep", "--sizes", "40", "--out", str(out)) == 0
    rows = _data_rows(out)
    kinds = {ln.split(",")[0] for ln in rows[1:]}
    assert kinds == {"exponential", "deterministic", "pareto"}
    means = [float(ln.split(",")[2]) for ln in rows[1:]]
    assert all(np.isfinite(m) for m in means)
