import csv
import json

import numpy as np
import pytest

from doublestable import NumericalError, ParameterError, lab
from doublestable.cli import OUTPUT_COLUMNS, main, read_config_file, render

SMALL = dict(table_horizon=4096, n=2000, reps=30, seed=5)


def cfg(command, **kw):
    return lab.ExperimentConfig(command=command, **{**SMALL, **kw})


def rows_by_name(rows, name):
    return [r.record for r in rows if r.record.name == name]


def flat(rows):
    # rendered text, so NaN fields compare equal
    return render(rows, lab.ExperimentConfig())


def test_constants_rows():
    rows = lab.run(cfg("constants", rho=(0.0, 1.0)))
    q = rows_by_name(rows, "qF2")[0].estimate
    theta = {r.rho: r.estimate for r in rows_by_name(rows, "theta_rho")}
    assert theta[0.0] == q
    assert theta[1.0] == pytest.approx(0.4 * q)
    assert rows_by_name(rows, "qF2")[0].se > 0
    assert flat(rows) == flat(lab.run(cfg("constants", rho=(0.0, 1.0))))
    assert all(r.config_digest == rows[0].config_digest for r in rows)


def test_config_validation():
    with pytest.raises(ParameterError):
        lab.run(cfg("constants", table_horizon=10))
    with pytest.raises(ParameterError):
        lab.run(cfg("phase-sweep", rho=()))
    with pytest.raises(ParameterError):
        lab.run(cfg("phase-sweep", rho=(0.5, 1.0)))
    with pytest.raises(ParameterError):
        lab.run(cfg("constants", alpha=1.5))
    with pytest.raises(ParameterError):
        lab.run(cfg("nope"))


def test_phase_sweep_rows_and_parallel_invariance():
    c = cfg("phase-sweep", rho=(0.3, 0.6), y=(1.0, 2.0), m=40)
    rows = lab.run(c)
    rates = rows_by_name(rows, "block_exceedance_rate")
    assert len(rates) == 4
    assert {r.y for r in rows_by_name(rows, "sweep_ordering")} == {1.0, 2.0}
    for r in rates:
        assert r.target == pytest.approx((1 - 0.6 * r.rho) * rows_by_name(lab.run(cfg("constants")), "qF2")[0].estimate * r.y**-0.7)
    par = lab.run(lab.ExperimentConfig(**{**c.__dict__, "parallelism": 2}))
    assert flat(rows) == flat(par)


def test_sweep_verdict():
    from doublestable.estimators import EstimateRecord

    mk = lambda rho, e: EstimateRecord("block_exceedance_rate", e, 0.01, 10, rho=rho, y=1.0)
    assert lab.sweep_verdict([mk(0.8, 0.4), mk(0.2, 0.8), mk(0.5, 0.6)], 1.0).extra["verdict"] == "decreasing"
    assert lab.sweep_verdict([mk(0.2, 0.8), mk(0.5, 0.79)], 1.0).estimate == 0.0


def test_macro_rows():
    rows = lab.run(cfg("macro", n_list=(500, 1000), reps=20))
    assert len(rows_by_name(rows, "running_max_cdf")) == 4
    assert len(rows_by_name(rows, "poisson_block_counts")) == 1
    assert len(rows_by_name(rows, "cluster_flatness")) == 3
    trend = rows_by_name(rows, "flatness_trend")[0]
    assert trend.extra["n"] == [500, 1000, 2000]


def test_macro_cluster_gof_row_present():
    rows = lab.run(cfg("macro", n_list=(), n=3000, reps=40, m=60))
    gof = rows_by_name(rows, "cluster_size_gof")
    assert gof and "p_value" in gof[0].extra


def test_tailproc_rows():
    c = cfg("tailproc", reps=3000, residual_frac=1e-2)
    rows = lab.run(c)
    names = [r.record.name for r in rows]
    assert names == ["tail_cluster_gof", "candidate_extremal_index", "two_sided_count_identity"]
    q = rows[1].record.target
    assert rows[2].record.target == pytest.approx(2 / q - 1)
    assert flat(rows) == flat(lab.run(c))


def test_hitprob_rows():
    rows = lab.run(cfg("hitprob", n=2000, d=(50,), reps=50000))
    pair = rows_by_name(rows, "pair_hit_probability")[0]
    assert abs(pair.z) < 4
    with pytest.raises(ParameterError):
        lab.run(cfg("hitprob", n=2000, d=(5000,)))


def test_ac_and_sums_rows():
    rows = lab.run(cfg("ac", rho=(0.5,), m_lag=(0.25, 0.5)))
    assert [r.record.extra["m_lag"] for r in rows] == [11, 22]
    rows = lab.run(cfg("sums", reps=20))
    ks = rows[0].record
    assert ks.name == "partial_sum_ks" and 0 <= ks.estimate <= 1


def test_table_cache(tmp_path, monkeypatch):
    t1 = lab.tables_for(0.3, 2000, str(tmp_path))
    assert len(list(tmp_path.glob("tables_*.npz"))) == 1

    def boom(*a, **k):
        raise AssertionError("tables rebuilt despite cache")

    monkeypatch.setattr(lab, "build_tables", boom)
    t2 = lab.tables_for(0.3, 2000, str(tmp_path))
    assert t2.qF2 == t1.qF2 and np.array_equal(t2.u, t1.u)


# -- command line ----------------------------------------------------------------


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_cli_csv_output_and_replay(tmp_path):
    out = tmp_path / "c.csv"
    args = ["constants", "--table-horizon", "2000", "--rho", "0.2", "--rho", "0.8", "--out", str(out), "--plot-data"]
    assert main(args) == 0
    text = out.read_text()
    header = [l for l in text.splitlines() if not l.startswith("#")][0]
    assert header.split(",") == list(OUTPUT_COLUMNS)
    rows = read_csv(out)
    assert {r["rho"] for r in rows if r["name"] == "theta_rho"} == {"0.0", "0.2", "0.8", "1.0"}
    assert json.loads((tmp_path / "c.csv.meta.json").read_text())["config_digest"] == rows[0]["config_digest"]
    plot = (tmp_path / "c.csv.plot.csv").read_text().splitlines()
    assert plot[0] == "series,x,y,ci_lo,ci_hi"
    # the output replays itself
    out2 = tmp_path / "c2.csv"
    assert main(["constants", "--config", str(out), "--out", str(out2)]) == 0
    assert out2.read_text() == text


def test_cli_config_file_and_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# sweep settings\nalpha = 0.6\nbeta=0.25\ntable_horizon=1500\nrho=0.1 0.9\n")
    assert read_config_file(conf) == {"alpha": 0.6, "beta": 0.25, "table_horizon": 1500, "rho": (0.1, 0.9)}
    out = tmp_path / "o.jsonl"
    assert main(["constants", "--config", str(conf), "--alpha", "0.5", "--format", "jsonl", "--out", str(out)]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines[0]["config"]["alpha"] == 0.5 and lines[0]["config"]["beta"] == 0.25
    assert list(lines[1]) == list(OUTPUT_COLUMNS)
    thetas = {l["rho"] for l in lines[1:] if l["name"] == "theta_rho"}
    assert thetas == {0.0, 0.1, 0.9, 1.0}


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert main(["constants", "--table-horizon", "10"]) == 2
    assert main(["constants", "--beta", "0.7"]) == 2
    bad = tmp_path / "bad.conf"
    bad.write_text("gamma=3\n")
    assert main(["constants", "--config", str(bad)]) == 2

    def fail(_):
        raise NumericalError("negative mass")

    monkeypatch.setattr(lab, "run", fail)
    assert main(["constants"]) == 3
    assert "numerical error" in capsys.readouterr().err


def test_cli_manifest_and_path_dump(tmp_path):
    out = tmp_path / "s.csv"
    args = ["phase_sweep", "--n", "1000", "--reps", "4", "--m", "30", "--rho", "0.5", "--table-horizon", "2000",
            "--out", str(out), "--manifest", "--dump-paths", "2"]
    assert main(args) == 0
    man = json.loads((tmp_path / "s.csv.manifest.json").read_text())
    assert [r["index"] for r in man["replications"]] == [0, 1, 2, 3]
    assert man["seed"] == lab.ExperimentConfig().seed
    dumped = sorted((tmp_path / "s.csv.paths").glob("*.csv"))
    assert len(dumped) == 2
    with open(dumped[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "x_k"] and len(rows) == 1001
    # the dump is the same path the run used
    from doublestable import SeriesConfig, make_renewal_law, simulate_path, stream

    x = simulate_path(SeriesConfig(n=1000, alpha=0.7, law=make_renewal_law(0.3), m=30), stream(man["seed"], 0, "sweep")).x
    assert [float(r[1]) for r in rows[1:]] == list(x)
    again = tmp_path / "s2.csv"
    assert main(args[:-5] + ["--out", str(again)]) == 0
    assert again.read_text() == out.read_text()
