import csv
import json

import numpy as np
import pytest

from heritml import bench
from heritml.bench import (
    ROW_FIELDS,
    BenchmarkConfig,
    ConfigError,
    make_cell,
    prepare_bench_data,
    read_rows,
    run_benchmark,
    summarize_rows,
    write_report,
    write_summary,
)
from heritml.cli import main

SMALL_SIM = {"n": 80, "p": 240, "seed": 1}


def strip_time(rows):
    return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]


def row(setting="s", rep=0, method="mle", h2="0.5", lo="", hi="", status="ok"):
    return {"setting": setting, "replicate": str(rep), "method": method, "h2": h2, "lo": lo, "hi": hi,
            "status": status, "wall_time_s": "0.1", "support_size": ""}


# --------------------------------------------------------------- simulate


def test_simulate_reproducible_and_shaped(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 100, "p": 500, "seed": 7}))
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for f in ("genotypes.csv", "phenotype.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / "genotypes.csv")))
    assert len(rows) == 101 and all(len(r) == 501 for r in rows)
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert truth["true_h2"] == pytest.approx(0.8, abs=1e-10)
    assert truth["sigma2_eps"] == 1.0


def test_simulate_rejects_bad_spec(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 100, "p": 500, "colour": 1}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "unknown key" in capsys.readouterr().err


# --------------------------------------------------------------- estimate


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    (d / "sim.json").write_text(json.dumps({"n": 60, "p": 50, "seed": 3}))
    assert main(["simulate", "--config", str(d / "sim.json"), "--out", str(d)]) == 0
    return d


def test_oracle_requires_truth(dataset, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--genotypes", str(dataset / "genotypes.csv"), "--phenotype",
              str(dataset / "phenotype.csv"), "--methods", "oracle", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_failing_method_is_isolated_and_reproducible(dataset, tmp_path):
    args = ["estimate", "--genotypes", str(dataset / "genotypes.csv"), "--phenotype",
            str(dataset / "phenotype.csv"), "--truth", str(dataset / "truth.json"),
            "--methods", "oracle,eigenprism,mle,moment", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    r1 = read_rows(tmp_path / "r1" / "estimates.csv")
    r2 = read_rows(tmp_path / "r2" / "estimates.csv")
    status = {r["method"]: r["status"] for r in r1}
    assert status == {"oracle": "ok", "eigenprism": "failed", "mle": "ok", "moment": "ok"}
    assert strip_time(r1) == strip_time(r2)


def test_all_methods_failing_exit_code(dataset, tmp_path):
    code = main(["estimate", "--genotypes", str(dataset / "genotypes.csv"), "--phenotype",
                 str(dataset / "phenotype.csv"), "--methods", "eigenprism", "--out", str(tmp_path)])
    assert code == 1


def test_misaligned_ids_stop_before_estimation(dataset, tmp_path, monkeypatch):
    bad = tmp_path / "y.csv"
    lines = (dataset / "phenotype.csv").read_text().splitlines()
    lines[1] = "stranger," + lines[1].split(",")[1]
    bad.write_text("\n".join(lines) + "\n")
    monkeypatch.setattr(bench, "_estimate", lambda *a: pytest.fail("estimation must not start"))
    code = main(["estimate", "--genotypes", str(dataset / "genotypes.csv"), "--phenotype", str(bad),
                 "--methods", "mle", "--out", str(tmp_path / "o")])
    assert code == 2


# -------------------------------------------------------------- benchmark


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"replicate": 3})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"boost": {"b": 3}})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"simulation": {"nn": 3}})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"methods": []})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"methods": ["ridge"]})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"settings": ["everything"]})


def test_causalgenes_uses_only_causal_columns():
    cfg = BenchmarkConfig.from_dict({"simulation": SMALL_SIM, "replicates": 1})
    data = prepare_bench_data(cfg)
    X, y, _, _ = make_cell(cfg, data, "causalgenes", 0)
    assert X.shape == (80, data.causal.size)
    X, y, _, _ = make_cell(cfg, data, "subsample500", 0)
    assert X.shape[0] == y.size == round(80 / 6)
    assert np.allclose(X.mean(axis=0), 0) and abs(y.mean()) < 1e-12


def test_subsample_sizes_configurable():
    cfg = BenchmarkConfig.from_dict({"simulation": SMALL_SIM, "subsample_sizes": {"subsample1500": 30}})
    data = prepare_bench_data(cfg)
    assert make_cell(cfg, data, "subsample1500", 0)[0].shape[0] == 30


def test_every_setting_and_method_counted():
    cfg = BenchmarkConfig.from_dict({
        "simulation": SMALL_SIM, "replicates": 1,
        "boost": {"B": 2, "enet": {"alpha_mix": 0.5, "cv_folds": 3, "n_lambda": 10}}, "cv_folds": 3,
    })
    rows = run_benchmark(cfg)
    assert len(rows) == 6 * 7
    assert {(r["setting"], r["method"]) for r in rows} == {(s, m) for s in bench.SETTINGS for m in cfg.methods}
    failed = [r for r in rows if r["status"] == "failed"]
    assert all(r["h2"] == "" for r in failed)
    # 13 subsampled rows are too few for boosting (n >= 20); only that cell fails
    assert {(r["setting"], r["method"]) for r in failed} == {("subsample500", "boosther")}


def test_oracle_mean_in_wholegenes():
    cfg = BenchmarkConfig.from_dict({"simulation": {"n": 300, "p": 600}, "replicates": 30,
                                     "settings": ["wholegenes"], "methods": ["oracle"]})
    vals = [float(r["h2"]) for r in run_benchmark(cfg)]
    assert abs(np.mean(vals) - 0.8) <= 0.05


def test_determinism_across_parallelism():
    base = {"simulation": SMALL_SIM, "replicates": 2, "settings": ["wholegenes", "t_effect"],
            "methods": ["oracle", "mle", "enet"], "cv_folds": 3}
    runs = [strip_time(run_benchmark(BenchmarkConfig.from_dict({**base, "parallelism": k}))) for k in (1, 3)]
    assert runs[0] == runs[1]


def test_failure_does_not_leak(monkeypatch):
    real = bench._estimate

    def flaky(method, X, y, ctx, cache):
        if method.value == "mle" and ctx.seed % 2:
            raise FloatingPointError("synthetic failure")
        return real(method, X, y, ctx, cache)

    monkeypatch.setattr(bench, "_estimate", flaky)
    cfg = BenchmarkConfig.from_dict({"simulation": SMALL_SIM, "replicates": 4, "settings": ["wholegenes"],
                                     "methods": ["oracle", "mle", "moment"]})
    rows = run_benchmark(cfg)
    assert len(rows) == 12
    assert all(r["status"] == "ok" for r in rows if r["method"] != "mle")


def test_report_files_and_summary_fold(tmp_path):
    cfg = BenchmarkConfig.from_dict({"simulation": SMALL_SIM, "replicates": 2, "settings": ["wholegenes"],
                                     "methods": ["oracle", "mle"], "output_dir": str(tmp_path / "out")})
    write_report(cfg, run_benchmark(cfg))
    out = tmp_path / "out"
    assert set(p.name for p in out.iterdir()) == {"rows.csv", "summary.csv", "summary.txt", "plot_long.csv"}
    assert main(["summarize", str(out / "rows.csv"), "--out", str(tmp_path / "again")]) == 0
    assert (out / "summary.csv").read_bytes() == (tmp_path / "again" / "summary.csv").read_bytes()
    header = (out / "rows.csv").read_text().splitlines()[0]
    assert header == ",".join(ROW_FIELDS)


def test_benchmark_cli_overrides(tmp_path):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({"simulation": SMALL_SIM, "replicates": 1, "settings": ["wholegenes"],
                               "methods": ["oracle"]}))
    assert main(["benchmark", "--config", str(cfg), "--methods", "oracle,moment", "--seed", "3",
                 "--parallelism", "2", "--alpha", "0.1", "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "rows.csv")
    assert [r["method"] for r in rows] == ["oracle", "moment"]


# -------------------------------------------------------------- summarize


def test_single_row_summary():
    s = summarize_rows([row(h2="0.42")])[0]
    assert float(s["mean"]) == 0.42 and float(s["sd"]) == 0.0


def test_all_failed_summary():
    s = summarize_rows([row(h2="", status="failed"), row(rep=1, h2="", status="failed")])[0]
    assert s["mean"] == "" and float(s["failure_rate"]) == 1.0


def test_width_over_ok_rows():
    rows = [row(h2="0.5", lo="0.4", hi="0.7"), row(rep=1, h2="0.6", lo="0.5", hi="0.6"),
            row(rep=2, h2="", status="failed")]
    s = summarize_rows(rows)[0]
    assert float(s["mean_width"]) == pytest.approx(0.2)
    assert float(s["failure_rate"]) == pytest.approx(1 / 3)


def test_malformed_rows(tmp_path):
    bad = tmp_path / "rows.csv"
    bad.write_text("setting,method\nx,y\n")
    with pytest.raises(ConfigError):
        write_summary(bad, tmp_path)
    bad.write_text(",".join(ROW_FIELDS) + "\ns,0,mle,abc,,,ok,0.1,\n")
    with pytest.raises(ConfigError):
        read_rows(bad)
    assert main(["summarize", str(bad)]) == 2
