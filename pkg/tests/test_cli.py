import json

import pytest

from qrfdensity import example_data_path
from qrfdensity.cli import main, read_config_file
from qrfdensity.dataset import read_csv_rows

FEATURES = ["Sunshine", "Humidity", "Rainfall", "AvgT", "MaxT", "MinT"]


def write_table(path, rows, names=("a", "b"), target=True):
    header = ["year", *names] + (["yield"] if target else [])
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--input-csv", str(example_data_path()), "--output-dir", str(out),
                 "--ntree", "100", "--seed", "3"]) == 0
    return out


def test_train_outputs(trained):
    for name in ("model.json", "normalization.json", "train.csv", "test.csv",
                 "summary_stats.txt", "summary_stats.json"):
        assert (trained / name).is_file()
    header, body = read_csv_rows(trained / "test.csv")
    assert header == ["year", *FEATURES, "yield"]
    assert [r[0] for r in body] == ["2014", "2015", "2016"]
    stats = (trained / "summary_stats.txt").read_text().splitlines()
    assert stats[0].split() == ["Column", "Mean", "Std", "Min", "Max", "Skewness"]
    assert stats[1].startswith("yield")
    doc = json.loads((trained / "normalization.json").read_text())
    assert doc["target_range"] == pytest.approx(doc["target"]["max"] - doc["target"]["min"])


def test_missing_input_exit_2(tmp_path, capsys):
    code, _, err = run(["train", "--input-csv", tmp_path / "nope.csv", "--output-dir", tmp_path], capsys)
    assert code == 2
    assert err.startswith("error: IoError:") and err.count("\n") == 1


def test_constant_feature_exit_3(tmp_path, capsys):
    src = write_table(tmp_path / "c.csv", [(2000 + i, 1.0, i * 0.5, 1 + 0.1 * i) for i in range(10)])
    code, _, err = run(["train", "--input-csv", src, "--output-dir", tmp_path / "o"], capsys)
    assert code == 3
    assert err.startswith("error: DegenerateFeature:")


def test_forecast_report(trained, capsys):
    code, out, _ = run(["forecast", "--model", trained / "model.json", "--query-csv", trained / "test.csv",
                        "--output-dir", trained / "fc", "--emit-density"], capsys)
    assert code == 0
    header, body = read_csv_rows(trained / "fc" / "forecast.csv")
    assert header == ["year", "lower", "observed", "predicted", "upper"]
    assert len(body) == 3
    for row in body:
        lo, obs, pred, hi = map(float, row[1:])
        assert lo <= pred <= hi
    for year in (2014, 2015, 2016):
        h, rows = read_csv_rows(trained / "fc" / f"density_{year}.csv")
        assert h == ["y", "density"] and len(rows) == 512
    assert out.splitlines()[0] == "year,lower,observed,predicted,upper"


def test_forecast_without_target_column(trained, tmp_path, capsys):
    header, body = read_csv_rows(trained / "test.csv")
    q = tmp_path / "q.csv"
    q.write_text("\n".join([",".join(header[:-1])] + [",".join(r[:-1]) for r in body]) + "\n")
    code, _, _ = run(["forecast", "--model", trained / "model.json", "--query-csv", q,
                      "--output-dir", tmp_path], capsys)
    assert code == 0
    _, rows = read_csv_rows(tmp_path / "forecast.csv")
    assert all(r[2] == "" for r in rows)


def test_forecast_schema_mismatch(trained, tmp_path, capsys):
    q = write_table(tmp_path / "q.csv", [(2020, 1.0, 2.0)], names=("Sunshine", "Wind"), target=False)
    code, _, err = run(["forecast", "--model", trained / "model.json", "--query-csv", q,
                        "--output-dir", tmp_path], capsys)
    assert code == 3 and "SchemaMismatch" in err


def test_point_mass_density_is_noted(tmp_path, capsys):
    src = write_table(tmp_path / "flat.csv", [(2000 + i, i, (i * 7) % 5, 1.25) for i in range(12)])
    out = tmp_path / "o"
    assert run(["train", "--input-csv", src, "--output-dir", out, "--ntree", "5"], capsys)[0] == 0
    code, _, _ = run(["forecast", "--model", out / "model.json", "--query-csv", out / "test.csv",
                      "--output-dir", out, "--emit-density"], capsys)
    assert code == 0
    notes = (out / "density_notes.txt").read_text()
    assert "degenerate density" in notes
    assert not list(out.glob("density_2*.csv"))


def test_memorizing_model_scores_perfectly(tmp_path, capsys):
    out = tmp_path / "m"
    code, _, _ = run(["train", "--input-csv", example_data_path(), "--output-dir", out, "--ntree", "1",
                      "--no-bootstrap", "--mtry", "6", "--min-node-size", "1"], capsys)
    assert code == 0
    code, _, _ = run(["evaluate", "--model", out / "model.json", "--test-csv", out / "train.csv",
                      "--output-dir", out], capsys)
    assert code == 0
    rep = json.loads((out / "evaluation.json").read_text())
    assert rep["rmse"] == 0.0 and rep["r_squared"] == 1.0 and rep["picp"] == 100.0
    assert rep["confidence_level"] == 90.0


def test_evaluate_requires_targets(trained, tmp_path, capsys):
    q = write_table(tmp_path / "q.csv", [(2020, *range(6))], names=FEATURES, target=False)
    code, _, err = run(["evaluate", "--model", trained / "model.json", "--test-csv", q,
                        "--output-dir", tmp_path], capsys)
    assert code == 3 and "SchemaMismatch" in err


def test_explain_outputs(trained, capsys):
    out = trained / "ex"
    code, _, _ = run(["explain", "--model", trained / "model.json", "--data-csv", trained / "train.csv",
                      "--output-dir", out, "--top-k", "3"], capsys)
    assert code == 0
    header, body = read_csv_rows(out / "importance.csv")
    assert header == ["feature", "rank", "pct_inc_mse"]
    assert sorted(int(r[1]) for r in body) == list(range(1, 7))
    assert sorted(r[0] for r in body) == sorted(FEATURES)
    assert len(list(out.glob("pdp_*.csv"))) == 3
    surfaces = list(out.glob("pdp2d_*.csv"))
    assert len(surfaces) == 1
    assert len(read_csv_rows(surfaces[0])[1]) == 25 * 25


def test_explain_without_bootstrap(tmp_path, capsys):
    out = tmp_path / "nb"
    run(["train", "--input-csv", example_data_path(), "--output-dir", out, "--ntree", "3", "--no-bootstrap"], capsys)
    code, _, err = run(["explain", "--model", out / "model.json", "--data-csv", out / "train.csv",
                        "--output-dir", out], capsys)
    assert code == 3 and "NoOobSamples" in err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\ninput_csv = {example_data_path()}\nntree = 7  # small\nseed = 4\n"
                   f"output_dir = {tmp_path / 'from_cfg'}\n")
    assert read_config_file(cfg)["ntree"] == 7
    assert run(["train", "--config", cfg], capsys)[0] == 0
    doc = json.loads((tmp_path / "from_cfg" / "model.json").read_text())
    assert len(doc["trees"]) == 7
    assert run(["train", "--config", cfg, "--ntree", "2", "--output-dir", tmp_path / "flag"], capsys)[0] == 0
    assert len(json.loads((tmp_path / "flag" / "model.json").read_text())["trees"]) == 2


def test_env_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QRFDENSITY_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["stats", "--input-csv", example_data_path()], capsys)[0] == 0
    assert (tmp_path / "env" / "summary_stats.txt").is_file()


def test_bad_parameter_exit_3(tmp_path, capsys):
    code, _, err = run(["train", "--input-csv", example_data_path(), "--output-dir", tmp_path,
                        "--train-fraction", "1.5"], capsys)
    assert code == 3 and err.startswith("error: ")


def test_every_emitted_csv_reparses(trained, capsys):
    run(["forecast", "--model", trained / "model.json", "--query-csv", trained / "test.csv",
         "--output-dir", trained / "fc2", "--emit-density"], capsys)
    run(["explain", "--model", trained / "model.json", "--data-csv", trained / "train.csv",
         "--output-dir", trained / "ex2"], capsys)
    csvs = list(trained.rglob("*.csv"))
    assert len(csvs) >= 10
    for path in csvs:
        header, body = read_csv_rows(path)
        assert body and all(len(r) == len(header) for r in body)
        for row in body:
            for cell in row:
                if cell and not cell.replace("_", "").isalpha():
                    float(cell)
