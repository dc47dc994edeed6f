import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from bikecast.cli import main, sha256
from bikecast.config import RunConfig, load_config
from bikecast.errors import ConfigInvalid
from bikecast.ingest import SnapshotGrid

FAST = ["--stations", "39,40,41", "--n-trees", "5", "--tree-curves", "2,5", "--cv-folds", "3"]


def cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(system_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    base = ["--data-dir", system_dir, "--out", out, *FAST]
    for cmd in ("ingest", "graph", "features", "train"):
        assert cli(cmd, *base) == 0, cmd
    assert cli("evaluate", *base) == 0
    assert cli("evaluate", *base, "--kind", "lsboost") == 0
    assert cli("sweep", *base, "--axis", "horizon") == 0
    assert cli("report", "--out", out) == 0
    return out, base


def test_ingest_outputs(pipeline, system_dir):
    out, _ = pipeline
    grid = SnapshotGrid.read_csv(out / "ingest" / "grid.csv")
    manifest = json.loads((out / "ingest" / "manifest.json").read_text())
    assert manifest["rows"]["stations_after"] == grid.n_stations
    assert manifest["rows"]["ticks_after"] == grid.n_ticks
    assert manifest["rows"]["status_records"] > 0
    inputs = {Path(i["path"]).name: i["sha256"] for i in manifest["inputs"]}
    for name in ("status.csv", "station.csv", "weather.csv"):
        assert inputs[name] == sha256(system_dir / name)
    assert not grid.missing.any()


def test_every_output_is_in_a_manifest(pipeline):
    out, _ = pipeline
    listed = {}
    for m in out.rglob("*manifest.json"):
        for o in json.loads(m.read_text())["outputs"]:
            listed[str(Path(o["path"]).resolve())] = o["sha256"]
    for f in out.rglob("*"):
        if f.is_file() and not f.name.endswith("manifest.json"):
            assert str(f.resolve()) in listed, f
            assert listed[str(f.resolve())] == sha256(f)


def test_horizon_sweep_table(pipeline):
    out, _ = pipeline
    lines = (out / "sweep" / "fig2_rf_horizon_trees.csv").read_text().splitlines()
    assert lines[0] == "horizon,mae,mae_trees_2,mae_trees_5"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [15, 30, 45, 60, 75, 90, 105, 120]


def test_report(pipeline):
    out, _ = pipeline
    doc = json.loads((out / "report" / "summary.json").read_text())
    assert sorted(r["learner"] for r in doc["learners"]) == ["forest", "lsboost"]
    assert len(doc["top_maxae"]["forest_h15_m0_random"]) == 3
    assert doc["sweep_minima"][0]["axis"] == "horizon"
    md = (out / "report" / "summary.md").read_text()
    assert "forest_h15_m0_random" in md and "lsboost_h15_m0_random" in md


def test_train_writes_models(pipeline):
    out, _ = pipeline
    names = sorted(p.name for p in (out / "train" / "forest").iterdir())
    assert names == ["importance.csv", "station_39.json", "station_40.json", "station_41.json"]


def test_rerun_is_byte_identical(pipeline):
    out, base = pipeline

    def snapshot():
        return {p: p.read_bytes() for p in out.rglob("*") if p.is_file() and not p.name.endswith("manifest.json")}

    before = snapshot()
    for cmd in ("ingest", "graph", "features", "train", "evaluate"):
        assert cli(cmd, *base) == 0
    assert cli("sweep", *base, "--axis", "horizon") == 0
    assert cli("report", "--out", out) == 0
    after = snapshot()
    assert before.keys() == after.keys()
    assert [p for p in before if before[p] != after[p]] == []


def test_train_before_features(tmp_path, system_dir, capsys):
    base = ["--data-dir", system_dir, "--out", tmp_path]
    assert cli("ingest", *base) == 0
    assert cli("train", *base) == 1
    assert "MissingUpstreamArtifact" in capsys.readouterr().err


def test_report_without_results(tmp_path, capsys):
    assert cli("report", "--out", tmp_path) == 1
    assert "NoResults" in capsys.readouterr().err


def test_features_stale_horizon(pipeline, capsys):
    _, base = pipeline
    assert cli("evaluate", *base, "--horizon", "30") == 1
    assert "MissingUpstreamArtifact" in capsys.readouterr().err


def test_user_errors_exit_1(tmp_path, system_dir, capsys):
    assert cli("ingest", "--out", tmp_path, "--data-dir", tmp_path / "nowhere") == 1
    assert cli("ingest", "--data-dir", system_dir, "--out", tmp_path, "--horizon", "10") == 1
    assert cli("ingest", "--data-dir", system_dir, "--out", tmp_path, "--memory", "x") == 1
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--no-such-flag"])
    assert exc.value.code == 1
    capsys.readouterr()


def test_data_error_exits_2(tmp_path, system_dir, capsys):
    for name in ("station.csv", "weather.csv"):
        (tmp_path / name).write_bytes((system_dir / name).read_bytes())
    (tmp_path / "status.csv").write_text("station_id,bikes_available,docks_available,time\n2,abc,3,2014/01/01 00:00:01\n")
    assert cli("ingest", "--data-dir", tmp_path, "--out", tmp_path / "out") == 2
    err = capsys.readouterr().err
    assert "MalformedRow" in err and "row 0" in err


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"horizon": 30, "kind": "lsboost", "stations": [39, 40], "use_weather": "no"}))
    cfg = load_config(path, {"horizon": "45"})
    assert (cfg.horizon, cfg.kind, cfg.stations, cfg.use_weather) == (45, "lsboost", [39, 40], False)
    assert cfg.params.kind == "lsboost"


@pytest.mark.parametrize(
    "doc",
    [{"horizon": 20}, {"no_such_key": 1}, {"nested": {"a": 1}}, {"kind": "svm"}, {"memory": 8}, {"n_trees": 1.5}, {"cv_mode": "loo"}],
)
def test_config_invalid(tmp_path, doc):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(ConfigInvalid):
        load_config(path)


def test_config_env_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("BIKECAST_DATA_DIR", str(tmp_path))
    assert RunConfig().data_path("trip") == tmp_path / "trip.csv"
    assert RunConfig(trip_path="x.csv").data_path("trip") == Path("x.csv")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bikecast", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("ingest", "graph", "features", "train", "evaluate", "sweep", "report"):
        assert cmd in proc.stdout
