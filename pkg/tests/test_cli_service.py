"""End-to-end coverage of the HTTP service and its CLI client.

All service calls run in-process through the FastAPI test client; the CLI
tests drive cli.main() exactly the way the console script would.
"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tractcloud import cli, io
from tractcloud.service import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="module")
def atlas_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("atlas")
    rc = cli.main(["gen", "--out", str(d), "--seed", "7", "--per-class", "60"])
    assert rc == 0
    return d


def small_config(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text("k = 3\nw = 10\nh = 16\nbackbone_dims = 16, 32\n"
                 "head_dims = 16\nepochs = 8\nbatch_size = 64\n"
                 "learning_rate = 0.01\n")
    return p


# --- service ----------------------------------------------------------------

def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_gen_endpoint(client, tmp_path):
    r = client.post("/gen", json={"out_dir": str(tmp_path), "seed": 1,
                                  "streamlines_per_class": 20})
    assert r.status_code == 200
    body = r.json()
    assert body["seed"] == 1
    assert body["streamlines"] == 180
    assert (tmp_path / "atlas.trk").exists()
    assert (tmp_path / "atlas.labels.txt").exists()
    assert (tmp_path / "classes.txt").exists()


def test_gen_missing_spec_file_is_422(client, tmp_path):
    r = client.post("/gen", json={"out_dir": str(tmp_path), "seed": 1,
                                  "spec_path": str(tmp_path / "nope.spec")})
    assert r.status_code == 422
    assert r.json()["error"] == "FileNotFound"


def test_augment_endpoint(client, atlas_dir, tmp_path):
    r = client.post("/augment", json={
        "in_path": str(atlas_dir / "atlas.trk"),
        "labels_path": str(atlas_dir / "atlas.labels.txt"),
        "n": 2, "out_dir": str(tmp_path), "seed": 4,
    })
    assert r.status_code == 200
    assert r.json()["count"] == 2
    assert sorted(p.name for p in tmp_path.glob("aug_*.trk")) \
        == ["aug_000.trk", "aug_001.trk"]
    assert (tmp_path / "classes.txt").exists()


def test_augment_bad_n_is_400(client, atlas_dir, tmp_path):
    r = client.post("/augment", json={
        "in_path": str(atlas_dir / "atlas.trk"),
        "labels_path": str(atlas_dir / "atlas.labels.txt"),
        "n": 0, "out_dir": str(tmp_path),
    })
    assert r.status_code == 400
    assert r.json()["error"] == "UsageError"


def test_knn_endpoint(client, atlas_dir, tmp_path):
    out = tmp_path / "nn.cache"
    r = client.post("/knn", json={"in_path": str(atlas_dir / "atlas.trk"),
                                  "k": 4, "out_path": str(out)})
    assert r.status_code == 200
    body = r.json()
    assert body["k"] == 4
    assert 0 < body["mdf_evaluated_fraction"] <= 1
    from tractcloud.neighbors import read_neighbor_cache
    assert read_neighbor_cache(out).shape == (body["streamlines"], 4)


def test_corrupt_trk_is_422(client, tmp_path):
    bad = tmp_path / "bad.trk"
    bad.write_bytes(b"not a tractogram")
    r = client.post("/knn", json={"in_path": str(bad), "k": 2,
                                  "out_path": str(tmp_path / "x")})
    assert r.status_code == 422


def test_train_predict_evaluate_endpoints(client, atlas_dir, tmp_path):
    cfg = small_config(tmp_path)
    model = tmp_path / "model.tcm"
    r = client.post("/train", json={"data_dir": str(atlas_dir),
                                    "out_path": str(model),
                                    "config_path": str(cfg), "seed": 3})
    assert r.status_code == 200
    body = r.json()
    assert body["brains"] == 1
    assert "epoch,split,loss,accuracy" in body["metrics_csv"]
    assert model.exists()

    pred = tmp_path / "pred.labels.txt"
    r = client.post("/predict", json={"model_path": str(model),
                                      "in_path": str(atlas_dir / "atlas.trk"),
                                      "out_path": str(pred), "seed": 5,
                                      "reg_free": True})
    assert r.status_code == 200
    assert 0 < r.json()["mean_confidence"] <= 1
    assert pred.exists() and (tmp_path / "pred.labels.txt.conf.txt").exists()

    r = client.post("/evaluate", json={
        "pred_path": str(pred),
        "truth_path": str(atlas_dir / "atlas.labels.txt"),
        "in_path": str(atlas_dir / "atlas.trk"),
        "atlas_dir": str(atlas_dir), "threshold": 20,
    })
    assert r.status_code == 200
    body = r.json()
    assert body["accuracy"] > 0.8    # self-test on training data
    assert body["tir"] == 1.0
    assert "SUMMARY" in body["report_csv"]


def test_predict_config_mismatch_is_422(client, atlas_dir, tmp_path):
    cfg = small_config(tmp_path)
    model = tmp_path / "model.tcm"
    r = client.post("/train", json={"data_dir": str(atlas_dir),
                                    "out_path": str(model),
                                    "config_path": str(cfg), "seed": 3})
    assert r.status_code == 200
    other = tmp_path / "other.cfg"
    other.write_text("k = 9\n")
    r = client.post("/predict", json={"model_path": str(model),
                                      "in_path": str(atlas_dir / "atlas.trk"),
                                      "out_path": str(tmp_path / "p.txt"),
                                      "config_path": str(other), "seed": 1})
    assert r.status_code == 422
    assert r.json()["error"] == "ModelConfigMismatch"


def test_evaluate_without_reference_is_400(client, atlas_dir):
    r = client.post("/evaluate", json={"pred_path": str(atlas_dir / "atlas.labels.txt")})
    assert r.status_code == 400


# --- CLI ---------------------------------------------------------------------

def test_cli_usage_error_exit_1(capsys):
    assert cli.main(["gen"]) == 1          # missing --out
    assert cli.main(["frobnicate"]) == 1   # unknown subcommand
    err = capsys.readouterr().err
    assert "error" in err


def test_cli_data_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.trk"
    bad.write_bytes(b"junk" * 300)
    rc = cli.main(["knn", "--in", str(bad), "--k", "2",
                   "--out", str(tmp_path / "c")])
    assert rc == 2
    assert "BadMagic" in capsys.readouterr().err


def test_cli_missing_file_exit_2(tmp_path, capsys):
    rc = cli.main(["predict", "--model", str(tmp_path / "no.tcm"),
                   "--in", str(tmp_path / "no.trk"),
                   "--out", str(tmp_path / "o.txt")])
    assert rc == 2


def test_cli_gen_reports_seed(tmp_path, capsys):
    rc = cli.main(["gen", "--out", str(tmp_path), "--seed", "11",
                   "--per-class", "10"])
    assert rc == 0
    assert "seed: 11" in capsys.readouterr().err


def test_cli_gen_random_seed_is_reported(tmp_path, capsys):
    rc = cli.main(["gen", "--out", str(tmp_path), "--per-class", "10"])
    assert rc == 0
    err = capsys.readouterr().err
    assert "seed:" in err


def test_cli_augment_count(atlas_dir, tmp_path):
    rc = cli.main(["augment", "--in", str(atlas_dir / "atlas.trk"),
                   "--labels", str(atlas_dir / "atlas.labels.txt"),
                   "--n", "3", "--out", str(tmp_path), "--seed", "2"])
    assert rc == 0
    trks = sorted(tmp_path.glob("aug_*.trk"))
    labs = sorted(tmp_path.glob("aug_*.labels.txt"))
    assert len(trks) == 3 and len(labs) == 3


def test_cli_train_writes_metrics_to_stdout(atlas_dir, tmp_path, capsys):
    cfg = small_config(tmp_path)
    rc = cli.main(["train", "--data", str(atlas_dir), "--config", str(cfg),
                   "--out", str(tmp_path / "m.tcm"), "--seed", "3"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("epoch,split,loss,accuracy")


def test_cli_evaluate_report_on_stdout(atlas_dir, tmp_path, capsys):
    cfg = small_config(tmp_path)
    model = tmp_path / "m.tcm"
    assert cli.main(["train", "--data", str(atlas_dir), "--config", str(cfg),
                     "--out", str(model), "--seed", "3"]) == 0
    pred = tmp_path / "pred.txt"
    assert cli.main(["predict", "--model", str(model),
                     "--in", str(atlas_dir / "atlas.trk"),
                     "--out", str(pred), "--seed", "5", "--reg-free"]) == 0
    capsys.readouterr()
    rc = cli.main(["evaluate", "--pred", str(pred),
                   "--truth", str(atlas_dir / "atlas.labels.txt"),
                   "--out", str(tmp_path / "report.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "accuracy" in out
    assert (tmp_path / "report.csv").read_text() in out


def test_cli_predict_deterministic(atlas_dir, tmp_path):
    cfg = small_config(tmp_path)
    model = tmp_path / "m.tcm"
    assert cli.main(["train", "--data", str(atlas_dir), "--config", str(cfg),
                     "--out", str(model), "--seed", "3"]) == 0
    p1, p2 = tmp_path / "p1.txt", tmp_path / "p2.txt"
    for p in (p1, p2):
        assert cli.main(["predict", "--model", str(model),
                         "--in", str(atlas_dir / "atlas.trk"),
                         "--out", str(p), "--seed", "5", "--reg-free"]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "p1.txt.conf.txt").read_bytes() \
        == (tmp_path / "p2.txt.conf.txt").read_bytes()
