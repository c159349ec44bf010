import csv
import json

import numpy as np
import pytest

from rpgd.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from rpgd.neural import ConvNetParams, load_params, save_params


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    assert run("phantom-gen", "--out", d, "--n-train", 12, "--n-test", 3, "--size", 16) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def models(dataset, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    assert run("train-projector", "--dataset", dataset, "--out", d, "--n-views", 12,
               "--t1", 2, "--t2", 1, "--t3", 1) == EXIT_OK
    return d


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestPhantomGen:
    def test_counts(self, dataset):
        assert len(list((dataset / "phantoms" / "train").glob("*.f64"))) == 12
        assert len(list((dataset / "phantoms" / "test").glob("*.f64"))) == 3
        assert (dataset / "manifest.json").exists()

    def test_rerun_identical_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert run("phantom-gen", "--out", tmp_path / name, "--n-train", 2, "--n-test", 1, "--size", 8) == 0
        for f in (tmp_path / "a").rglob("*.f64"):
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_size_below_minimum(self, tmp_path):
        assert run("phantom-gen", "--out", tmp_path / "x", "--size", 4) == EXIT_INVALID
        assert not (tmp_path / "x").exists()

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_train": 3, "n_test": 2, "size": 8}))
        assert run("phantom-gen", "--config", cfg, "--out", tmp_path / "o", "--n-test", 1) == EXIT_OK
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert len(manifest["splits"]["train"]) == 3 and len(manifest["splits"]["test"]) == 1

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_trian": 3}))
        assert run("phantom-gen", "--config", cfg, "--out", tmp_path / "o") == EXIT_INVALID


class TestSimulate:
    def test_writes_sinograms(self, dataset, tmp_path):
        assert run("simulate", "--dataset", dataset, "--out", tmp_path, "--n-views", 12,
                   "--snr-db", "inf", 40) == EXIT_OK
        files = sorted((tmp_path / "sinograms" / "snr_40" / "test").glob("*.sino.f64"))
        assert len(files) == 3
        meta = json.loads((tmp_path / "simulate.json").read_text())
        assert meta["geometry"]["n_offsets"] == 24

    def test_missing_dataset(self, tmp_path):
        assert run("simulate", "--dataset", tmp_path / "nope", "--out", tmp_path / "o") == EXIT_INVALID


class TestTrain:
    def test_outputs(self, models):
        for name in ("stage1.rpgdnet", "projector.rpgdnet", "training_curve.csv", "training_summary.json"):
            assert (models / name).exists()
        rows = read_csv(models / "training_curve.csv")
        assert [r["stage"] for r in rows] == ["1", "1", "2", "3"]
        summary = json.loads((models / "training_summary.json").read_text())
        assert summary["idempotence_defect"]["n_images"] == 3
        _, header = load_params(models / "projector.rpgdnet")
        assert header["schedule"]["t1"] == 2 and header["role"] == "projector"

    def test_seed_repeat_identical_bytes(self, dataset, models, tmp_path):
        assert run("train-projector", "--dataset", dataset, "--out", tmp_path, "--n-views", 12,
                   "--t1", 2, "--t2", 1, "--t3", 1) == EXIT_OK
        for name in ("stage1.rpgdnet", "projector.rpgdnet"):
            assert (tmp_path / name).read_bytes() == (models / name).read_bytes()

    def test_resume_from_stage1(self, dataset, models, tmp_path):
        assert run("train-projector", "--dataset", dataset, "--out", tmp_path, "--n-views", 12,
                   "--t2", 1, "--t3", 1, "--resume-stage1", models / "stage1.rpgdnet") == EXIT_OK
        assert [r["stage"] for r in read_csv(tmp_path / "training_curve.csv")] == ["2", "3"]

    def test_missing_init(self, dataset, tmp_path):
        assert run("train-projector", "--dataset", dataset, "--out", tmp_path,
                   "--resume-stage1", tmp_path / "none.rpgdnet") == EXIT_INVALID


class TestReconstruct:
    def test_fbp_report(self, dataset, tmp_path):
        assert run("reconstruct", "--dataset", dataset, "--out", tmp_path, "--n-views", 12) == EXIT_OK
        rep = json.loads((tmp_path / "FBP" / "snr_inf" / "report.json").read_text())
        assert len(rep["per_image"]) == 3
        assert rep["config"]["method"] == "FBP" and rep["config"]["n_views"] == 12
        assert rep["regressed_snr_db"] == pytest.approx(np.mean([p["regressed_snr_db"] for p in rep["per_image"]]))

    def test_table_layout_and_traces(self, dataset, models, tmp_path):
        assert run("reconstruct", "--dataset", dataset, "--out", tmp_path, "--n-views", 12,
                   "--methods", "FBP", "RPGD", "TV", "--snr-db", "inf", 40,
                   "--model", models / "projector.rpgdnet", "--c", 0.99, "--max-iter", 60,
                   "--skip-first-gradient", "--tv-grid", 20, "--tv-iter", 5) == EXIT_OK
        rows = read_csv(tmp_path / "summary.csv")
        assert [r["snr_db"] for r in rows] == ["inf", "40"]
        assert list(rows[0]) == ["snr_db", "FBP", "RPGD", "TV"]
        trace = read_csv(tmp_path / "RPGD" / "snr_inf" / "traces" / "0000.csv")
        alphas = np.array([float(r["alpha"]) for r in trace])
        assert np.all(np.diff(alphas) <= 0) and np.all(alphas > 0)
        tv = json.loads((tmp_path / "TV" / "snr_40" / "report.json").read_text())
        assert all("best_lambda" in p["extra"] for p in tv["per_image"])
        assert len({p["extra"]["best_lambda"] for p in tv["per_image"]}) >= 1

        ev = tmp_path / "ev"
        assert run("evaluate", "--dataset", dataset, "--recon", tmp_path, "--out", ev) == EXIT_OK
        a = json.loads((ev / "FBP" / "snr_40" / "report.json").read_text())
        b = json.loads((tmp_path / "FBP" / "snr_40" / "report.json").read_text())
        assert a["regressed_snr_db"] == pytest.approx(b["regressed_snr_db"], abs=1e-9)

        out = tmp_path / "tr"
        assert run("trace-export", "--recon", tmp_path, "--out", out, "--snr-db", "inf") == EXIT_OK
        curve = read_csv(next(out.glob("*.csv")))
        assert float(curve[0]["mean_alpha"]) == 1.0

    def test_missing_model(self, dataset, tmp_path):
        assert run("reconstruct", "--dataset", dataset, "--out", tmp_path, "--methods", "RPGD") == EXIT_INVALID
        assert run("reconstruct", "--dataset", dataset, "--out", tmp_path, "--methods", "REGRESSOR",
                   "--regressor", tmp_path / "missing.rpgdnet") == EXIT_INVALID

    def test_unknown_method_rejected(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("reconstruct", "--dataset", dataset, "--out", tmp_path, "--methods", "SART")
        assert e.value.code == EXIT_INVALID

    def test_numerical_failure(self, dataset, tmp_path):
        p = ConvNetParams.zeros()
        bad = p.with_vector(np.full(p.to_vector().size, np.nan))
        save_params(tmp_path / "nan.rpgdnet", bad)
        assert run("reconstruct", "--dataset", dataset, "--out", tmp_path / "o", "--n-views", 12,
                   "--methods", "REGRESSOR", "--regressor", tmp_path / "nan.rpgdnet") == EXIT_NUMERICAL
