import json

import numpy as np
import pandas as pd
import pytest

from core.cli import build_parser, main
from utils.config_manager import ConfigurationManager
from utils.path_manager import PathManager

TINY_KSTPP = {
    "grids": {"influence_sizes": [3, 3, 3], "background_sizes": [3, 3]},
    "quad_orders": [4, 4, 4],
    "optimizer": {"epochs": 1, "lr": 0.01, "seed": 0},
}


def _stdout_records(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.splitlines() if line.strip()]


def _error(capsys):
    err = capsys.readouterr().err
    lines = [json.loads(line) for line in err.splitlines() if line.startswith('{"error"')]
    assert len(lines) == 1
    return lines[0]


@pytest.fixture
def synth_config(tmp_path):
    path = tmp_path / "synth.json"
    path.write_text(
        json.dumps(
            {
                "lambda0": 0.5,
                "beta": 2.0,
                "sigma": 0.3,
                "c_rule": {"kind": "temporal_switch", "threshold": 1.0, "c_before": 1.0, "c_after": -2.0},
                "domain": {"t_max": 4.0, "x_range": [-1.0, 1.0], "y_range": [-1.0, 1.0]},
            }
        ),
        encoding="utf-8",
    )
    return path


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_KSTPP), encoding="utf-8")
    return path


class TestErrors:
    def test_missing_training_path_named(self, tmp_path, capsys):
        missing = tmp_path / "nowhere" / "train.jsonl"
        assert main(["fit", "--kind", "poisson", "--train", str(missing), "--output", str(tmp_path / "out")]) == 1
        error = _error(capsys)
        assert error["error"] == "dataset_format"
        assert str(missing) in error["message"]

    def test_no_training_path(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("KSTPP_TRAIN_PATH", raising=False)
        assert main(["fit", "--kind", "poisson", "--output", str(tmp_path)]) == 1
        assert "paths.train" in _error(capsys)["message"]

    def test_bad_config_field(self, tmp_path, capsys):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"optimizer": {"lr": "fast"}}), encoding="utf-8")
        assert main(["fit", "--config", str(config), "--train", str(tmp_path)]) == 1
        error = _error(capsys)
        assert error["error"] == "config_error"
        assert "optimizer.lr" in error["message"]

    def test_unknown_preset(self, tmp_path, capsys):
        assert main(["simulate", "--preset", "syn9", "--output", str(tmp_path)]) == 1
        assert _error(capsys)["error"] == "config_error"

    def test_usage_error_exit_code(self, capsys):
        assert main(["fit", "--repeats"]) == 2

    def test_kernel_needs_kstpp(self, tmp_path, capsys):
        from core.baselines import PoissonModel
        from core.checkpoint import save_checkpoint
        from core.events import Domain

        path = save_checkpoint(
            PoissonModel(1.0, Domain(t_max=1.0, x_range=(0.0, 1.0), y_range=(0.0, 1.0))), tmp_path / "c.json"
        )
        assert main(["kernel", "--checkpoint", str(path)]) == 1
        assert _error(capsys)["error"] == "checkpoint_error"


class TestRunDefaults:
    def test_parser_reads_app_config(self, monkeypatch):
        configured = {"improper_order": 7, "probe_interior": 5, "probe_grid": 9}
        monkeypatch.setattr(ConfigurationManager, "load_run_defaults", staticmethod(lambda: configured))
        parser = build_parser()
        predict = parser.parse_args(["predict", "--checkpoint", "c.json", "--data", "d"])
        assert predict.order == 7
        evaluate = parser.parse_args(["eval", "--checkpoint", "c.json"])
        assert (evaluate.order, evaluate.interior, evaluate.grid_size) == (7, 5, 9)
        grids = parser.parse_args(["intensity", "--checkpoint", "c.json", "--data", "d"])
        assert (grids.interior, grids.grid_size) == (5, 9)

    def test_missing_keys_fall_back(self, monkeypatch):
        monkeypatch.setattr(ConfigurationManager, "load_run_defaults", staticmethod(lambda: {}))
        args = build_parser().parse_args(["eval", "--checkpoint", "c.json"])
        assert (args.order, args.interior, args.grid_size) == (32, 3, 16)


class TestSimulate:
    def test_deterministic(self, tmp_path, capsys, synth_config):
        for name in ("a", "b"):
            argv = ["simulate", "--config", str(synth_config), "--train", "3", "--test", "2", "--seed", "4"]
            assert main(argv + ["--output", str(tmp_path / name)]) == 0
        records = _stdout_records(capsys)
        assert records[0]["splits"] == records[1]["splits"]
        assert records[0]["splits"]["train"]["sequences"] == 3
        for split in ("train", "test"):
            a = (tmp_path / "a" / f"{split}.jsonl").read_text(encoding="utf-8")
            assert a == (tmp_path / "b" / f"{split}.jsonl").read_text(encoding="utf-8")

    def test_preset(self, tmp_path, capsys):
        assert main(["simulate", "--preset", "syn2", "--test", "1", "--output", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "test.manifest.json").read_text(encoding="utf-8"))
        assert manifest["generator"]["c_rule"]["kind"] == "distance_switch"


@pytest.mark.integration
class TestPipelines:
    def test_simulate_fit_predict_eval(self, tmp_path, capsys, synth_config, run_config):
        data = tmp_path / "data"
        assert main(["simulate", "--config", str(synth_config), "--train", "3", "--val", "1", "--test", "2",
                     "--seed", "1", "--output", str(data)]) == 0
        assert main(["fit", "--config", str(run_config), "--train", str(data), "--val", str(data),
                     "--output", str(tmp_path / "kstpp")]) == 0
        capsys.readouterr()

        checkpoint = tmp_path / "kstpp" / "checkpoint.json"
        document = json.loads(checkpoint.read_text(encoding="utf-8"))
        assert document["model_kind"] == "kstpp"
        assert document["metadata"]["seed"] == 0
        log = pd.read_json(tmp_path / "kstpp" / "train_log.jsonl", lines=True)
        assert len(log) == 3

        predictions = tmp_path / "pred.jsonl"
        assert main(["predict", "--checkpoint", str(checkpoint), "--data", str(data), "--order", "8",
                     "--output", str(predictions)]) == 0
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data), "--interior", "1",
                     "--grid-size", "4", "--xlsx", str(tmp_path / "table.xlsx")]) == 0
        rows = _stdout_records(capsys)
        assert rows[0]["model_kind"] == "kstpp"
        assert np.isfinite(rows[0]["temporal_error"]) and np.isfinite(rows[0]["spatiotemporal_error"])
        assert pd.read_excel(tmp_path / "table.xlsx", engine="openpyxl").shape[0] == 1

        assert main(["intensity", "--checkpoint", str(checkpoint), "--data", str(data), "--grid-size", "3",
                     "--times", "0.5", "2.0"]) == 0
        intensity = _stdout_records(capsys)[0]
        assert np.asarray(intensity["intensity"]).shape == (2, 3, 3)

        assert main(["kernel", "--checkpoint", str(checkpoint), "--lags", "0.2", "1.0", "--size", "6",
                     "--threshold", "0.5"]) == 0
        slices = _stdout_records(capsys)
        assert [s["lag"] for s in slices] == [0.2, 1.0]
        assert "near_mean" in slices[0]

        assert main(["ablate-quad", "--checkpoint", str(checkpoint), "--data", str(data),
                     "--orders", "4,4,4", "6,6,6"]) == 0
        assert len(_stdout_records(capsys)) == 2

    def test_import_fit_predict_eval_on_toy_extract(self, tmp_path, capsys, run_config):
        extract = PathManager.get_resource_path("resources/datasets/toy_extract.json")
        data = tmp_path / "data"
        assert main(["import", "--train", str(extract), "--test", str(extract), "--output", str(data)]) == 0
        imported = _stdout_records(capsys)[0]
        assert imported["splits"] == {"train": 20, "test": 20}

        metrics = []
        for attempt in range(2):
            run_dir = tmp_path / f"run{attempt}"
            assert main(["fit", "--config", str(run_config), "--train", str(data), "--output", str(run_dir)]) == 0
            assert main(["fit", "--kind", "poisson", "--train", str(data), "--output", str(run_dir / "poisson")]) == 0
            predictions = []
            for name, checkpoint in (("kstpp", run_dir / "checkpoint.json"), ("poisson", run_dir / "poisson" / "checkpoint.json")):
                out = run_dir / f"{name}.jsonl"
                assert main(["predict", "--checkpoint", str(checkpoint), "--data", str(data), "--limit", "3",
                             "--order", "8", "--output", str(out)]) == 0
                predictions.append(str(out))
            capsys.readouterr()
            assert main(["eval", "--predictions", *predictions]) == 0
            rows = _stdout_records(capsys)
            assert "aggregate" in rows[-1]
            metrics.append([(r["time_rmse"], r["euclid_mean"]) for r in rows[:-1]])

        for rmse, euclid in metrics[0]:
            assert np.isfinite(rmse) and np.isfinite(euclid)
        assert metrics[0] == metrics[1]

    def test_repeats(self, tmp_path, capsys, synth_config):
        data = tmp_path / "data"
        assert main(["simulate", "--config", str(synth_config), "--train", "2", "--output", str(data)]) == 0
        assert main(["fit", "--kind", "poisson", "--train", str(data), "--output", str(tmp_path / "runs"),
                     "--seed", "5", "--repeats", "2"]) == 0
        runs = _stdout_records(capsys)[1:]
        assert [r["seed"] for r in runs] == [5, 6]
        assert (tmp_path / "runs" / "run_1" / "checkpoint.json").exists()
