import json

import numpy as np
import pytest

from fraudlens.cli import main
from fraudlens.config import ConfigError, parse_config, resolve_config
from fraudlens.netpbm import read_ppm


class TestConfig:
    def test_empty_config_gives_exante_preset(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        cfg = parse_config(path)
        tr = cfg.section("training")
        assert tr["lr"] == 0.0005
        assert tr["epochs"] == 8
        assert tr["batch_size"] == 64
        assert tr["threshold"] == 0.75
        assert cfg.section("pipeline")["mode"] == "ExAnte"

    def test_unknown_key_named_in_error(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"training": {"learnig_rate": 0.01}}))
        with pytest.raises(ConfigError, match="learnig_rate"):
            parse_config(path)

    def test_explicit_value_overrides_preset(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"training": {"lr": 0.01}}))
        cfg = parse_config(path)
        assert cfg.section("training")["lr"] == 0.01
        assert cfg.section("training")["epochs"] == 8

    def test_presets(self):
        expost = resolve_config({}, preset="expost-paper")
        assert expost.section("training")["lr"] == 0.001
        assert expost.section("training")["epochs"] == 6
        assert expost.section("training")["batch_size"] == 32
        assert expost.section("training")["threshold"] == 0.45
        assert expost.section("pipeline")["mode"] == "ExPost"
        initial = resolve_config({}, preset="initial-paper")
        assert initial.section("training")["lr"] == 0.01
        assert initial.section("training")["epochs"] == 5
        assert initial.section("training")["batch_size"] == 64

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="training.epochs"):
            resolve_config({"training": {"epochs": "eight"}})
        with pytest.raises(ConfigError, match="pipeline.gray_filter"):
            resolve_config({"pipeline": {"gray_filter": 1}})

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(path)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            resolve_config({}, preset="paper")

    def test_bad_ratio_sum(self):
        with pytest.raises(ConfigError, match="ratios"):
            resolve_config({"training": {"ratios": [0.5, 0.2, 0.2]}})

    def test_external_entries_validated(self):
        cfg = resolve_config(
            {"compare": {"external": [{"name": "gbm", "path": "p.csv"}]}}
        )
        assert cfg.section("compare")["external"][0]["threshold"] == 0.5
        with pytest.raises(ConfigError, match="external"):
            resolve_config({"compare": {"external": [{"name": "x"}]}})

    def test_hash_stable(self):
        a = resolve_config({})
        b = resolve_config({})
        assert a.hash() == b.hash()
        c = resolve_config({"training": {"seed": 1}})
        assert a.hash() != c.hash()

    def test_train_only_scaling_needs_post_split_smote(self):
        with pytest.raises(ConfigError, match="zscore_scope"):
            resolve_config({"pipeline": {"zscore_scope": "train_only"}})
        cfg = resolve_config(
            {"pipeline": {"zscore_scope": "train_only", "smote_stage": "post_split"}}
        )
        assert cfg.section("pipeline")["zscore_scope"] == "train_only"


SMALL_CFG = {
    "paths": {"output": None},  # patched per test
    "pipeline": {"target_year": 2017, "min_years": 4, "seed": 3},
    "training": {"seed": 3, "epochs": 2, "batch_size": 16, "lr": 0.002},
    "network": {"channels": [4, 8], "dense_hidden": 8},
    "anomaly": {"n_trees": 20, "seed": 3},
    "baseline": {"C": 50.0, "iters": 100, "seed": 3},
    "explain": {"scale": 2, "layer_grids": [1, 4]},
    "synth": {
        "n_companies": 60, "n_years": 8, "f_fin": 12, "f_esg": 4, "f_ic": 4,
        "fraud_rate": 0.15, "gray_rate": 0.05, "missing_rate": 0.02,
        "cluster_strength": 3.0, "seed": 3,
    },
}


def write_cfg(tmp_path,** overrides):
    cfg = json.loads(json.dumps(SMALL_CFG))
    cfg["paths"]["output"] = str(tmp_path / "out")
    for key, section in overrides.items():
        cfg.setdefault(key, {}).update(section)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run_cli(*args):
    return main(list(args))


class TestCliPipeline:
    def test_train_without_prepare_fails_cleanly(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        code = run_cli("train", "--config", str(cfg))
        assert code == 1
        assert "run prepare first" in capsys.readouterr().err

    def test_full_pipeline(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        for command in ("synth", "prepare", "train", "tune", "eval"):
            assert run_cli(command, "--config", str(cfg)) == 0, command
        assert (out / "panel.csv").exists()
        assert (out / "images" / "meta.json").exists()
        assert (out / "gray_removed.csv").exists()
        assert (out / "checkpoint.flck").exists()
        assert (out / "train_report.csv").exists()
        assert (out / "threshold_curve.csv").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["auc"] <= 1.0
        assert (out / "probability_histogram.csv").exists()

        # explain a company that exists in the prepared image set
        meta = json.loads((out / "images" / "meta.json").read_text())
        company = meta["companies"][0]
        assert run_cli("explain", "--config", str(cfg), "--company", company) == 0
        overlay = read_ppm(out / f"overlay_{company}.ppm")
        sidecar = json.loads((out / f"overlay_{company}.json").read_text())
        n_bounds = len(sidecar["separators"])
        scale = 2
        assert overlay.shape == (meta["t"] * scale, (meta["f"] + n_bounds) * scale, 3)
        assert (out / f"layer1_{company}.pgm").exists()
        assert (out / f"layer4_{company}.pgm").exists()

        # baseline + compare close out the comparison table
        assert run_cli("baseline", "--config", str(cfg)) == 0
        assert run_cli("compare", "--config", str(cfg)) == 0
        table = (out / "comparison.csv").read_text().splitlines()
        assert table[0].startswith("model,")
        names = [line.split(",")[0] for line in table[1:]]
        assert names == ["cnn-exante", "l1-logreg"]

        # manifests written for every command
        for command in ("synth", "prepare", "train", "tune", "eval", "explain", "baseline", "compare"):
            manifest = json.loads((out / f"manifest_{command}.json").read_text())
            assert manifest["command"] == command
            assert "config_hash" in manifest

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"

        def run_all():
            for command in ("synth", "prepare", "train", "tune", "eval"):
                assert run_cli(command, "--config", str(cfg)) == 0
            meta = json.loads((out / "images" / "meta.json").read_text())
            company = meta["companies"][0]
            assert run_cli("explain", "--config", str(cfg), "--company", company) == 0
            return {
                name: (out / name).read_bytes()
                for name in (
                    "checkpoint.flck",
                    "metrics.json",
                    "train_report.csv",
                    "threshold_curve.csv",
                    f"overlay_{company}.ppm",
                    f"overlay_{company}.json",
                )
            }

        first = run_all()
        second = run_all()
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], name

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert run_cli("synth", "--config", str(cfg), "--seed", "99") == 0
        echoed = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
        assert echoed["synth"]["seed"] == 99
        assert echoed["training"]["seed"] == 99

    def test_explain_unknown_company(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        for command in ("synth", "prepare", "train"):
            assert run_cli(command, "--config", str(cfg)) == 0
        code = run_cli("explain", "--config", str(cfg), "--company", "NOPE")
        assert code == 1
        assert "NOPE" in capsys.readouterr().err

    def test_train_only_scaling_pipeline(self, tmp_path):
        cfg = write_cfg(
            tmp_path,
            pipeline={"zscore_scope": "train_only", "smote_stage": "post_split"},
        )
        out = tmp_path / "out"
        for command in ("synth", "prepare", "train", "tune", "eval"):
            assert run_cli(command, "--config", str(cfg)) == 0, command
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["auc"] <= 1.0

    def test_external_comparison(self, tmp_path):
        ext = tmp_path / "ext.csv"
        cfg = write_cfg(
            tmp_path,
            compare={"external": [{"name": "boosted-trees", "path": str(ext), "threshold": 0.2}]},
        )
        out = tmp_path / "out"
        for command in ("synth", "prepare", "train", "tune", "eval"):
            assert run_cli(command, "--config", str(cfg)) == 0
        # fabricate external predictions over the whole prepared set
        meta = json.loads((out / "images" / "meta.json").read_text())
        rng = np.random.default_rng(0)
        lines = ["company_id,year,prob"]
        for company in meta["companies"]:
            lines.append(f"{company},{meta['target_year']},{rng.random():.4f}")
        ext.write_text("\n".join(lines) + "\n")
        assert run_cli("compare", "--config", str(cfg)) == 0
        table = (out / "comparison.csv").read_text().splitlines()
        names = [line.split(",")[0] for line in table[1:]]
        assert "boosted-trees" in names
