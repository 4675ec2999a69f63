"""Command implementations behind the CLI: each one reads artifacts from the
output directory, writes new ones, and records a manifest."""

from __future__ import annotations

import csv
import json
import logging
import re
from pathlib import Path

import numpy as np

from . import anomaly, baseline, explain, features, netpbm, synth, training
from .config import RunConfig
from .data import (
    DataError,
    derive_labels,
    load_panel_csv,
    load_violations_csv,
    write_panel_csv,
    write_schema_csv,
)
from .features import (
    ImageSet,
    drop_sparse_features,
    impute_missing,
    load_imageset,
    save_imageset,
    smote_balance,
    to_images,
    zscore_fit_apply,
)
from .nn.checkpoint import load_model, save_model
from .nn.model import Model, ModelConfig
from .training import SplitSpec, stratified_split

logger = logging.getLogger(__name__)


class UserError(RuntimeError):
    """Bad input or unsatisfied command dependency (CLI exit code 1)."""


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UserError(f"{path} not found; {hint}")
    return path


def write_manifest(cfg: RunConfig, command: str, inputs, outputs) -> Path:
    out = cfg.output_dir / f"manifest_{command}.json"
    payload = {
        "command": command,
        "config_hash": cfg.hash(),
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    return out


def cmd_synth(cfg: RunConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    scfg = synth.SynthConfig(**cfg.section("synth"))
    paths = synth.write_synthetic(scfg, out)
    logger.info("synthetic panel written to %s", out)
    write_manifest(cfg, "synth", [], list(paths.values()))
    return 0


def _input_paths(cfg: RunConfig):
    out = cfg.output_dir
    paths = cfg.section("paths")
    data = Path(paths["data"]) if paths["data"] else out / "panel.csv"
    schema = Path(paths["schema"]) if paths["schema"] else out / "schema.csv"
    violations = Path(paths["violations"]) if paths["violations"] else out / "violations.csv"
    return data, schema, violations


def cmd_prepare(cfg: RunConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    pipe = cfg.section("pipeline")
    data_path, schema_path, violations_path = _input_paths(cfg)
    _require(data_path, "run synth first or point paths.data at a panel CSV")
    _require(schema_path, "run synth first or point paths.schema at a schema CSV")

    ds = load_panel_csv(data_path, schema_path)
    inputs = [data_path, schema_path]
    if violations_path.exists():
        labels, skipped = derive_labels(load_violations_csv(violations_path))
        if skipped:
            logger.info("ignored %d violation records with unknown codes", len(skipped))
        ds = ds.with_labels(labels)
        inputs.append(violations_path)
    else:
        logger.warning("no violations file; all rows treated as non-fraud")

    ds = drop_sparse_features(ds, pipe["sparse_threshold"])
    ds = impute_missing(ds, pipe["impute_k"])

    outputs = []
    if not pipe["gray_before_standardize"]:
        ds, _scaler = zscore_fit_apply(ds)
    if pipe["gray_filter"]:
        ac = cfg.section("anomaly")
        nonfraud = ds.values[~ds.fraud_mask()]
        forest = anomaly.fit_iforest(
            nonfraud, n_trees=ac["n_trees"], psi=min(ac["psi"], nonfraud.shape[0]), seed=ac["seed"]
        )
        ds, removed = anomaly.filter_gray(ds, forest, pipe["gray_quantile"])
        removed_path = out / "gray_removed.csv"
        anomaly.write_removed_csv(removed, removed_path)
        outputs.append(removed_path)
        logger.info("gray filter removed %d rows", len(removed))

    target_year = pipe["target_year"] if pipe["target_year"] is not None else max(ds.years)
    if pipe["gray_before_standardize"]:
        fit_rows = None
        if pipe["zscore_scope"] == "train_only":
            fit_rows = _train_company_rows(ds, cfg, target_year)
        ds, _scaler = zscore_fit_apply(ds, fit_rows=fit_rows)

    images = to_images(ds, pipe["mode"], target_year, pipe["min_years"])
    logger.info(
        "imaged %d companies (%d x %d, mode %s, target %d)",
        images.n_images,
        images.t,
        images.f,
        images.mode,
        target_year,
    )
    if pipe["smote"] and pipe["smote_stage"] == "pre_split":
        images = smote_balance(images, k=pipe["smote_k"], seed=pipe["seed"])
        logger.info("SMOTE balanced to %d images", images.n_images)

    images_dir = out / "images"
    save_imageset(images, images_dir)
    panel_path = out / "prepared_panel.csv"
    schema_out = out / "prepared_schema.csv"
    write_panel_csv(ds, panel_path)
    write_schema_csv(ds.schema, schema_out)
    outputs += [images_dir / "meta.json", panel_path, schema_out]
    write_manifest(cfg, "prepare", inputs, outputs)
    return 0


def _train_company_rows(ds, cfg: RunConfig, target_year: int) -> list:
    """Row indices belonging to training-split companies.

    Split membership depends only on the qualifying companies' label vector
    and the training seed, so the scaler fitted here matches the split the
    train command will make. Requires smote_stage=post_split (enforced at
    config parse).
    """
    pipe = cfg.section("pipeline")
    tr = cfg.section("training")
    qualified = features.qualifying_companies(ds, pipe["mode"], target_year, pipe["min_years"])
    skeleton = ImageSet(
        [c for c, _ in qualified],
        np.zeros((len(qualified), 1, 1)),
        np.array([label for _, label in qualified]),
        pipe["mode"],
        target_year,
        ds.schema,
    )
    spec = SplitSpec(ratios=tuple(tr["ratios"]), stratified=True, seed=tr["seed"])
    train, _, _ = stratified_split(skeleton, spec)
    train_companies = set(train.companies)
    return [i for i, (company, _) in enumerate(ds.keys) if company in train_companies]


def load_prepared_images(cfg: RunConfig) -> ImageSet:
    images_dir = cfg.output_dir / "images"
    _require(images_dir / "meta.json", "run prepare first")
    return load_imageset(images_dir)


def prepare_splits(images: ImageSet, cfg: RunConfig):
    """Stratified split plus the configured SMOTE stage, shared by the
    network and baseline trainers so both see identical membership."""
    tr = cfg.section("training")
    pipe = cfg.section("pipeline")
    spec = SplitSpec(ratios=tuple(tr["ratios"]), stratified=True, seed=tr["seed"])
    train, valid, test = stratified_split(images, spec)
    if pipe["smote"] and pipe["smote_stage"] == "post_split":
        train = smote_balance(train, k=pipe["smote_k"], seed=pipe["seed"])
    return train, valid, test


def _split_indices(images: ImageSet, cfg: RunConfig) -> dict:
    tr = cfg.section("training")
    spec = SplitSpec(ratios=tuple(tr["ratios"]), stratified=True, seed=tr["seed"])
    train, valid, test = stratified_split(images, spec)
    by_company = {c: i for i, c in enumerate(images.companies)}
    return {
        "train": [by_company[c] for c in train.companies],
        "valid": [by_company[c] for c in valid.companies],
        "test": [by_company[c] for c in test.companies],
    }


def _model_for(images: ImageSet, cfg: RunConfig) -> Model:
    net = cfg.section("network")
    tr = cfg.section("training")
    mc = ModelConfig(
        input_h=images.t,
        input_w=images.f,
        channels=tuple(net["channels"]),
        dense_hidden=net["dense_hidden"],
        conv_dropout=net["conv_dropout"],
        dense_dropout=net["dense_dropout"],
        lr=tr["lr"],
        batch_size=tr["batch_size"],
        epochs=tr["epochs"],
        seed=tr["seed"],
        dtype=net["dtype"],
    )
    return Model(mc)


def cmd_train(cfg: RunConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    images = load_prepared_images(cfg)
    train, valid, test = prepare_splits(images, cfg)
    logger.info("split %d/%d/%d", train.n_images, valid.n_images, test.n_images)
    model = _model_for(images, cfg)
    tr = cfg.section("training")
    report = training.train_loop(
        model,
        train,
        valid,
        {"lr": tr["lr"], "batch_size": tr["batch_size"], "epochs": tr["epochs"], "seed": tr["seed"]},
    )
    ckpt = out / "checkpoint.flck"
    save_model(model, ckpt)
    report_path = out / "train_report.csv"
    report.to_csv(report_path)
    splits_path = out / "splits.json"
    with open(splits_path, "w", encoding="utf-8") as fh:
        json.dump(_split_indices(images, cfg), fh, sort_keys=True)
    write_manifest(cfg, "train", [out / "images" / "meta.json"], [ckpt, report_path, splits_path])
    return 0


def _load_split(cfg: RunConfig, images: ImageSet, part: str) -> ImageSet:
    splits_path = cfg.output_dir / "splits.json"
    _require(splits_path, "run train first")
    with open(splits_path, encoding="utf-8") as fh:
        idx = json.load(fh)[part]
    return images.subset(idx)


def cmd_tune(cfg: RunConfig) -> int:
    out = cfg.output_dir
    cfg.echo(out)
    images = load_prepared_images(cfg)
    model = load_model(_require(out / "checkpoint.flck", "run train first"))
    valid = _load_split(cfg, images, "valid")
    probs = training.predict_probs(model, valid)
    curve = training.threshold_sweep(probs, valid.labels)
    curve_path = out / "threshold_curve.csv"
    curve.to_csv(curve_path)
    tr = cfg.section("training")
    policy = tr["threshold_policy"]
    selected = training.select_threshold(curve, "max_f2" if policy == "max_f2" else tr["threshold"])
    sel_path = out / "selected_threshold.json"
    with open(sel_path, "w", encoding="utf-8") as fh:
        json.dump({"policy": policy, "threshold": selected}, fh, sort_keys=True)
    logger.info("selected threshold %.2f (%s)", selected, policy)
    write_manifest(cfg, "tune", [out / "checkpoint.flck"], [curve_path, sel_path])
    return 0


def _resolve_threshold(cfg: RunConfig) -> float:
    sel_path = cfg.output_dir / "selected_threshold.json"
    if sel_path.exists():
        with open(sel_path, encoding="utf-8") as fh:
            return float(json.load(fh)["threshold"])
    return float(cfg.section("training")["threshold"])


def cmd_eval(cfg: RunConfig) -> int:
    out = cfg.output_dir
    cfg.echo(out)
    images = load_prepared_images(cfg)
    model = load_model(_require(out / "checkpoint.flck", "run train first"))
    test = _load_split(cfg, images, "test")
    threshold = _resolve_threshold(cfg)
    probs = training.predict_probs(model, test)
    metrics = training.classification_metrics(probs, test.labels, threshold)
    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, sort_keys=True, indent=1)
    edges, normal, fraud = training.probability_histogram(probs, test.labels)
    hist_path = out / "probability_histogram.csv"
    training.histogram_to_csv(edges, normal, fraud, hist_path)
    logger.info("test AUC %.4f recall %.4f F2 %.4f @ %.2f", metrics.auc, metrics.recall, metrics.fbeta, threshold)
    write_manifest(cfg, "eval", [out / "checkpoint.flck"], [metrics_path, hist_path])
    return 0


def _safe_name(company: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", company)


def cmd_explain(cfg: RunConfig) -> int:
    out = cfg.output_dir
    cfg.echo(out)
    ex = cfg.section("explain")
    company = ex["company"]
    if not company:
        raise UserError("explain.company (or --company) is required")
    images = load_prepared_images(cfg)
    model = load_model(_require(out / "checkpoint.flck", "run train first"))
    try:
        idx = images.companies.index(company)
    except ValueError as exc:
        raise UserError(f"company {company!r} not in prepared images") from exc
    image = images.pixels[idx]
    heat = explain.gradcam(model, image)
    overlay = explain.upsample_overlay(heat, image, images.schema, ex["scale"])
    stem = _safe_name(company)
    ppm_path = out / f"overlay_{stem}.ppm"
    netpbm.export_image(overlay, ppm_path)
    sidecar = explain.overlay_sidecar(overlay, images.schema, ex["scale"])
    sidecar["company"] = company
    sidecar["mode"] = images.mode
    sidecar["target_year"] = images.target_year
    sidecar_path = out / f"overlay_{stem}.json"
    explain.write_sidecar(sidecar, sidecar_path)
    outputs = [ppm_path, sidecar_path]
    for layer_index in ex["layer_grids"]:
        grid = explain.layer_activations(model, image, layer_index)
        grid_path = out / f"layer{layer_index}_{stem}.pgm"
        netpbm.export_image(grid.grid, grid_path)
        outputs.append(grid_path)
    write_manifest(cfg, "explain", [out / "checkpoint.flck"], outputs)
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    bl = cfg.section("baseline")
    if bl["framing"] == "flat_images":
        images = load_prepared_images(cfg)
        train, _valid, test = prepare_splits(images, cfg)
        x_train = train.pixels.reshape(train.n_images, -1)
        x_test = test.pixels.reshape(test.n_images, -1)
        model = baseline.fit_l1_logreg(
            x_train, train.labels, C=bl["C"], iters=bl["iters"], seed=bl["seed"], threshold=bl["threshold"]
        )
        probs, _ = baseline.predict_binary(model, x_test)
        metrics = training.classification_metrics(probs, test.labels, bl["threshold"])
        pred_rows = [(c, test.target_year, p) for c, p in zip(test.companies, probs)]
        inputs = [out / "images" / "meta.json"]
    else:
        panel_path = _require(out / "prepared_panel.csv", "run prepare first")
        schema_path = _require(out / "prepared_schema.csv", "run prepare first")
        ds = load_panel_csv(panel_path, schema_path)
        _, _, violations_path = _input_paths(cfg)
        if violations_path.exists():
            labels, _ = derive_labels(load_violations_csv(violations_path))
            ds = ds.with_labels(labels)
        parts = baseline.temporal_split(ds, bl["train_years"], bl["valid_years"], bl["test_years"])
        x_train, y_train = baseline.rows_xy(ds, parts[0])
        x_test, y_test = baseline.rows_xy(ds, parts[2])
        if len(set(y_train.tolist())) < 2:
            raise UserError("baseline training years contain a single class")
        model = baseline.fit_l1_logreg(
            x_train, y_train, C=bl["C"], iters=bl["iters"], seed=bl["seed"], threshold=bl["threshold"]
        )
        probs, _ = baseline.predict_binary(model, x_test)
        metrics = training.classification_metrics(probs, y_test, bl["threshold"])
        pred_rows = [(ds.keys[i][0], ds.keys[i][1], p) for i, p in zip(parts[2], probs)]
        inputs = [panel_path, schema_path]

    metrics_path = out / "baseline_metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, sort_keys=True, indent=1)
    pred_path = out / "baseline_predictions.csv"
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "year", "prob"])
        for company, year, prob in pred_rows:
            writer.writerow([company, str(year), repr(float(prob))])
    logger.info("baseline AUC %.4f recall %.4f", metrics.auc, metrics.recall)
    write_manifest(cfg, "baseline", inputs, [metrics_path, pred_path])
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    out = cfg.output_dir
    cfg.echo(out)
    rows = []

    metrics_path = _require(out / "metrics.json", "run eval first")
    with open(metrics_path, encoding="utf-8") as fh:
        cnn = json.load(fh)
    mode = cfg.section("pipeline")["mode"]
    rows.append((f"cnn-{mode.lower()}", cnn))

    baseline_path = out / "baseline_metrics.json"
    if baseline_path.exists():
        with open(baseline_path, encoding="utf-8") as fh:
            rows.append(("l1-logreg", json.load(fh)))

    external = cfg.section("compare")["external"]
    if external:
        images = load_prepared_images(cfg)
        test = _load_split(cfg, images, "test")
        wanted = {(c, test.target_year): i for i, c in enumerate(test.companies)}
        for entry in external:
            preds = baseline.load_external_predictions(_require(Path(entry["path"]), "external prediction file missing"))
            matched = [(i, p) for key, p in preds.items() if (i := wanted.get(key)) is not None]
            if not matched:
                raise UserError(f"external model {entry['name']!r} matches no test keys")
            if len(matched) < len(wanted):
                logger.warning(
                    "external model %s covers %d/%d test samples",
                    entry["name"],
                    len(matched),
                    len(wanted),
                )
            idx = np.array([i for i, _ in matched])
            probs = np.array([p for _, p in matched])
            metrics = training.classification_metrics(probs, test.labels[idx], entry["threshold"])
            rows.append((entry["name"], metrics.to_dict()))

    table_path = out / "comparison.csv"
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "auc", "recall", "f2", "fraud_accuracy", "normal_accuracy", "threshold"])
        for name, m in rows:
            writer.writerow(
                [name, repr(m["auc"]), repr(m["recall"]), repr(m["fbeta"]), repr(m["fraud_accuracy"]), repr(m["normal_accuracy"]), repr(m["threshold"])]
            )
    logger.info("comparison over %d models written", len(rows))
    write_manifest(cfg, "compare", [metrics_path], [table_path])
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
}


def run(command: str, cfg: RunConfig) -> int:
    """Dispatch one pipeline command; returns the process exit code."""
    if command not in COMMANDS:
        raise UserError(f"unknown command {command!r}")
    try:
        return COMMANDS[command](cfg)
    except (UserError, DataError) as exc:
        raise UserError(str(exc)) from exc
