"""Dress rehearsal for the end-to-end synthetic benchmark (criterion 7)."""

import sys
import time

import numpy as np

from fraudlens.anomaly import filter_gray, fit_iforest
from fraudlens.features import (
    drop_sparse_features,
    impute_missing,
    smote_balance,
    to_images,
    zscore_fit_apply,
)
from fraudlens.nn.model import Model, ModelConfig
from fraudlens.synth import SynthConfig, generate_synthetic
from fraudlens.training import (
    SplitSpec,
    evaluate,
    predict_probs,
    select_threshold,
    stratified_split,
    threshold_sweep,
    train_loop,
)


def run(cluster_strength: float, seed: int = 7, smote_stage: str = "pre_split"):
    t0 = time.time()
    cfg = SynthConfig(cluster_strength=cluster_strength, seed=seed)
    ds, gt, violations = generate_synthetic(cfg)
    print(f"[{time.time()-t0:6.1f}s] synth rows={ds.n_rows}", flush=True)
    ds = drop_sparse_features(ds, 0.30)
    ds = impute_missing(ds, 5)
    print(f"[{time.time()-t0:6.1f}s] imputed", flush=True)
    nonfraud = ds.values[~ds.fraud_mask()]
    forest = fit_iforest(nonfraud, n_trees=100, psi=min(256, nonfraud.shape[0]), seed=seed)
    ds, removed = filter_gray(ds, forest, 0.05)
    print(f"[{time.time()-t0:6.1f}s] gray removed {len(removed)}", flush=True)
    ds, _ = zscore_fit_apply(ds)
    imgs = to_images(ds, "ExAnte", cfg.final_year, 6)
    print(f"[{time.time()-t0:6.1f}s] images {imgs.n_images} ({imgs.t}x{imgs.f}) frauds {int(imgs.labels.sum())}", flush=True)
    if smote_stage == "pre_split":
        imgs = smote_balance(imgs, k=5, seed=seed)
        print(f"[{time.time()-t0:6.1f}s] smote -> {np.bincount(imgs.labels).tolist()}", flush=True)
    train, valid, test = stratified_split(imgs, SplitSpec(seed=seed))
    if smote_stage == "post_split":
        train = smote_balance(train, k=5, seed=seed)
        print(f"[{time.time()-t0:6.1f}s] smote train-only -> {np.bincount(train.labels).tolist()}", flush=True)
    model = Model(ModelConfig(input_h=imgs.t, input_w=imgs.f, seed=seed))
    report = train_loop(model, train, valid, {"lr": 0.0005, "batch_size": 64, "epochs": 8, "seed": seed})
    for i, e in enumerate(report.epochs):
        print(f"  epoch {i+1}: tl {e['train_loss']:.4f} ta {e['train_auc']:.4f} vl {e['valid_loss']:.4f} va {e['valid_auc']:.4f}", flush=True)
    probs = predict_probs(model, valid)
    thr = select_threshold(threshold_sweep(probs, valid.labels), "max_f2")
    m = evaluate(model, test, thr)
    print(f"[{time.time()-t0:6.1f}s] strength={cluster_strength}: test AUC {m.auc:.4f} recall {m.recall:.4f} F2 {m.fbeta:.4f} thr {thr:.2f}", flush=True)
    return m


if __name__ == "__main__":
    strength = float(sys.argv[1]) if len(sys.argv) > 1 else 3.0
    stage = sys.argv[2] if len(sys.argv) > 2 else "pre_split"
    run(strength, smote_stage=stage)
