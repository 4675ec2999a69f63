"""Splitting, metrics, threshold tuning, the training loop, and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .features import ImageSet
from .nn.model import Model, adam_step, forward
from .nn.ops import bce_loss
from .nn.model import backward as nn_backward

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.70, 0.15, 0.15)
    stratified: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError("need three positive ratios")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("ratios must sum to 1")


def _split_totals(n: int, ratios) -> tuple:
    """Global (train, valid, test) sizes.

    The holdout is ceil((1 - r_train) * n) and the test share of the holdout
    rounds up, reproducing the two-stage 70/30 then 50/50 protocol.
    """
    r_train, r_valid, r_test = ratios
    holdout = math.ceil((1.0 - r_train) * n)
    n_test = math.ceil(holdout * r_test / (r_valid + r_test))
    return n - holdout, holdout - n_test, n_test


def _largest_remainder(n: int, ratios) -> list:
    quotas = [r * n for r in ratios]
    counts = [math.floor(q) for q in quotas]
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in range(n - sum(counts)):
        counts[remainders[i % len(ratios)]] += 1
    return counts


def _per_class_counts(class_sizes: dict, ratios) -> dict:
    """Per-class split counts: largest-remainder within each class, then a
    reconciliation pass that moves one sample at a time (smallest class
    label first) from over-quota to under-quota splits until the global
    totals match the two-stage rule."""
    n = sum(class_sizes.values())
    totals = list(_split_totals(n, ratios))
    counts = {c: _largest_remainder(size, ratios) for c, size in class_sizes.items()}
    current = [sum(counts[c][i] for c in counts) for i in range(3)]
    labels = sorted(class_sizes)
    for _ in range(3 * n):
        over = next((i for i in range(3) if current[i] > totals[i]), None)
        under = next((i for i in range(3) if current[i] < totals[i]), None)
        if over is None or under is None:
            break
        moved = False
        for c in labels:
            if counts[c][over] > 0:
                counts[c][over] -= 1
                counts[c][under] += 1
                current[over] -= 1
                current[under] += 1
                moved = True
                break
        if not moved:
            break
    return counts


def stratified_split(s: ImageSet, spec: SplitSpec):
    """Deterministic stratified (or plain) 3-way split of an image set.

    Per-class counts follow largest-remainder apportionment of the ratios,
    reconciled against the two-stage global totals; membership is a seeded
    shuffle within each class. Splits are disjoint and covering.
    """
    labels = s.labels
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes = sorted(set(labels.tolist()))
        if len(classes) < 2:
            raise ValueError("stratified split needs both classes present")
        class_sizes = {c: int((labels == c).sum()) for c in classes}
        counts = _per_class_counts(class_sizes, spec.ratios)
        parts = ([], [], [])
        for c in classes:
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(idx.size)]
            a, b = counts[c][0], counts[c][0] + counts[c][1]
            parts[0].extend(idx[:a].tolist())
            parts[1].extend(idx[a:b].tolist())
            parts[2].extend(idx[b:].tolist())
    else:
        idx = rng.permutation(s.n_images)
        a, b, _ = _split_totals(s.n_images, spec.ratios)
        parts = (idx[:a].tolist(), idx[a : a + b].tolist(), idx[a + b :].tolist())
    return tuple(s.subset(sorted(p)) for p in parts)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the midrank Mann-Whitney statistic:
    P(score+ > score-) + 0.5 P(score+ = score-)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class Metrics:
    auc: float
    recall: float
    precision: float
    fbeta: float
    fraud_accuracy: float
    normal_accuracy: float
    threshold: float
    confusion: tuple
    beta: float = 2.0
    degenerate: bool = False

    def to_dict(self) -> dict:
        tp, fp, tn, fn = self.confusion
        return {
            "auc": self.auc,
            "recall": self.recall,
            "precision": self.precision,
            "fbeta": self.fbeta,
            "beta": self.beta,
            "fraud_accuracy": self.fraud_accuracy,
            "normal_accuracy": self.normal_accuracy,
            "threshold": self.threshold,
            "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
            "degenerate": self.degenerate,
        }


def fbeta_score(precision: float, recall: float, beta: float = 2.0) -> float:
    denom = beta * beta * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta * beta) * precision * recall / denom


def classification_metrics(scores, labels, threshold: float, beta: float = 2.0, auc_value: float | None = None) -> Metrics:
    """Confusion-based metrics at one threshold; ties predict positive.

    Degenerate denominators (no predicted positives, or a missing class)
    yield 0 for the affected metric and set the degenerate flag.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0:
        raise ValueError("need at least one sample")
    pred = scores >= threshold
    pos = labels == 1
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    degenerate = False
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tn + fp > 0:
        normal_acc = tn / (tn + fp)
    else:
        normal_acc, degenerate = 0.0, True
    if auc_value is None:
        try:
            auc_value = auc(scores, labels)
        except ValueError:
            auc_value, degenerate = 0.0, True
    return Metrics(
        auc=auc_value,
        recall=recall,
        precision=precision,
        fbeta=fbeta_score(precision, recall, beta),
        fraud_accuracy=recall,
        normal_accuracy=normal_acc,
        threshold=float(threshold),
        confusion=(tp, fp, tn, fn),
        beta=beta,
        degenerate=degenerate,
    )


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    rows: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["threshold", "fraud_accuracy", "normal_accuracy", "f2", "precision", "recall", "tp", "fp", "tn", "fn"]
            )
            for m in self.rows:
                tp, fp, tn, fn = m.confusion
                writer.writerow(
                    [f"{m.threshold:.2f}", repr(m.fraud_accuracy), repr(m.normal_accuracy), repr(m.fbeta), repr(m.precision), repr(m.recall), tp, fp, tn, fn]
                )


def threshold_sweep(scores, labels, step: float = 0.01) -> ThresholdCurve:
    """Metrics at every grid threshold 0.00, 0.01, ..., 1.00."""
    n = int(round(1.0 / step))
    grid = np.round(np.arange(n + 1) * step, 10)
    base_auc = auc(scores, labels)
    rows = [classification_metrics(scores, labels, float(t), auc_value=base_auc) for t in grid]
    return ThresholdCurve(thresholds=grid, rows=rows)


def select_threshold(curve: ThresholdCurve, policy="max_f2") -> float:
    """Pick the operating threshold: "max_f2" takes the grid argmax of F2
    (smallest threshold on ties); a float passes straight through."""
    if isinstance(policy, (int, float)) and not isinstance(policy, bool):
        return float(policy)
    if policy == "max_f2":
        if not curve.rows:
            raise ValueError("empty curve")
        best = max(range(len(curve.rows)), key=lambda i: (curve.rows[i].fbeta, -curve.thresholds[i]))
        return float(curve.thresholds[best])
    raise ValueError(f"unknown threshold policy {policy!r}")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    hyper: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_auc", "valid_loss", "valid_auc"])
            for i, row in enumerate(self.epochs, start=1):
                writer.writerow(
                    [i, repr(row["train_loss"]), repr(row["train_auc"]), repr(row["valid_loss"]), repr(row["valid_auc"])]
                )


def predict_probs(model: Model, s: ImageSet, batch: int = EVAL_BATCH) -> np.ndarray:
    """Inference-mode probabilities over an image set."""
    out = np.empty(s.n_images, dtype=np.float64)
    for start in range(0, s.n_images, batch):
        stop = min(start + batch, s.n_images)
        probs, _ = forward(model, s.pixels[start:stop], training=False)
        out[start:stop] = probs
    return out


def train_loop(model: Model, train: ImageSet, valid: ImageSet, hyper: dict) -> TrainReport:
    """Seeded mini-batch Adam training.

    Each epoch shuffles with its own deterministic stream, keeps the last
    partial batch, and logs training loss/AUC aggregated from the training
    batches themselves plus inference-mode validation loss/AUC. Non-finite
    loss aborts with a diagnostic.
    """
    lr = float(hyper["lr"])
    batch_size = int(hyper["batch_size"])
    epochs = int(hyper["epochs"])
    seed = int(hyper["seed"])
    if train.n_images == 0:
        raise ValueError("empty training set")
    report = TrainReport(hyper={"lr": lr, "batch_size": batch_size, "epochs": epochs, "seed": seed})
    step = 0
    for epoch in range(epochs):
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        order = shuffle_rng.permutation(train.n_images)
        epoch_scores = np.empty(train.n_images, dtype=np.float64)
        epoch_labels = np.empty(train.n_images, dtype=np.int64)
        losses = []
        filled = 0
        for start in range(0, train.n_images, batch_size):
            idx = order[start : start + batch_size]
            xb = train.pixels[idx]
            yb = train.labels[idx]
            step += 1
            probs, cache = forward(model, xb, training=True, seed=seed * 1000003 + step)
            loss = bce_loss(yb, probs)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, step {step} (lr={lr})"
                )
            grads = nn_backward(model, cache, yb)
            adam_step(model, grads, lr)
            losses.append((loss, idx.size))
            epoch_scores[filled : filled + idx.size] = probs
            epoch_labels[filled : filled + idx.size] = yb
            filled += idx.size
        train_loss = float(sum(l * n for l, n in losses) / train.n_images)
        train_auc = auc(epoch_scores, epoch_labels) if len(set(epoch_labels.tolist())) > 1 else float("nan")
        valid_probs = predict_probs(model, valid)
        valid_loss = bce_loss(valid.labels, valid_probs)
        valid_auc = auc(valid_probs, valid.labels) if len(set(valid.labels.tolist())) > 1 else float("nan")
        report.epochs.append(
            {
                "train_loss": train_loss,
                "train_auc": train_auc,
                "valid_loss": valid_loss,
                "valid_auc": valid_auc,
            }
        )
        logger.info(
            "epoch %d/%d train_loss=%.4f train_auc=%.4f valid_loss=%.4f valid_auc=%.4f",
            epoch + 1,
            epochs,
            train_loss,
            train_auc,
            valid_loss,
            valid_auc,
        )
    return report


def evaluate(model: Model, test: ImageSet, threshold: float) -> Metrics:
    """Inference-mode metrics on a held-out set at a fixed threshold."""
    if test.n_images == 0:
        raise ValueError("empty test set")
    probs = predict_probs(model, test)
    return classification_metrics(probs, test.labels, threshold)


def probability_histogram(scores, labels, bins: int = 50):
    """Per-class histogram of predicted probabilities over [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    edges = np.linspace(0.0, 1.0, bins + 1)
    normal, _ = np.histogram(scores[labels == 0], bins=edges)
    fraud, _ = np.histogram(scores[labels == 1], bins=edges)
    return edges, normal, fraud


def histogram_to_csv(edges, normal, fraud, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count_normal", "count_fraud"])
        for i in range(len(normal)):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(normal[i]), int(fraud[i])])
