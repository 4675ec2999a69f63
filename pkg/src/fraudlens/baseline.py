"""L1-penalized logistic regression on per-(company, year) rows.

The comparison models cannot consume time series, so they see one row per
company-year with that year's label, split by calendar ranges. The objective
is C * (mean BCE) + sum |theta_j| (bias unpenalized), minimized by proximal
gradient with soft thresholding and a monotone backtracking line search.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset
from .nn.ops import PROB_CLAMP, _sigmoid

logger = logging.getLogger(__name__)


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    C: float
    threshold: float = 0.35

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("non-finite parameters")


def temporal_split(ds: PanelDataset, train_years, valid_years, test_years):
    """Assign rows to train/valid/test by inclusive (start, end) year ranges.

    Ranges must be disjoint and each must select at least one row.
    Returns three lists of row indices into ``ds``.
    """
    ranges = [tuple(train_years), tuple(valid_years), tuple(test_years)]
    years_of = [set(range(a, b + 1)) for a, b in ranges]
    for name, (a, b) in zip(("train", "valid", "test"), ranges):
        if a > b:
            raise ValueError(f"empty {name} range {a}..{b}")
    if (years_of[0] & years_of[1]) or (years_of[0] & years_of[2]) or (years_of[1] & years_of[2]):
        raise ValueError("year ranges overlap")
    parts = ([], [], [])
    for i, (_, year) in enumerate(ds.keys):
        for p in range(3):
            if year in years_of[p]:
                parts[p].append(i)
                break
    for name, part in zip(("train", "valid", "test"), parts):
        if not part:
            raise ValueError(f"{name} range selects no rows")
    return parts


def rows_xy(ds: PanelDataset, rows) -> tuple:
    fraud = ds.fraud_mask()
    return ds.values[rows], fraud[np.asarray(rows, dtype=np.int64)].astype(np.int64)


def _objective(X, y, theta, bias, C) -> float:
    p = np.clip(_sigmoid(X @ theta + bias), PROB_CLAMP, 1 - PROB_CLAMP)
    bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(C * bce + np.abs(theta).sum())


def _grad(X, y, theta, bias, C):
    n = X.shape[0]
    r = _sigmoid(X @ theta + bias) - y
    return (C / n) * (X.T @ r), (C / n) * r.sum()


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def fit_l1_logreg(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    iters: int = 500,
    seed: int = 0,
    tol: float = 1e-7,
    threshold: float = 0.35,
) -> LinearModel:
    """Proximal-gradient fit of the penalized logistic objective.

    The step starts at the smooth-part Lipschitz bound C * lmax(X'X) / (4N)
    (lmax via seeded power iteration) and halves whenever a step would
    increase the objective. Stops when the parameter change drops below
    ``tol`` or after ``iters`` passes. C = 0 returns the all-zero model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, f = X.shape
    if n < 1:
        raise ValueError("need at least one row")
    theta = np.zeros(f)
    bias = 0.0
    if C == 0.0:
        return LinearModel(weights=theta, bias=bias, C=C, threshold=threshold)

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(f)
    v /= np.linalg.norm(v)
    for _ in range(60):
        v = X.T @ (X @ v)
        norm = np.linalg.norm(v)
        if norm == 0:
            break
        v /= norm
    lmax = float(np.linalg.norm(X @ v) ** 2) if norm else 1.0
    lipschitz = max(C * lmax / (4.0 * n), 1e-12)
    eta = 1.0 / lipschitz

    obj = _objective(X, y, theta, bias, C)
    if not np.isfinite(obj):
        raise FloatingPointError("non-finite objective")
    for _ in range(iters):
        g_theta, g_bias = _grad(X, y, theta, bias, C)
        step = eta
        while True:
            new_theta = soft_threshold(theta - step * g_theta, step)
            new_bias = bias - step * g_bias
            new_obj = _objective(X, y, new_theta, new_bias, C)
            if new_obj <= obj + 1e-15 or step < 1e-16:
                break
            step *= 0.5
        delta = max(float(np.max(np.abs(new_theta - theta))), abs(new_bias - bias))
        theta, bias, obj = new_theta, new_bias, new_obj
        if not np.isfinite(obj):
            raise FloatingPointError("non-finite objective")
        if delta < tol:
            break
    return LinearModel(weights=theta, bias=float(bias), C=C, threshold=threshold)


def predict_binary(m: LinearModel, X: np.ndarray, threshold: float | None = None):
    """Probabilities and labels; a row is positive when prob >= threshold."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != m.weights.shape[0]:
        raise ValueError(
            f"feature count {X.shape[1]} does not match model ({m.weights.shape[0]})"
        )
    if threshold is None:
        threshold = m.threshold
    probs = _sigmoid(X @ m.weights + m.bias)
    return probs, (probs >= threshold).astype(np.int64)


def load_external_predictions(path) -> dict:
    """Read an external model's predictions: company_id,year,prob."""
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["company_id", "year", "prob"]:
            raise ValueError(f"bad predictions header {header!r}")
        for rec in reader:
            out[(rec[0], int(rec[1]))] = float(rec[2])
    return out
