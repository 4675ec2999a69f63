"""Feature engineering: sparsity pruning, imputation, standardization,
panel-to-image transformation, and SMOTE balancing.

Each company's multi-year feature panel becomes one 2-D grayscale "image"
(years down, features across in canonical schema order) labelled by the
company's fraud status at a target year.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, IndicatorSchema, PanelDataset, SchemaEntry

MODES = ("ExPost", "ExAnte")


@dataclass
class ZScaler:
    """Per-feature standardization parameters (population statistics)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")

    def apply(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.sigma > 0, self.sigma, 1.0)
        z = (X - self.mu) / safe
        z[:, self.sigma == 0] = 0.0
        return z


@dataclass
class ImageSet:
    """Per-company grayscale images (T x F) with binary labels."""

    companies: list
    pixels: np.ndarray
    labels: np.ndarray
    mode: str
    target_year: int
    schema: IndicatorSchema

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.pixels.ndim != 3:
            raise ValueError("pixels must be (n, T, F)")
        if len(self.companies) != self.pixels.shape[0] or self.labels.shape[0] != self.pixels.shape[0]:
            raise ValueError("companies, pixels, labels must align")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels must be finite")

    @property
    def n_images(self) -> int:
        return self.pixels.shape[0]

    @property
    def t(self) -> int:
        return self.pixels.shape[1]

    @property
    def f(self) -> int:
        return self.pixels.shape[2]

    def subset(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageSet(
            [self.companies[i] for i in idx],
            self.pixels[idx],
            self.labels[idx],
            self.mode,
            self.target_year,
            self.schema,
        )


def drop_sparse_features(ds: PanelDataset, threshold: float = 0.30) -> PanelDataset:
    """Remove features whose missing fraction across all rows exceeds
    ``threshold``; the schema is recompacted to the surviving columns."""
    frac = ds.missing.mean(axis=0)
    keep = np.flatnonzero(frac <= threshold)
    if keep.size == 0:
        raise DataError("all features dropped by sparsity threshold")
    ordered = ds.schema.ordered_entries()
    new_entries = tuple(
        SchemaEntry(ordered[j].feature_id, ordered[j].level1, ordered[j].level2, ordered[j].kind, pos)
        for pos, j in enumerate(keep)
    )
    return ds.replace(
        values=ds.values[:, keep],
        missing=ds.missing[:, keep],
        schema=IndicatorSchema(new_entries),
    )


def impute_missing(ds: PanelDataset, k: int = 5) -> PanelDataset:
    """Fill every masked cell; drop rows that are entirely missing.

    Continuous features interpolate linearly along each company's years
    (edges take the nearest observed value; a feature never observed for a
    company falls back to the global observed mean). Categorical features
    take the majority code of the k nearest rows, measured by Euclidean
    distance over mutually observed continuous features, preferring rows of
    the same company; vote ties resolve to the smallest code.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    all_missing = ds.missing.all(axis=1)
    if all_missing.any():
        keep = np.flatnonzero(~all_missing)
        ds = ds.replace(
            keys=[ds.keys[i] for i in keep],
            values=ds.values[keep],
            missing=ds.missing[keep],
        )

    ordered = ds.schema.ordered_entries()
    cont = np.array([e.kind == "Continuous" for e in ordered])
    values = ds.values.copy()
    observed = ~ds.missing
    n, _ = values.shape

    global_mean = np.zeros(values.shape[1])
    for j in range(values.shape[1]):
        obs = observed[:, j]
        if obs.any():
            global_mean[j] = values[obs, j].mean()

    groups: dict = {}
    for i, (company, _) in enumerate(ds.keys):
        groups.setdefault(company, []).append(i)
    group_rows = {c: np.asarray(rows) for c, rows in groups.items()}
    company_of = np.array([c for c, _ in ds.keys])

    # Continuous: per-company interpolation over years.
    cont_idx = np.flatnonzero(cont)
    for rows in group_rows.values():
        sub_missing = ~observed[np.ix_(rows, cont_idx)]
        if not sub_missing.any():
            continue
        years = np.array([ds.keys[i][1] for i in rows], dtype=np.float64)
        for jj in np.flatnonzero(sub_missing.any(axis=0)):
            j = cont_idx[jj]
            obs = observed[rows, j]
            if not obs.any():
                values[rows, j] = global_mean[j]
                continue
            values[rows[~obs], j] = np.interp(years[~obs], years[obs], values[rows[obs], j])

    # Categorical: majority vote of the k nearest observing rows.
    for j in np.flatnonzero(~cont):
        voters_mask = observed[:, j]
        for i in np.flatnonzero(~voters_mask):
            company = company_of[i]
            rows = group_rows[company]
            same = rows[(rows != i) & voters_mask[rows]]
            if same.size >= k:
                cand = same
                foreign = np.zeros(same.size, dtype=bool)
            else:
                cand = np.flatnonzero(voters_mask)
                cand = cand[cand != i]
                if cand.size == 0:
                    values[i, j] = 0.0
                    continue
                foreign = company_of[cand] != company
            dist = _masked_distances(values, observed, cont_idx, i, cand)
            order = np.lexsort((cand, dist, foreign))
            top = cand[order[:k]]
            codes, counts = np.unique(values[top, j], return_counts=True)
            values[i, j] = codes[np.lexsort((codes, -counts))[0]]

    return ds.replace(values=values, missing=np.zeros_like(ds.missing))


def _masked_distances(values, observed, cont_idx, i, cand) -> np.ndarray:
    """Root-mean-square difference over mutually observed continuous
    features between row i and each candidate row; inf when no overlap."""
    a_obs = observed[i, cont_idx]
    mutual = observed[np.ix_(cand, cont_idx)] & a_obs
    diff = (values[np.ix_(cand, cont_idx)] - values[i, cont_idx]) * mutual
    m = mutual.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sqrt((diff * diff).sum(axis=1) / m)
    d[m == 0] = np.inf
    return d


def zscore_fit_apply(ds: PanelDataset, fit_rows=None):
    """Standardize every feature by its population mean and std; zero-variance
    features map to 0. Returns (dataset, scaler).

    Statistics come from all rows by default (the protocol the published
    splits used); pass ``fit_rows`` to fit on a subset (e.g. training-split
    companies) while still transforming every row.
    """
    if ds.missing.any():
        raise DataError("impute before standardizing")
    fit = ds.values if fit_rows is None else ds.values[np.asarray(fit_rows, dtype=np.int64)]
    if fit.shape[0] == 0:
        raise DataError("no rows to fit the scaler on")
    scaler = ZScaler(mu=fit.mean(axis=0), sigma=fit.std(axis=0))
    return ds.replace(values=scaler.apply(ds.values)), scaler


def qualifying_companies(ds: PanelDataset, mode: str, target_year: int, min_years: int = 6):
    """Companies the image transform would keep, with their labels, in
    dataset order. Qualification does not depend on feature scaling."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    start = min(ds.years)
    end = target_year if mode == "ExPost" else target_year - 1
    out = []
    groups: dict = {}
    for company, year in ds.keys:
        groups.setdefault(company, set()).add(year)
    for company in ds.companies:
        if (company, target_year) not in ds._index:
            continue
        if len([y for y in groups[company] if start <= y <= end]) < min_years:
            continue
        out.append((company, 1 if ds.label_for(company, target_year).is_fraud else 0))
    return out


def to_images(ds: PanelDataset, mode: str, target_year: int, min_years: int = 6) -> ImageSet:
    """Slice the standardized panel into one image per qualifying company.

    A company qualifies when it has a label entry possible at ``target_year``
    (a row there) and at least ``min_years`` observed rows inside the image
    window. The window runs from the panel's first year to target_year - 1
    (ExAnte) or target_year (ExPost); absent years become zero rows, which
    after standardization sit at the feature means.
    """
    if ds.missing.any():
        raise DataError("impute before imaging")
    start = min(ds.years)
    end = target_year if mode == "ExPost" else target_year - 1
    t = end - start + 1
    if t < 1:
        raise DataError("target_year precedes the panel")
    qualified = qualifying_companies(ds, mode, target_year, min_years)
    if not qualified:
        raise DataError("no qualifying companies")

    f = ds.schema.n_features
    groups: dict = {}
    for i, (company, year) in enumerate(ds.keys):
        groups.setdefault(company, {})[year] = i
    companies, images, labels = [], [], []
    for company, label in qualified:
        year_rows = groups[company]
        img = np.zeros((t, f))
        for y in year_rows:
            if start <= y <= end:
                img[y - start] = ds.values[year_rows[y]]
        companies.append(company)
        images.append(img)
        labels.append(label)
    return ImageSet(companies, np.stack(images), np.array(labels), mode, target_year, ds.schema)


def smote_balance(s: ImageSet, k: int = 5, seed: int = 0) -> ImageSet:
    """Oversample the minority class to parity by linear interpolation.

    Images flatten to vectors; each synthetic point is x + u * (xn - x) for
    one uniform u in [0, 1) and a random neighbor xn among the base sample's
    k nearest minority neighbors. Originals are preserved; bases rotate
    round-robin so coverage is even.
    """
    counts = np.bincount(s.labels, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError("both classes must be nonempty")
    minority = int(np.argmin(counts))
    need = int(abs(counts[0] - counts[1]))
    if need == 0:
        return s.subset(np.arange(s.n_images))
    min_idx = np.flatnonzero(s.labels == minority)
    if min_idx.size <= k:
        raise ValueError(f"minority count {min_idx.size} must exceed k={k}")

    flat = s.pixels[min_idx].reshape(min_idx.size, -1)
    d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    syn_pixels = np.empty((need, s.t, s.f))
    syn_companies = []
    for i in range(need):
        b = i % min_idx.size
        nb = neighbors[b, rng.integers(k)]
        u = rng.random()
        vec = flat[b] + u * (flat[nb] - flat[b])
        syn_pixels[i] = vec.reshape(s.t, s.f)
        syn_companies.append(f"syn{i:05d}_{s.companies[min_idx[b]]}")

    return ImageSet(
        list(s.companies) + syn_companies,
        np.concatenate([s.pixels, syn_pixels]),
        np.concatenate([s.labels, np.full(need, minority, dtype=np.int64)]),
        s.mode,
        s.target_year,
        s.schema,
    )


def save_imageset(s: ImageSet, directory) -> None:
    """Serialize as meta.json plus one little-endian float32 file per image."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "mode": s.mode,
        "target_year": s.target_year,
        "t": s.t,
        "f": s.f,
        "companies": s.companies,
        "labels": s.labels.tolist(),
        "schema": [
            [e.feature_id, e.level1, e.level2, e.kind]
            for e in s.schema.ordered_entries()
        ],
    }
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    for i in range(s.n_images):
        data = s.pixels[i].astype("<f4").tobytes()
        (directory / f"img_{i:05d}.f32").write_bytes(data)


def load_imageset(directory) -> ImageSet:
    directory = Path(directory)
    with open(directory / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    schema = IndicatorSchema.from_rows([tuple(r) for r in meta["schema"]])
    n = len(meta["companies"])
    pixels = np.empty((n, meta["t"], meta["f"]))
    for i in range(n):
        raw = (directory / f"img_{i:05d}.f32").read_bytes()
        pixels[i] = np.frombuffer(raw, dtype="<f4").reshape(meta["t"], meta["f"])
    return ImageSet(
        meta["companies"], pixels, np.array(meta["labels"]), meta["mode"], meta["target_year"], schema
    )
