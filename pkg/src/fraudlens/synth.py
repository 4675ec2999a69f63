"""Deterministic synthetic panel generator with planted signal patterns.

Every company gets persistent vertical "bands" (a few feature columns shifted
across all years). Fraud companies additionally get a localized coherent
block covering the three years before the final year over a contiguous run
of continuous-feature columns, with a per-company random sign so the block
carries no additive (linear) class signal, only the coherent interaction
pattern. Gray companies carry the same block at half strength but keep a
normal label. Ground truth masks make localization tests well-posed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import (
    FRAUD_CODES,
    DataError,
    FraudLabel,
    IndicatorSchema,
    PanelDataset,
    write_panel_csv,
    write_schema_csv,
    write_violations_csv,
)

GRAY_STRENGTH_FACTOR = 0.5
BAND_COLUMN_FRACTION = 0.03
BLOCK_YEARS = 3
BLOCK_WIDTH_RANGE = (0.15, 0.30)  # fraction of continuous columns

FIN_GROUPS = (
    "solvency",
    "disclosure",
    "ratio_structure",
    "operating",
    "profitability",
    "cash_flow",
    "risk_level",
    "growth",
    "per_share",
    "relative_value",
)
ESG_GROUPS = ("dividend", "environment", "social")
IC_GROUPS = (
    "governance",
    "control_environment",
    "risk_management",
    "control_activities",
    "information_communication",
    "supervision",
)


@dataclass(frozen=True)
class SynthConfig:
    n_companies: int = 1436
    n_years: int = 13
    f_fin: int = 180
    f_esg: int = 40
    f_ic: int = 63
    fraud_rate: float = 0.048
    band_strength: float = 1.0
    cluster_strength: float = 3.0
    missing_rate: float = 0.02
    gray_rate: float = 0.03
    seed: int = 7
    start_year: int = 2010

    def __post_init__(self) -> None:
        for name in ("fraud_rate", "missing_rate", "gray_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        for name in ("n_companies", "n_years", "f_fin", "f_esg", "f_ic"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_features(self) -> int:
        return self.f_fin + self.f_esg + self.f_ic

    @property
    def final_year(self) -> int:
        return self.start_year + self.n_years - 1


@dataclass
class GroundTruth:
    """Planted-pattern record keyed by company id.

    blocks: (year_start, year_stop, feat_start, feat_stop, sign) with
    inclusive years and half-open canonical feature columns, covering fraud
    and gray companies. bands: feature columns per company. gray_companies
    carry fraud patterns under a normal label.
    """

    fraud_companies: list
    gray_companies: list
    blocks: dict
    bands: dict

    def to_json(self, path) -> None:
        payload = {
            "fraud_companies": self.fraud_companies,
            "gray_companies": self.gray_companies,
            "blocks": {
                c: {
                    "year_start": b[0],
                    "year_stop": b[1],
                    "feat_start": b[2],
                    "feat_stop": b[3],
                    "sign": b[4],
                }
                for c, b in self.blocks.items()
            },
            "bands": self.bands,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)


def make_schema(f_fin: int, f_esg: int, f_ic: int) -> IndicatorSchema:
    """Canonical synthetic schema: continuous financial features, then
    categorical ESG and internal-control features."""
    rows = []
    for level1, groups, count, kind, tag in (
        ("Financial", FIN_GROUPS, f_fin, "Continuous", "fin"),
        ("ESG", ESG_GROUPS, f_esg, "Categorical", "esg"),
        ("InternalControl", IC_GROUPS, f_ic, "Categorical", "ic"),
    ):
        splits = np.array_split(np.arange(count), min(len(groups), count))
        for g, idx in zip(groups, splits):
            for j in idx:
                rows.append((f"{tag}_{g}_{j:03d}", level1, g, kind))
    return IndicatorSchema.from_rows(rows)


def generate_synthetic(cfg: SynthConfig):
    """Produce (PanelDataset, GroundTruth, violations) for one seed.

    The generation order (assignments, baseline, bands, blocks, missingness,
    violation codes) is fixed, each phase on its own spawned RNG stream, so
    output is bit-identical per seed.
    """
    if cfg.n_years < BLOCK_YEARS + 1:
        raise DataError(f"need at least {BLOCK_YEARS + 1} years to place fraud blocks")
    if cfg.f_fin < 2:
        raise DataError("need at least 2 continuous columns")
    schema = make_schema(cfg.f_fin, cfg.f_esg, cfg.f_ic)

    streams = np.random.SeedSequence(cfg.seed).spawn(6)
    rng_assign, rng_base, rng_band, rng_block, rng_missing, rng_code = (
        np.random.default_rng(s) for s in streams
    )

    n = cfg.n_companies
    companies = [f"C{i:05d}" for i in range(n)]
    years = list(range(cfg.start_year, cfg.start_year + cfg.n_years))
    final = cfg.final_year

    n_fraud = int(round(cfg.fraud_rate * n))
    n_gray = int(round(cfg.gray_rate * n))
    perm = rng_assign.permutation(n)
    fraud_ids = sorted(companies[i] for i in perm[:n_fraud])
    gray_ids = sorted(companies[i] for i in perm[n_fraud : n_fraud + n_gray])

    f = cfg.n_features
    rows_per = cfg.n_years
    values = np.empty((n * rows_per, f))
    values[:, : cfg.f_fin] = rng_base.standard_normal((n * rows_per, cfg.f_fin))
    values[:, cfg.f_fin :] = rng_base.integers(0, 3, size=(n * rows_per, f - cfg.f_fin)).astype(np.float64)

    n_band = max(2, int(round(BAND_COLUMN_FRACTION * cfg.f_fin)))
    bands: dict = {}
    for ci, company in enumerate(companies):
        cols = np.sort(rng_band.choice(cfg.f_fin, size=min(n_band, cfg.f_fin), replace=False))
        bands[company] = cols.tolist()
        values[ci * rows_per : (ci + 1) * rows_per, cols] += cfg.band_strength

    w_lo = max(2, int(round(BLOCK_WIDTH_RANGE[0] * cfg.f_fin)))
    w_hi = max(w_lo, int(round(BLOCK_WIDTH_RANGE[1] * cfg.f_fin)))
    blocks: dict = {}
    for company in sorted(set(fraud_ids) | set(gray_ids)):
        ci = companies.index(company)
        width = int(rng_block.integers(w_lo, w_hi + 1))
        width = min(width, cfg.f_fin)
        fstart = int(rng_block.integers(0, cfg.f_fin - width + 1))
        sign = 1 if rng_block.random() < 0.5 else -1
        strength = cfg.cluster_strength * (GRAY_STRENGTH_FACTOR if company in gray_ids else 1.0)
        y0, y1 = final - BLOCK_YEARS, final - 1
        blocks[company] = (y0, y1, fstart, fstart + width, sign)
        r0 = ci * rows_per + (y0 - cfg.start_year)
        values[r0 : r0 + BLOCK_YEARS, fstart : fstart + width] += sign * strength

    missing = rng_missing.random((n * rows_per, f)) < cfg.missing_rate
    values[missing] = 0.0

    keys = [(c, y) for c in companies for y in years]
    codes = sorted(FRAUD_CODES)
    # violations cover the manipulated years too, as regulator records do;
    # without them the anomaly filter would eat the planted block rows
    violations = []
    for c in fraud_ids:
        code = codes[int(rng_code.integers(len(codes)))]
        for y in range(final - BLOCK_YEARS, final + 1):
            violations.append((c, y, code))
    normal_ids = [c for c in companies if c not in set(fraud_ids)]
    if normal_ids:
        violations.append((normal_ids[0], final, "P9999"))  # exercised as ignorable
    labels = {
        (c, y): FraudLabel.from_codes({code})
        for c, y, code in violations
        if code in FRAUD_CODES
    }

    ds = PanelDataset(keys, values, missing, labels, schema)
    gt = GroundTruth(
        fraud_companies=fraud_ids,
        gray_companies=gray_ids,
        blocks=blocks,
        bands=bands,
    )
    return ds, gt, violations


def write_synthetic(cfg: SynthConfig, directory) -> dict:
    """Generate and write panel.csv, schema.csv, violations.csv, and
    ground_truth.json; returns the artifact paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ds, gt, violations = generate_synthetic(cfg)
    paths = {
        "panel": directory / "panel.csv",
        "schema": directory / "schema.csv",
        "violations": directory / "violations.csv",
        "ground_truth": directory / "ground_truth.json",
    }
    write_panel_csv(ds, paths["panel"])
    write_schema_csv(ds.schema, paths["schema"])
    write_violations_csv(violations, paths["violations"])
    gt.to_json(paths["ground_truth"])
    with open(directory / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, sort_keys=True, indent=1)
    return {k: str(v) for k, v in paths.items()}
