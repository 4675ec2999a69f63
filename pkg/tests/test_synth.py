import json

import numpy as np
import pytest

from fraudlens.data import (
    DataError,
    derive_labels,
    load_panel_csv,
    load_violations_csv,
)
from fraudlens.features import to_images
from fraudlens.synth import SynthConfig, generate_synthetic, make_schema, write_synthetic

SMALL = dict(
    n_companies=50, n_years=8, f_fin=12, f_esg=4, f_ic=4,
    fraud_rate=0.1, gray_rate=0.06, missing_rate=0.03, seed=42,
)


class TestConfig:
    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            SynthConfig(fraud_rate=1.0)
        with pytest.raises(ValueError):
            SynthConfig(missing_rate=-0.1)

    def test_block_needs_enough_years(self):
        with pytest.raises(DataError):
            generate_synthetic(SynthConfig(**{**SMALL, "n_years": 3}))


class TestSchema:
    def test_group_structure(self):
        schema = make_schema(12, 4, 6)
        assert schema.n_features == 22
        levels = [e.level1 for e in schema.ordered_entries()]
        assert levels == ["Financial"] * 12 + ["ESG"] * 4 + ["InternalControl"] * 6
        kinds = {e.level1: e.kind for e in schema.entries}
        assert kinds["Financial"] == "Continuous"
        assert kinds["ESG"] == "Categorical"


class TestGenerate:
    def test_fraud_count_rounds_to_nearest(self):
        cfg = SynthConfig(n_companies=1436, n_years=5, f_fin=6, f_esg=2, f_ic=2, fraud_rate=0.048, seed=1)
        _, gt, _ = generate_synthetic(cfg)
        assert len(gt.fraud_companies) == 69

    def test_deterministic_bit_identical(self):
        a, _, _ = generate_synthetic(SynthConfig(**SMALL))
        b, _, _ = generate_synthetic(SynthConfig(**SMALL))
        assert a.keys == b.keys
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.missing, b.missing)

    def test_zero_missing_rate(self):
        ds, _, _ = generate_synthetic(SynthConfig(**{**SMALL, "missing_rate": 0.0}))
        assert not ds.missing.any()

    def test_labels_on_block_and_final_years(self):
        cfg = SynthConfig(**SMALL)
        ds, gt, _ = generate_synthetic(cfg)
        final = cfg.final_year
        for company in gt.fraud_companies:
            for year in range(final - 3, final + 1):
                assert ds.label_for(company, year).is_fraud
            assert not ds.label_for(company, final - 4).is_fraud

    def test_gray_companies_labelled_normal(self):
        cfg = SynthConfig(**SMALL)
        ds, gt, _ = generate_synthetic(cfg)
        assert gt.gray_companies
        for company in gt.gray_companies:
            for year in ds.years:
                assert not ds.label_for(company, year).is_fraud
            assert company in gt.blocks

    def test_blocks_inside_exante_window(self):
        for seed in (1, 2, 3):
            cfg = SynthConfig(**{**SMALL, "seed": seed, "missing_rate": 0.0})
            ds, gt, _ = generate_synthetic(cfg)
            to_images(ds, "ExAnte", cfg.final_year, min_years=4)
            start = min(ds.years)
            for _, (y0, y1, f0, f1, sign) in gt.blocks.items():
                assert start <= y0 <= y1 <= cfg.final_year - 1
                assert 0 <= f0 < f1 <= cfg.f_fin
                assert abs(sign) == 1

    def test_blocks_are_exactly_the_planted_difference(self):
        # regeneration with cluster_strength 0 shares every other draw, so
        # the value difference is the planted blocks and nothing else
        cfg = SynthConfig(**{**SMALL, "missing_rate": 0.0})
        with_blocks, gt, _ = generate_synthetic(cfg)
        without, _, _ = generate_synthetic(SynthConfig(**{**SMALL, "missing_rate": 0.0, "cluster_strength": 0.0}))
        diff = with_blocks.values - without.values
        expected = np.zeros_like(diff)
        for company, (y0, y1, f0, f1, sign) in gt.blocks.items():
            strength = cfg.cluster_strength * (0.5 if company in gt.gray_companies else 1.0)
            for y in range(y0, y1 + 1):
                expected[with_blocks.row_index(company, y), f0:f1] = sign * strength
        np.testing.assert_allclose(diff, expected, atol=1e-12)

    def test_zero_strength_values_identical_to_no_fraud(self):
        base = dict(SMALL, missing_rate=0.0, cluster_strength=0.0)
        with_fraud, _, _ = generate_synthetic(SynthConfig(**base))
        without, _, _ = generate_synthetic(SynthConfig(**{**base, "fraud_rate": 0.0, "gray_rate": 0.0}))
        np.testing.assert_array_equal(with_fraud.values, without.values)

    def test_bands_cover_every_company(self):
        ds, gt, _ = generate_synthetic(SynthConfig(**SMALL))
        assert set(gt.bands) == set(ds.companies)


class TestWriteOutputs:
    def test_files_and_roundtrip(self, tmp_path):
        cfg = SynthConfig(**SMALL)
        paths = write_synthetic(cfg, tmp_path)
        ds_mem, gt, violations_mem = generate_synthetic(cfg)
        ds_disk = load_panel_csv(paths["panel"], paths["schema"])
        assert ds_disk.keys == ds_mem.keys
        observed = ~ds_mem.missing
        np.testing.assert_allclose(ds_disk.values[observed], ds_mem.values[observed])
        labels, skipped = derive_labels(load_violations_csv(paths["violations"]))
        assert skipped and skipped[0][2] == "P9999"
        merged = ds_disk.with_labels(labels)
        assert merged.fraud_mask().sum() == ds_mem.fraud_mask().sum()
        gt_json = json.loads((tmp_path / "ground_truth.json").read_text())
        assert set(gt_json["fraud_companies"]) == set(gt.fraud_companies)

    def test_rerun_byte_identical(self, tmp_path):
        cfg = SynthConfig(**SMALL)
        write_synthetic(cfg, tmp_path / "a")
        write_synthetic(cfg, tmp_path / "b")
        for name in ("panel.csv", "schema.csv", "violations.csv", "ground_truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
