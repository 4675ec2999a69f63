import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudlens.data import FraudLabel, IndicatorSchema, PanelDataset
from fraudlens.features import (
    ImageSet,
    ZScaler,
    drop_sparse_features,
    impute_missing,
    load_imageset,
    save_imageset,
    smote_balance,
    to_images,
    zscore_fit_apply,
)


def make_schema(n_cont=2, n_cat=1):
    rows = [(f"fin{i}", "Financial", "solvency", "Continuous") for i in range(n_cont)]
    rows += [(f"esg{i}", "ESG", "social", "Categorical") for i in range(n_cat)]
    return IndicatorSchema.from_rows(rows)


def make_panel(values, missing=None, keys=None, labels=None, schema=None):
    values = np.asarray(values, dtype=np.float64)
    if schema is None:
        schema = make_schema(values.shape[1], 0)
    if keys is None:
        keys = [(f"C{i:03d}", 2020) for i in range(values.shape[0])]
    if missing is None:
        missing = np.zeros(values.shape, dtype=bool)
    return PanelDataset(keys, values, np.asarray(missing, dtype=bool), labels or {}, schema)


class TestDropSparse:
    def test_feature_over_threshold_dropped(self):
        # feature 1 missing in 31 of 100 rows
        missing = np.zeros((100, 2), dtype=bool)
        missing[:31, 1] = True
        ds = make_panel(np.ones((100, 2)), missing)
        out = drop_sparse_features(ds, 0.30)
        assert out.schema.n_features == 1
        assert out.schema.ordered_feature_ids() == ["fin0"]

    def test_fully_observed_kept(self):
        ds = make_panel(np.ones((10, 2)))
        out = drop_sparse_features(ds, 0.30)
        assert out.schema.n_features == 2

    def test_threshold_one_drops_nothing(self):
        missing = np.ones((10, 2), dtype=bool)
        missing[0, :] = False
        ds = make_panel(np.ones((10, 2)), missing)
        out = drop_sparse_features(ds, 1.0)
        assert out.schema.n_features == 2

    def test_exactly_at_threshold_kept(self):
        missing = np.zeros((10, 2), dtype=bool)
        missing[:3, 0] = True
        ds = make_panel(np.ones((10, 2)), missing)
        out = drop_sparse_features(ds, 0.30)
        assert out.schema.n_features == 2

    def test_schema_orders_recompacted(self):
        schema = make_schema(2, 2)
        missing = np.zeros((10, 4), dtype=bool)
        missing[:, 1] = True
        ds = make_panel(np.ones((10, 4)), missing, schema=schema)
        out = drop_sparse_features(ds, 0.30)
        orders = sorted(e.order for e in out.schema.entries)
        assert orders == [0, 1, 2]


class TestImpute:
    def test_linear_midpoint(self):
        schema = make_schema(2, 0)
        keys = [("C1", 2010), ("C1", 2011), ("C1", 2012)]
        ds = PanelDataset(
            keys,
            np.array([[1.0, 9.0], [0.0, 9.0], [3.0, 9.0]]),
            np.array([[False, False], [True, False], [False, False]]),
            {},
            schema,
        )
        out = impute_missing(ds, 1)
        assert out.values[1, 0] == pytest.approx(2.0)

    def test_interpolation_respects_year_gaps(self):
        schema = make_schema(2, 0)
        keys = [("C1", 2010), ("C1", 2011), ("C1", 2014)]
        ds = PanelDataset(
            keys,
            np.array([[1.0, 9.0], [0.0, 9.0], [9.0, 9.0]]),
            np.array([[False, False], [True, False], [False, False]]),
            {},
            schema,
        )
        out = impute_missing(ds, 1)
        # 2011 sits a quarter of the way from 2010 to 2014
        assert out.values[1, 0] == pytest.approx(3.0)

    def test_leading_edge_takes_nearest(self):
        schema = make_schema(2, 0)
        keys = [("C1", 2010), ("C1", 2011), ("C1", 2012)]
        ds = PanelDataset(
            keys,
            np.array([[0.0, 9.0], [5.0, 9.0], [5.0, 9.0]]),
            np.array([[True, False], [False, False], [False, False]]),
            {},
            schema,
        )
        out = impute_missing(ds, 1)
        assert out.values[0, 0] == pytest.approx(5.0)

    def test_categorical_majority_vote(self):
        # three same-company neighbors coded 2, 2, 0 -> 2
        schema = make_schema(1, 1)
        keys = [("C1", y) for y in (2010, 2011, 2012, 2013)]
        values = np.array([[0.0, 0.0], [0.1, 2.0], [0.2, 2.0], [0.3, 0.0]])
        missing = np.array([[False, True], [False, False], [False, False], [False, False]])
        ds = PanelDataset(keys, values, missing, {}, schema)
        out = impute_missing(ds, 3)
        assert out.values[0, 1] == 2.0

    def test_vote_tie_takes_smallest_code(self):
        schema = make_schema(1, 1)
        keys = [("C1", y) for y in (2010, 2011, 2012)]
        values = np.array([[0.0, 0.0], [0.1, 2.0], [0.2, 1.0]])
        missing = np.array([[False, True], [False, False], [False, False]])
        ds = PanelDataset(keys, values, missing, {}, schema)
        out = impute_missing(ds, 2)
        assert out.values[0, 1] == 1.0

    def test_all_missing_row_deleted(self):
        schema = make_schema(2, 0)
        keys = [("C1", 2010), ("C1", 2011)]
        ds = PanelDataset(
            keys,
            np.zeros((2, 2)),
            np.array([[True, True], [False, False]]),
            {},
            schema,
        )
        out = impute_missing(ds, 1)
        assert out.keys == [("C1", 2011)]

    def test_no_missing_after_impute(self):
        rng = np.random.default_rng(5)
        schema = make_schema(4, 2)
        keys = [(f"C{c}", 2010 + y) for c in range(8) for y in range(6)]
        values = rng.standard_normal((48, 6))
        values[:, 4:] = rng.integers(0, 3, size=(48, 2)).astype(float)
        missing = rng.random((48, 6)) < 0.15
        ds = PanelDataset(keys, values, missing, {}, schema)
        out = impute_missing(ds, 3)
        assert not out.missing.any()
        assert np.isfinite(out.values).all()

    def test_k_validation(self):
        ds = make_panel(np.ones((3, 2)))
        with pytest.raises(ValueError):
            impute_missing(ds, 0)


class TestZScore:
    def test_column_1_2_3(self):
        ds = make_panel(np.array([[1.0], [2.0], [3.0]]))
        out, scaler = zscore_fit_apply(ds)
        assert scaler.sigma[0] == pytest.approx(0.8164965809)
        np.testing.assert_allclose(out.values[:, 0], [-1.2247448, 0.0, 1.2247448], atol=1e-6)

    def test_value_at_mean_is_zero(self):
        ds = make_panel(np.array([[4.0], [6.0]]))
        out, _ = zscore_fit_apply(ds)
        assert out.values.mean() == pytest.approx(0.0)

    def test_constant_column_all_zero(self):
        ds = make_panel(np.full((5, 2), 7.0))
        out, scaler = zscore_fit_apply(ds)
        assert (out.values == 0).all()
        assert (scaler.sigma == 0).all()

    def test_population_moments(self):
        rng = np.random.default_rng(0)
        ds = make_panel(rng.standard_normal((200, 3)) * 5 + 2)
        out, _ = zscore_fit_apply(ds)
        np.testing.assert_allclose(out.values.mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(out.values.std(axis=0), 1, atol=1e-9)

    def test_scaler_validates_sigma(self):
        with pytest.raises(ValueError):
            ZScaler(mu=np.zeros(2), sigma=np.array([1.0, -0.5]))


def panel_for_images(n_companies=4, years=range(2010, 2016), n_feat=3, label_year=2015, fraud=("C000",)):
    schema = make_schema(n_feat, 0)
    keys = [(f"C{c:03d}", y) for c in range(n_companies) for y in years]
    rng = np.random.default_rng(1)
    values = rng.standard_normal((len(keys), n_feat))
    labels = {(c, label_year): FraudLabel(True, frozenset({"P2501"})) for c in fraud}
    return PanelDataset(keys, values, np.zeros((len(keys), n_feat), dtype=bool), labels, schema)


class TestToImages:
    def test_expost_window_includes_target(self):
        ds = panel_for_images()
        s = to_images(ds, "ExPost", 2015, min_years=6)
        assert s.pixels.shape == (4, 6, 3)
        assert s.labels.tolist() == [1, 0, 0, 0]

    def test_exante_window_excludes_target(self):
        ds = panel_for_images()
        s = to_images(ds, "ExAnte", 2015, min_years=5)
        assert s.pixels.shape == (4, 5, 3)

    def test_pixel_values_match_rows(self):
        ds = panel_for_images()
        s = to_images(ds, "ExPost", 2015, min_years=6)
        for t, year in enumerate(range(2010, 2016)):
            np.testing.assert_array_equal(
                s.pixels[0, t], ds.values[ds.row_index("C000", year)]
            )

    def test_company_below_min_years_excluded(self):
        ds = panel_for_images()
        # delete one year of C001 (keeps 5 observed years)
        keep = [i for i, k in enumerate(ds.keys) if k != ("C001", 2012)]
        ds2 = ds.replace(
            keys=[ds.keys[i] for i in keep],
            values=ds.values[keep],
            missing=ds.missing[keep],
        )
        s = to_images(ds2, "ExPost", 2015, min_years=6)
        assert "C001" not in s.companies
        assert s.n_images == 3

    def test_missing_year_zero_filled(self):
        ds = panel_for_images()
        keep = [i for i, k in enumerate(ds.keys) if k != ("C002", 2011)]
        ds2 = ds.replace(
            keys=[ds.keys[i] for i in keep],
            values=ds.values[keep],
            missing=ds.missing[keep],
        )
        s = to_images(ds2, "ExPost", 2015, min_years=5)
        idx = s.companies.index("C002")
        assert (s.pixels[idx, 1] == 0).all()

    def test_company_without_target_row_excluded(self):
        ds = panel_for_images()
        keep = [i for i, k in enumerate(ds.keys) if k != ("C003", 2015)]
        ds2 = ds.replace(
            keys=[ds.keys[i] for i in keep],
            values=ds.values[keep],
            missing=ds.missing[keep],
        )
        s = to_images(ds2, "ExPost", 2015, min_years=5)
        assert "C003" not in s.companies

    def test_no_qualifying_companies_rejected(self):
        ds = panel_for_images()
        with pytest.raises(Exception):
            to_images(ds, "ExPost", 2015, min_years=10)

    def test_published_scale_shapes(self):
        # 1436 companies over 2010-2022 with 283 features: the ex-ante
        # transform must give (1436, 12, 283) and ex-post (1436, 13, 283)
        from fraudlens.synth import SynthConfig, generate_synthetic

        cfg = SynthConfig(missing_rate=0.0, seed=1)
        ds, _, _ = generate_synthetic(cfg)
        ds, _ = zscore_fit_apply(ds)
        exante = to_images(ds, "ExAnte", 2022, min_years=6)
        assert exante.pixels.shape == (1436, 12, 283)
        expost = to_images(ds, "ExPost", 2022, min_years=6)
        assert expost.pixels.shape == (1436, 13, 283)


def image_set(n0=12, n1=4, t=3, f=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n0 + n1
    return ImageSet(
        [f"C{i:03d}" for i in range(n)],
        rng.standard_normal((n, t, f)),
        np.array([0] * n0 + [1] * n1),
        "ExAnte",
        2020,
        make_schema(f, 0),
    )


class TestSmote:
    def test_counts_equalize_exactly(self):
        s = image_set(n0=14, n1=5)
        out = smote_balance(s, k=3, seed=1)
        assert np.bincount(out.labels).tolist() == [14, 14]
        # originals preserved in place
        np.testing.assert_array_equal(out.pixels[: s.n_images], s.pixels)

    def test_paper_scale_counts(self):
        s = image_set(n0=1367, n1=69, t=2, f=3, seed=2)
        out = smote_balance(s, k=5, seed=2)
        assert np.bincount(out.labels).tolist() == [1367, 1367]

    def test_synthetics_inside_segment_box(self):
        s = image_set(n0=30, n1=8, seed=3)
        out = smote_balance(s, k=3, seed=3)
        minority = s.pixels[s.labels == 1].reshape(8, -1)
        for i in range(s.n_images, out.n_images):
            v = out.pixels[i].reshape(-1)
            inside = False
            for a in range(8):
                for b in range(8):
                    lo = np.minimum(minority[a], minority[b])
                    hi = np.maximum(minority[a], minority[b])
                    if ((v >= lo - 1e-12) & (v <= hi + 1e-12)).all():
                        inside = True
            assert inside

    def test_deterministic(self):
        s = image_set()
        a = smote_balance(s, k=3, seed=9)
        b = smote_balance(s, k=3, seed=9)
        assert np.array_equal(a.pixels, b.pixels)
        assert a.companies == b.companies

    def test_minority_not_larger_than_k_rejected(self):
        s = image_set(n0=10, n1=3)
        with pytest.raises(ValueError):
            smote_balance(s, k=3, seed=0)

    def test_single_class_rejected(self):
        s = image_set(n0=5, n1=0)
        with pytest.raises(ValueError):
            smote_balance(s, k=2, seed=0)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_segment_property_randomized(self, seed):
        s = image_set(n0=9, n1=6, t=2, f=2, seed=seed % 100)
        out = smote_balance(s, k=2, seed=seed)
        minority = s.pixels[s.labels == 1].reshape(6, -1)
        lo = minority.min(axis=0) - 1e-12
        hi = minority.max(axis=0) + 1e-12
        syn = out.pixels[s.n_images :].reshape(out.n_images - s.n_images, -1)
        assert ((syn >= lo) & (syn <= hi)).all()


class TestImageSetIO:
    def test_roundtrip(self, tmp_path):
        s = image_set(n0=3, n1=2)
        save_imageset(s, tmp_path / "imgs")
        loaded = load_imageset(tmp_path / "imgs")
        assert loaded.companies == s.companies
        assert loaded.mode == s.mode and loaded.target_year == s.target_year
        np.testing.assert_array_equal(loaded.labels, s.labels)
        np.testing.assert_array_equal(
            loaded.pixels, s.pixels.astype(np.float32).astype(np.float64)
        )
        assert loaded.schema.ordered_feature_ids() == s.schema.ordered_feature_ids()

    def test_pipeline_determinism_bit_identical(self):
        from fraudlens.synth import SynthConfig, generate_synthetic

        results = []
        for _ in range(2):
            cfg = SynthConfig(
                n_companies=40, n_years=8, f_fin=10, f_esg=3, f_ic=3,
                fraud_rate=0.2, gray_rate=0.05, missing_rate=0.05, seed=123,
            )
            ds, _, _ = generate_synthetic(cfg)
            ds = drop_sparse_features(ds, 0.30)
            ds = impute_missing(ds, 3)
            ds, _ = zscore_fit_apply(ds)
            s = to_images(ds, "ExAnte", cfg.final_year, 4)
            s = smote_balance(s, k=3, seed=7)
            results.append(s)
        a, b = results
        assert a.companies == b.companies
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.labels, b.labels)
