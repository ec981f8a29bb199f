import numpy as np
import pytest

from superpanel import cvae, metrics, oracle, panel, sampling
from superpanel import schema as sm

@pytest.fixture(scope="module")
def drift_setup():
    spec = oracle.canned_spec("drift-split")
    records = oracle.generate_dataset(spec, 800, seed=61)
    encoded = sm.encode(records, spec.schema)
    idx_tr, idx_va = sm.split_indices(len(records), 0.8, seed=62)
    config = cvae.CvaeConfig(hidden_layers=(32, 16), latent_dim=3, beta=5.0,
                             batch_size=64, epochs=15, seed=63)
    model = cvae.train(encoded.take(idx_tr), config, encoded.take(idx_va))
    base_records = [r for r in records if r.values[0] == 0][:60]
    profiles = sampling.profiles_from_records(base_records, spec.schema)
    return spec, records, model, profiles


@pytest.fixture(scope="module")
def small_cube(drift_setup):
    spec, records, model, profiles = drift_setup
    return panel.build_panel(model, profiles, years=[0, 2, 4], external_by_year=None,
                             draws_per_cell=200, seed=64)


class TestBuildPanel:
    def test_every_cell_populated_and_normalized(self, small_cube):
        for s in small_cube.subsets:
            freqs = small_cube.subset_freqs[s]
            assert freqs.shape[:2] == (60, 3)
            assert np.allclose(freqs.sum(axis=2), 1.0)
        for name, freqs in small_cube.attr_freqs.items():
            assert np.allclose(freqs.sum(axis=2), 1.0)

    def test_determinism(self, drift_setup, small_cube):
        spec, records, model, profiles = drift_setup
        again = panel.build_panel(model, profiles, years=[0, 2, 4], external_by_year=None,
                                  draws_per_cell=200, seed=64)
        for s in small_cube.subsets:
            assert np.array_equal(small_cube.subset_freqs[s], again.subset_freqs[s])

    def test_parallel_jobs_identical(self, drift_setup, small_cube):
        spec, records, model, profiles = drift_setup
        par = panel.build_panel(model, profiles, years=[0, 2, 4], external_by_year=None,
                                draws_per_cell=200, seed=64, jobs=2)
        for s in small_cube.subsets:
            assert np.array_equal(small_cube.subset_freqs[s], par.subset_freqs[s])

    def test_draw_floor_enforced(self, drift_setup):
        spec, records, model, profiles = drift_setup
        with pytest.raises(panel.PanelError, match="floor"):
            panel.build_panel(model, profiles, years=[0], external_by_year=None,
                              draws_per_cell=1, seed=65)

    def test_empty_population_rejected(self, drift_setup):
        spec, records, model, profiles = drift_setup
        with pytest.raises(panel.PanelError, match="empty"):
            panel.build_panel(model, [], years=[0], external_by_year=None,
                              draws_per_cell=50, seed=66)

    def test_missing_externals_rejected(self, drift_setup):
        spec, records, model, profiles = drift_setup
        ext_schema = sm.Schema(attributes=(
            sm.AttributeSpec("year", "time", "categorical", cardinality=3),
            sm.AttributeSpec("access", "external", "categorical", cardinality=2),
            sm.AttributeSpec("p", "preference", "categorical", cardinality=2),
        ))
        prof = sampling.ConditionProfile(id="a", values={"year": 0, "access": 1})
        with pytest.raises(panel.PanelError, match="external"):
            panel._profile_for_year(prof, ext_schema, 1, external_by_year=None)
        table = {1: {"a": {"access": 0}}}
        moved = panel._profile_for_year(prof, ext_schema, 1, external_by_year=table)
        assert moved.values["access"] == 0 and moved.values["year"] == 1

    def test_single_individual_single_year_degenerate_draw(self, drift_setup):
        spec, records, model, profiles = drift_setup
        cube = panel.build_panel(model, profiles[:1], years=[0], external_by_year=None,
                                 draws_per_cell=panel.MIN_DRAWS_PER_CELL, seed=67)
        assert cube.subset_freqs[cube.subsets[0]].shape[0] == 1


class TestAggregateTrend:
    def test_mixture_consistency_exact(self, small_cube):
        """Population trend equals the mean of per-individual estimates."""
        series = panel.aggregate_trend(small_cube, "p_mode")
        manual = small_cube.attr_freqs["p_mode"].mean(axis=0)
        assert np.array_equal(series.category_probs, manual)

    def test_condition_filtering(self, small_cube):
        drifting = panel.aggregate_trend(small_cube, "p_mode", {"group": 1})
        static = panel.aggregate_trend(small_cube, "p_mode", {"group": 0})
        assert drifting.n_individuals + static.n_individuals == 60

    def test_callable_condition(self, small_cube):
        series = panel.aggregate_trend(small_cube, "p_mode", lambda p: p.values["group"] == 1)
        assert series.n_individuals > 0

    def test_no_match_rejected(self, small_cube):
        with pytest.raises(panel.PanelError, match="no individuals"):
            panel.aggregate_trend(small_cube, "p_mode", {"group": 99})

    def test_non_preference_rejected(self, small_cube):
        with pytest.raises(panel.PanelError, match="not a preference"):
            panel.aggregate_trend(small_cube, "group")

    def test_numeric_attribute_mean_std(self):
        """Binned numeric attributes aggregate through bin midpoints."""
        schema = sm.Schema(attributes=(
            sm.AttributeSpec("year", "time", "categorical", cardinality=1),
            sm.AttributeSpec("g", "socio", "categorical", cardinality=1),
            sm.AttributeSpec("dist", "preference", "numerical", bin_edges=(0.0, 10.0, 30.0)),
        ))
        profiles = (sampling.ConditionProfile("a", {"year": 0, "g": 0}),)
        freqs = np.array([[[0.25, 0.75]]])  # midpoints 5 and 20
        cube = panel.PanelCube(
            individuals=profiles, years=(0,), schema=schema, subsets=(),
            subset_freqs={}, attr_freqs={"dist": freqs}, external_by_year=None,
            draws_per_cell=100, seed=0,
        )
        series = panel.aggregate_trend(cube, "dist")
        expected_mean = 0.25 * 5 + 0.75 * 20
        expected_var = 0.25 * 25 + 0.75 * 400 - expected_mean ** 2
        assert series.mean[0] == pytest.approx(expected_mean)
        assert series.std[0] == pytest.approx(np.sqrt(expected_var))

    def test_fit_slope_exact_line(self):
        assert panel.fit_slope([0, 1, 2, 3], [1.0, 1.1, 1.2, 1.3]) == pytest.approx(0.1)


class TestClassifyMovers:
    def test_decile_sizes(self, small_cube):
        report = panel.classify_movers(small_cube, 0, 4)
        assert len(report.fast_ids) == 6 == len(report.slow_ids)
        assert set(report.fast_ids).isdisjoint(report.slow_ids)

    def test_distance_zero_when_years_equal(self, small_cube):
        report = panel.classify_movers(small_cube, 2, 2)
        assert np.allclose(report.distances, 0.0)
        # deciles still filled deterministically by id tie-break
        assert len(report.fast_ids) == 6 == len(report.slow_ids)
        again = panel.classify_movers(small_cube, 2, 2)
        assert report.fast_ids == again.fast_ids and report.slow_ids == again.slow_ids

    def test_distance_symmetric_in_years(self, small_cube):
        a = panel.classify_movers(small_cube, 0, 4)
        b = panel.classify_movers(small_cube, 4, 0)
        assert np.allclose(a.distances, b.distances)

    def test_distance_matches_metric_srmse(self, small_cube):
        """Vectorized distances agree with the histogram metric pairwise."""
        report = panel.classify_movers(small_cube, 0, 4)
        subset = report.subset
        for i in (0, 7, 31):
            h0 = small_cube.cell_histogram(subset, i, 0)
            h4 = small_cube.cell_histogram(subset, i, 2)  # year 4 is index 2
            assert report.distances[i] == pytest.approx(metrics.srmse(h4, h0), abs=1e-12)

    def test_fast_distances_dominate_slow(self, small_cube):
        report = panel.classify_movers(small_cube, 0, 4)
        by_id = dict(zip(report.ids, report.distances))
        assert min(by_id[i] for i in report.fast_ids) >= max(by_id[i] for i in report.slow_ids)

    def test_missing_year_rejected(self, small_cube):
        with pytest.raises(panel.PanelError, match="years"):
            panel.classify_movers(small_cube, 0, 3)


class TestGroupMarginals:
    def test_whole_population_equals_population_marginals(self, drift_setup, small_cube):
        spec, records, model, profiles = drift_setup
        out = panel.group_marginals(profiles, [p.id for p in profiles], spec.schema)
        assert set(out) == {"group", "segment"}
        base = [r for r in records if r.values[0] == 0][:60]
        expected = metrics.marginals(base, "segment", spec.schema)
        assert np.allclose(out["segment"]["frequencies"], expected)

    def test_frequencies_sum_to_one_and_mode_flagged(self, drift_setup):
        spec, records, model, profiles = drift_setup
        out = panel.group_marginals(profiles, [profiles[0].id, profiles[1].id], spec.schema)
        for name, table in out.items():
            assert table["frequencies"].sum() == pytest.approx(1.0)
            assert table["mode"] == int(np.argmax(table["frequencies"]))

    def test_empty_group_rejected(self, drift_setup):
        spec, records, model, profiles = drift_setup
        with pytest.raises(panel.PanelError, match="empty"):
            panel.group_marginals(profiles, ["nope"], spec.schema)


class TestBootstrap:
    def test_smoke_and_shapes(self, drift_setup):
        spec, records, model, profiles = drift_setup
        config = cvae.CvaeConfig(hidden_layers=(16,), latent_dim=2, beta=1.0,
                                 batch_size=64, epochs=3, seed=0)
        stats = [panel.StatisticSpec(attribute="p_mode", category=0, per_year=True)]
        summary = panel.bootstrap(records[:1500], spec.schema, config, n_replicates=3,
                                  statistics=stats, seed=71, samples_per_replicate=200)
        assert summary.survivors == 3
        sources = {row[1] for row in summary.rows}
        assert sources == {"model", "data"}
        for _, _, year, mean, std in summary.rows:
            assert np.isfinite(mean) and np.isfinite(std) and std >= 0

    def test_constant_statistic_zero_std(self, drift_setup):
        spec, records, model, profiles = drift_setup
        config = cvae.CvaeConfig(hidden_layers=(8,), latent_dim=2, beta=1.0,
                                 batch_size=64, epochs=2, seed=0)
        consts = sm.Schema(attributes=(
            sm.AttributeSpec("year", "time", "categorical", cardinality=1),
            sm.AttributeSpec("g", "socio", "categorical", cardinality=2),
            sm.AttributeSpec("p", "preference", "categorical", cardinality=1),
        ))
        recs = [sm.Record((0, i % 2, 0)) for i in range(300)]
        stats = [panel.StatisticSpec(attribute="p", category=0, per_year=False)]
        summary = panel.bootstrap(recs, consts, config, n_replicates=3,
                                  statistics=stats, seed=72, samples_per_replicate=100)
        data_rows = [r for r in summary.rows if r[1] == "data"]
        assert all(r[4] == 0.0 for r in data_rows)  # frequency of the only category

    def test_replicate_floor(self, drift_setup):
        spec, records, model, profiles = drift_setup
        config = cvae.CvaeConfig(epochs=1, seed=0)
        with pytest.raises(panel.PanelError, match="replicates"):
            panel.bootstrap(records[:100], spec.schema, config, n_replicates=1,
                            statistics=[panel.StatisticSpec(attribute="p_mode", category=0)],
                            seed=73)
