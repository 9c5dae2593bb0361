import numpy as np
import pandas as pd
import pytest

from conftest import alternating_groups, make_network
from bicm_model import BicmModel, BicmSolver, analytic_motif_mean
from exceptions import ConfigError, EnumerationLimitError, PanelDataError
from motif_counter import count_motifs, motif_total_array
from motif_significance import (
    CHUNK_SIZE,
    ZSCORE_COLUMNS,
    _results,
    exact_ensemble_stats,
    restricted_zscores,
    sample,
    sample_matrix,
    sample_stack,
    zscore_frame,
    zscores,
)
from taxonomy import CountryGroups, SectorTaxonomy

# d = u = (2, 2, 2), so every link has probability 2/3
ORACLE_MATRIX = [[1, 1, 0], [1, 0, 1], [0, 1, 1]]


def link_count(matrices):
    return matrices.sum(axis=(-2, -1))


def oracle_network():
    return make_network(ORACLE_MATRIX, countries=["AUT", "DEU", "POL"])


class TestSampling:
    def test_zero_probabilities_give_empty_networks(self):
        model = BicmModel.from_probabilities(np.zeros((3, 4)))
        assert all(net.n_links == 0 for net in sample(model, 20, seed=1))

    def test_unit_probabilities_give_complete_networks(self):
        model = BicmModel.from_probabilities(np.ones((3, 4)))
        assert all(net.n_links == 12 for net in sample(model, 20, seed=1))

    def test_cell_frequencies_match_probability(self):
        n = 10_000
        stack = sample_stack(BicmModel.from_probabilities(np.full((3, 3), 0.5)), 3, 0, n)
        frequency = stack.mean(axis=0)
        assert np.abs(frequency - 0.5).max() <= 4 * np.sqrt(0.25 / n)

    def test_sample_depends_only_on_seed_and_index(self):
        model = BicmModel.from_probabilities(np.random.default_rng(0).uniform(size=(4, 5)))
        stack = sample_stack(model, 11, 0, 30)
        np.testing.assert_array_equal(sample_matrix(model, 11, 17), stack[17])
        np.testing.assert_array_equal(sample_stack(model, 11, 10, 20), stack[10:20])
        listed = [net.matrix for net in sample(model, 30, seed=11)]
        np.testing.assert_array_equal(np.stack(listed), stack)

    def test_sampled_degrees_match_constraints(self):
        matrix = np.random.default_rng(5).integers(0, 2, size=(6, 8))
        model = BicmSolver().fit_network(make_network(matrix))
        n = 5_000
        stack = sample_stack(model, 2, 0, n)
        p = model.probabilities
        for axis, expected in ((2, matrix.sum(axis=1)), (1, matrix.sum(axis=0))):
            mean_degree = stack.sum(axis=axis).mean(axis=0)
            se = np.sqrt((p * (1 - p)).sum(axis=axis - 1) / n)
            assert (np.abs(mean_degree - expected) <= 4 * se + 1e-12).all()

    def test_sample_count_must_be_positive(self):
        with pytest.raises(ConfigError):
            list(sample(BicmModel.from_probabilities(np.zeros((2, 2))), 0, seed=1))


class TestExactEnumeration:
    def test_deterministic_model_has_zero_variance(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        stats = exact_ensemble_stats(BicmModel.from_probabilities(p), link_count)
        assert stats.mean == 2.0 and stats.std == 0.0

    def test_fair_coin_link_count(self):
        stats = exact_ensemble_stats(BicmModel.from_probabilities(np.full((2, 2), 0.5)), link_count, "links")
        assert stats.n_samples == 16
        assert stats.mean == pytest.approx(2.0, abs=1e-12)
        assert stats.std == pytest.approx(1.0, abs=1e-12)
        assert stats.analytic_mean is None

    def test_motif_mean_equals_closed_form(self, rng):
        model = BicmModel.from_probabilities(rng.uniform(size=(3, 3)))
        stats = exact_ensemble_stats(model, motif_total_array, "motif_total")
        assert stats.mean == pytest.approx(analytic_motif_mean(model), abs=1e-10)
        assert stats.analytic_mean == pytest.approx(stats.mean, abs=1e-10)

    def test_oracle_network_moments(self):
        model = BicmSolver().fit_network(oracle_network())
        np.testing.assert_allclose(model.probabilities, 2 / 3, atol=1e-8)
        stats = exact_ensemble_stats(model, motif_total_array, "motif_total")
        assert stats.mean == pytest.approx(4.0, abs=1e-6)
        assert stats.std == pytest.approx(2.0, abs=1e-6)

    def test_bound_is_enforced(self):
        with pytest.raises(EnumerationLimitError):
            exact_ensemble_stats(BicmModel.from_probabilities(np.full((3, 7), 0.5)), link_count)


class TestZScores:
    def test_sampled_z_agrees_with_exact_z(self):
        net = oracle_network()
        model = BicmSolver().fit_network(net)
        n = 10_000
        frame = zscore_frame(zscores(net, model, CountryGroups.default(), n=n, seed=42))
        overall = frame[frame["level"] == "network"].iloc[0]
        assert overall["observed"] == 3
        # exact: (3 - 4) / 2; standard error of the sampled z is about 1/sqrt(n)
        assert overall["z"] == pytest.approx(-0.5, abs=4 / np.sqrt(n))

    def test_sampled_moments_agree_with_enumeration(self):
        rng = np.random.default_rng(2024)
        n = 10_000
        for k in range(20):
            model = BicmModel.from_probabilities(rng.uniform(0.05, 0.95, size=(3, 4)))
            exact = exact_ensemble_stats(model, motif_total_array, "motif_total")
            central4 = exact_ensemble_stats(model, lambda m: (motif_total_array(m) - exact.mean) ** 4).mean
            values = motif_total_array(sample_stack(model, k, 0, n)).astype(float)

            mean_se = exact.std / np.sqrt(n)
            sd_se = np.sqrt(max(central4 - exact.std ** 4, 0.0) / n) / (2 * exact.std)
            assert abs(values.mean() - exact.mean) <= 4 * mean_se
            assert abs(values.std() - exact.std) <= 4 * sd_se

    def test_observed_equal_to_mean_scores_zero(self):
        net = make_network([[1]])
        results = _results(net, np.array(["EU15"], dtype=object), ("network", "overall", None, None),
                           np.array(4), np.array(4.0), np.array(1.5), "full")
        assert results[0].z == 0.0
        assert not results[0].degenerate

    def test_deterministic_model_flags_every_result(self):
        net = make_network(np.ones((4, 3)), countries=["AUT", "CZE", "DEU", "POL"])
        model = BicmSolver().fit_network(net)
        results = zscores(net, model, CountryGroups.default(), n=10, seed=0)
        assert results
        assert all(r.degenerate and r.sd == 0 and np.isnan(r.z) for r in results)

    def test_result_layout(self):
        net = make_network(np.random.default_rng(3).integers(0, 2, size=(4, 4)),
                           countries=["AUT", "CZE", "DEU", "POL"],
                           sectors=["D01T03", "D05T09", "D24T25", "D55T56"])
        net = net.labelled(CountryGroups.default(), SectorTaxonomy.default())
        model = BicmSolver().fit_network(net)
        frame = zscore_frame(zscores(net, model, CountryGroups.default(), n=50, seed=1))
        assert list(frame.columns) == ZSCORE_COLUMNS
        counts = frame.groupby("level").size()
        assert counts["network"] == 1
        assert counts["group"] == 3
        assert counts["node"] == 3 * 16
        # three sector groups present, each with overall, two internal and external rows
        assert counts["sector_group"] == 3 * 4
        node = frame[frame["level"] == "node"]
        assert set(node["group"]) == {"CEE", "EU15"}
        assert set(node["sector_group"]) == {"Primary production", "Basic manufacturing", "Services"}

    def test_observed_values_match_motif_counts(self):
        matrix = np.random.default_rng(8).integers(0, 2, size=(4, 5))
        net = make_network(matrix)
        groups = alternating_groups(net.countries)
        counts = count_motifs(net, groups)
        frame = zscore_frame(zscores(net, BicmSolver().fit_network(net), groups, n=20, seed=0))
        internal = frame[(frame["level"] == "group") & (frame["scope"] == "internal")]
        assert dict(zip(internal["group"], internal["observed"])) == counts.internal
        node = frame[(frame["level"] == "node") & (frame["scope"] == "overall")]
        np.testing.assert_array_equal(node["observed"].to_numpy().reshape(4, 5), counts.node)

    def test_same_seed_is_bit_identical_across_threads(self):
        matrix = np.random.default_rng(9).integers(0, 2, size=(5, 6))
        net = make_network(matrix)
        model = BicmSolver().fit_network(net)
        groups = alternating_groups(net.countries)
        n = 2 * CHUNK_SIZE + 17
        serial = zscore_frame(zscores(net, model, groups, n=n, seed=5, threads=1))
        parallel = zscore_frame(zscores(net, model, groups, n=n, seed=5, threads=3))
        pd.testing.assert_frame_equal(serial, parallel)

    def test_different_seeds_change_the_ensemble(self):
        matrix = np.random.default_rng(9).integers(0, 2, size=(5, 6))
        net = make_network(matrix)
        model = BicmSolver().fit_network(net)
        groups = alternating_groups(net.countries)
        first = zscore_frame(zscores(net, model, groups, n=500, seed=1, include_nodes=False))
        second = zscore_frame(zscores(net, model, groups, n=500, seed=2, include_nodes=False))
        assert first.loc[0, "mean"] != second.loc[0, "mean"]

    def test_too_few_samples(self):
        net = oracle_network()
        with pytest.raises(ConfigError):
            zscores(net, BicmSolver().fit_network(net), CountryGroups.default(), n=1)

    def test_shape_mismatch(self):
        with pytest.raises(PanelDataError):
            zscores(oracle_network(), BicmModel.from_probabilities(np.full((2, 2), 0.5)),
                    CountryGroups.default(), n=10)


def test_restricted_null_refits_on_group_rows():
    matrix = np.random.default_rng(4).integers(0, 2, size=(6, 5))
    countries = ["AUT", "CZE", "DEU", "FRA", "ITA", "POL"]
    net = make_network(matrix, countries)
    results, model = restricted_zscores(net, CountryGroups.default(), "EU15", BicmSolver(), n=100, seed=3)
    assert model.countries == ("AUT", "DEU", "FRA", "ITA")
    frame = zscore_frame(results)
    assert set(frame["null_model"]) == {"restricted:EU15"}
    assert "node" not in set(frame["level"])
    overall = frame[frame["level"] == "network"].iloc[0]
    eu15_rows = matrix[[0, 2, 3, 4]]
    u = eu15_rows.sum(axis=0)
    assert overall["observed"] == (u * (u - 1) // 2).sum()


def test_restricted_null_without_members():
    net = make_network([[1, 0], [0, 1]], countries=["AUT", "DEU"])
    with pytest.raises(PanelDataError):
        restricted_zscores(net, CountryGroups.default(), "CEE", BicmSolver(), n=10)
