import numpy as np
import pandas as pd
import pytest

from conftest import FIXTURE_COUNTRIES, FIXTURE_SECTORS, make_network, make_panel
from figure_data import FigureDataBuilder
from motif_significance import ZSCORE_COLUMNS


def zscore_rows(*rows):
    records = []
    for row in rows:
        record = dict.fromkeys(ZSCORE_COLUMNS)
        record.update({"null_model": "full", "observed": 1.0, "mean": 1.0, "sd": 1.0, "degenerate": False})
        record.update(row)
        records.append(record)
    return pd.DataFrame(records, columns=ZSCORE_COLUMNS)


@pytest.fixture
def builder():
    return FigureDataBuilder()


def test_base_year_correlations_skip_missing_measures(builder, random_employment, fixture_years):
    panel = make_panel(random_employment, fixture_years)
    frame = builder.create_base_year_correlations(panel, 2000)
    assert set(frame["measure"]) == {"employment", "motif_count"}
    assert set(frame["group"]) == {"all", "EU15", "CEE"}
    base = frame[(frame["year"] == 2000) & (frame["measure"] == "employment") & (frame["group"] == "all")]
    assert base["coefficient"].iloc[0] == pytest.approx(1.0)
    assert base["n_pairs"].iloc[0] == 16


def test_distribution_summary(builder):
    employment = np.arange(1, 17, dtype=float).reshape(4, 4, 1)
    frame = builder.create_distribution_summary(make_panel(employment, [2000]))
    assert list(frame.columns) == ["year", "group", "measure", "count", "mean", "min", "q25", "median", "q75",
                                   "max"]
    assert frame["group"].tolist() == ["CEE", "EU15"]
    # CZE and POL are the second and fourth rows
    cee = frame.iloc[0]
    assert cee["count"] == 8
    assert cee["min"] == 5.0 and cee["max"] == 16.0
    assert cee["mean"] == pytest.approx(np.mean([5, 6, 7, 8, 13, 14, 15, 16]))
    assert cee["median"] == pytest.approx(10.5)


def test_distribution_summary_of_empty_group(builder):
    employment = np.full((4, 4, 1), np.nan)
    employment[0] = 1.0
    frame = builder.create_distribution_summary(make_panel(employment, [2000]))
    cee = frame[frame["group"] == "CEE"].iloc[0]
    assert cee["count"] == 0 and np.isnan(cee["mean"])


def test_cee_link_share(builder):
    early = make_network([[1, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]], FIXTURE_COUNTRIES,
                         FIXTURE_SECTORS, year=2001)
    late = make_network([[1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 1, 1]], FIXTURE_COUNTRIES,
                        FIXTURE_SECTORS, year=2002)
    empty = make_network(np.zeros((4, 4)), FIXTURE_COUNTRIES, FIXTURE_SECTORS, year=2000)
    frame = builder.create_cee_link_share([late, empty, early])
    assert frame["year"].tolist() == [2000, 2001, 2002]
    assert np.isnan(frame["cee_share"].iloc[0])
    assert frame["cee_share"].iloc[1] == pytest.approx(1 / 4)
    assert frame["cee_share"].iloc[2] == pytest.approx(4 / 5)


def test_zscore_series_names_and_significance(builder):
    z = zscore_rows(
        {"year": 2001, "level": "network", "scope": "overall", "z": 2.5},
        {"year": 2000, "level": "network", "scope": "overall", "z": -1.0},
        {"year": 2000, "level": "group", "scope": "internal", "group": "CEE", "z": -3.0},
        {"year": 2000, "level": "group", "scope": "external", "z": np.nan, "degenerate": True},
        {"year": 2000, "level": "node", "scope": "overall", "country": "AUT", "sector": "D01T03", "z": 9.0},
    )
    frame = builder.create_zscore_series(z)
    assert frame["series"].tolist() == ["External", "Internal CEE", "Overall", "Overall"]
    assert frame["year"].tolist() == [2000, 2000, 2000, 2001]
    assert frame["significant"].tolist() == [False, True, False, True]


def test_node_zscores_wide_form(builder):
    common = {"year": 2000, "level": "node", "country": "AUT", "group": "EU15", "sector": "D01T03",
              "sector_group": "Primary production"}
    z = zscore_rows(
        {**common, "scope": "overall", "z": 1.0},
        {**common, "scope": "internal", "z": 0.5},
        {**common, "scope": "external", "z": -0.5},
        {**common, "scope": "overall", "z": 7.0, "null_model": "restricted:EU15"},
    )
    frame = builder.create_node_zscores(z)
    assert len(frame) == 1
    row = frame.iloc[0]
    assert (row["z_overall"], row["z_internal"], row["z_external"]) == (1.0, 0.5, -0.5)
    assert row["sector_group"] == "Primary production"


def test_node_zscores_without_nodes(builder):
    frame = builder.create_node_zscores(zscore_rows({"year": 2000, "level": "network", "scope": "overall"}))
    assert frame.empty
    assert "z_external" in frame.columns


def test_sector_group_series(builder):
    z = zscore_rows(
        {"year": 2000, "level": "sector_group", "scope": "overall", "sector_group": "Services", "z": 1.0},
        {"year": 2000, "level": "sector_group", "scope": "internal", "group": "EU15", "sector_group": "Services",
         "z": 0.0},
        {"year": 2000, "level": "network", "scope": "overall", "z": 4.0},
    )
    frame = builder.create_sector_group_series(z)
    assert frame["series"].tolist() == ["Internal EU15", "Overall"]
    assert set(frame["sector_group"]) == {"Services"}
