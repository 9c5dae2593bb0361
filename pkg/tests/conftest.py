import json
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panel_processor import EmploymentPanel
from rca_network import BipartiteNetwork
from taxonomy import CountryGroups

# Two EU15 and two CEE countries, sectors from four different sector groups
FIXTURE_COUNTRIES = ["AUT", "CZE", "DEU", "POL"]
FIXTURE_SECTORS = ["D01T03", "D24T25", "D26T28", "D55T56"]


def panel_frame(employment: np.ndarray, years: Sequence[int], countries: Sequence[str] = FIXTURE_COUNTRIES,
                sectors: Sequence[str] = FIXTURE_SECTORS, **measures: np.ndarray) -> pd.DataFrame:
    """Long-form records from (C, S, T) arrays."""
    records = []
    for c, country in enumerate(countries):
        for s, sector in enumerate(sectors):
            for t, year in enumerate(years):
                row = {"country": country, "sector": sector, "year": int(year),
                       "employment": float(employment[c, s, t])}
                for name, values in measures.items():
                    row[name] = float(values[c, s, t])
                records.append(row)
    return pd.DataFrame(records)


def make_panel(employment: np.ndarray, years: Sequence[int], countries: Sequence[str] = FIXTURE_COUNTRIES,
               sectors: Sequence[str] = FIXTURE_SECTORS, **measures: np.ndarray) -> EmploymentPanel:
    return EmploymentPanel.from_frame(panel_frame(employment, years, countries, sectors, **measures))


def make_network(matrix, countries: Optional[Sequence[str]] = None, sectors: Optional[Sequence[str]] = None,
                 year: int = 2000) -> BipartiteNetwork:
    matrix = np.asarray(matrix, dtype=np.int64)
    C, S = matrix.shape
    countries = tuple(countries) if countries is not None else tuple(f"K{i:02d}" for i in range(C))
    sectors = tuple(sectors) if sectors is not None else tuple(f"S{j:02d}" for j in range(S))
    return BipartiteNetwork(year, countries, sectors, matrix)


def alternating_groups(countries: Sequence[str]) -> CountryGroups:
    """Label countries EU15, CEE, EU15, ... in order."""
    return CountryGroups({c: ("EU15" if i % 2 == 0 else "CEE") for i, c in enumerate(countries)})


def binary_matrices(max_rows: int = 8, max_cols: int = 10, min_rows: int = 1, min_cols: int = 1):
    """Hypothesis strategy for 0/1 integer matrices."""
    shapes = st.tuples(st.integers(min_rows, max_rows), st.integers(min_cols, max_cols))
    return shapes.flatmap(lambda shape: arrays(np.int64, shape, elements=st.integers(0, 1)))


def write_config(directory: Path, panel_path: str = "panel.csv", **values) -> Path:
    data: Dict = {
        "panel_path": panel_path,
        "aggregate_sectors": False,
        "panel_years": [2000, 2003],
        "network_years": [2000, 2003],
        "base_year": 2000,
        "samples": 200,
        "seed": 7,
    }
    data.update(values)
    path = directory / "config.json"
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_years():
    return [2000, 2001, 2002, 2003]


@pytest.fixture
def random_employment(rng, fixture_years):
    return rng.integers(1, 500, size=(len(FIXTURE_COUNTRIES), len(FIXTURE_SECTORS), len(fixture_years))).astype(float)


@pytest.fixture
def panel_dir(tmp_path, random_employment, fixture_years, rng):
    """A directory holding panel.csv and config.json for the CLI."""
    va = rng.uniform(0.01, 0.2, size=random_employment.shape)
    gfc = rng.uniform(-5.0, 50.0, size=random_employment.shape)
    frame = panel_frame(random_employment, fixture_years, value_added_pc=va, gfc=gfc)
    frame.to_csv(tmp_path / "panel.csv", index=False)
    write_config(tmp_path)
    return tmp_path
