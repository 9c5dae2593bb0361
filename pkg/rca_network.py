"""Balassa RCA on employment, yearly bipartite networks and their projections."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import PanelDataError
from panel_processor import EmploymentPanel
from taxonomy import CountryGroups, SectorTaxonomy
from utils import write_csv

logger = logging.getLogger(__name__)

CORRELATION_MEASURES = ("employment", "ulc", "value_added_pc", "motif_count")
GROUP_FILTERS = ("all", "EU15", "CEE")
MIN_PAIRS = 3


@dataclass(frozen=True)
class RcaMatrix:
    """RCA values for one year; undefined cells are NaN."""

    year: int
    countries: Tuple[str, ...]
    sectors: Tuple[str, ...]
    values: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, index=pd.Index(self.countries, name="country"), columns=self.sectors)
        return df.reset_index()


@dataclass(frozen=True)
class BipartiteNetwork:
    """Binary country x sector adjacency for one year."""

    year: int
    countries: Tuple[str, ...]
    sectors: Tuple[str, ...]
    matrix: np.ndarray
    country_groups: Optional[Tuple[str, ...]] = None
    sector_groups: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.matrix.shape != (len(self.countries), len(self.sectors)):
            raise PanelDataError(
                f"network matrix has shape {self.matrix.shape}, "
                f"expected {(len(self.countries), len(self.sectors))}"
            )
        if not np.isin(self.matrix, (0, 1)).all():
            raise PanelDataError("network matrix entries must be 0 or 1")

    @property
    def n_links(self) -> int:
        return int(self.matrix.sum())

    def labelled(self, groups: Optional[CountryGroups] = None,
                 taxonomy: Optional[SectorTaxonomy] = None) -> "BipartiteNetwork":
        """Copy with country and/or sector group tags attached."""
        country_groups = self.country_groups
        sector_groups = self.sector_groups
        if groups is not None:
            country_groups = tuple(groups.label_countries(self.countries))
        if taxonomy is not None:
            sector_groups = tuple(taxonomy.group_of(s) or "" for s in self.sectors)
        return BipartiteNetwork(self.year, self.countries, self.sectors, self.matrix,
                                country_groups, sector_groups)

    def restrict_countries(self, countries: Sequence[str]) -> "BipartiteNetwork":
        """Sub-network on the given countries (kept in network order)."""
        keep = [i for i, c in enumerate(self.countries) if c in set(countries)]
        tags = None if self.country_groups is None else tuple(self.country_groups[i] for i in keep)
        return BipartiteNetwork(self.year, tuple(self.countries[i] for i in keep), self.sectors,
                                self.matrix[keep, :].copy(), tags, self.sector_groups)

    def edge_list(self) -> pd.DataFrame:
        c_idx, s_idx = np.nonzero(self.matrix)
        return pd.DataFrame({
            "year": self.year,
            "country": np.asarray(self.countries, dtype=object)[c_idx],
            "sector": np.asarray(self.sectors, dtype=object)[s_idx],
        })

    def dense_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.matrix.astype(np.int64), index=pd.Index(self.countries, name="country"),
                          columns=self.sectors)
        return df.reset_index()


@dataclass(frozen=True)
class DegreeSequences:
    diversification: np.ndarray
    ubiquity: np.ndarray

    @property
    def n_links(self) -> int:
        return int(self.diversification.sum())


@dataclass(frozen=True)
class CountryProjection:
    year: int
    countries: Tuple[str, ...]
    matrix: np.ndarray


def rca_matrix(panel: EmploymentPanel, year: int) -> RcaMatrix:
    """Balassa index of employment shares for one year."""
    employment = panel.slice_year("employment", year)
    present = ~np.isnan(employment)
    if not present.any():
        raise PanelDataError(f"no employment values in {year}")
    if (~present).any():
        logger.warning(f"{int((~present).sum())} cell(s) lack employment in {year}; treated as undefined")

    values = np.where(present, employment, 0.0)
    grand_total = values.sum()
    if grand_total <= 0:
        raise PanelDataError(f"total employment in {year} is zero")

    country_total = values.sum(axis=1, keepdims=True)
    sector_total = values.sum(axis=0, keepdims=True)
    defined = present & (country_total > 0) & (sector_total > 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        rca = (values / country_total) / (sector_total / grand_total)
    rca = np.where(defined, rca, np.nan)

    undefined = int((~defined & present).sum())
    if undefined:
        logger.info(f"{undefined} RCA cell(s) undefined in {year} (zero country or sector total)")
    return RcaMatrix(int(year), panel.countries, panel.sectors, rca)


def binarize(rca: RcaMatrix, threshold: float = 1.0) -> BipartiteNetwork:
    """Link every defined cell with RCA >= threshold."""
    with np.errstate(invalid="ignore"):
        links = rca.defined & (np.nan_to_num(rca.values, nan=-np.inf) >= threshold)
    return BipartiteNetwork(rca.year, rca.countries, rca.sectors, links.astype(np.int64))


def build_network(panel: EmploymentPanel, year: int, threshold: float = 1.0,
                  groups: Optional[CountryGroups] = None,
                  taxonomy: Optional[SectorTaxonomy] = None) -> BipartiteNetwork:
    net = binarize(rca_matrix(panel, year), threshold)
    if groups is not None or taxonomy is not None:
        net = net.labelled(groups, taxonomy)
    return net


def degrees(net: BipartiteNetwork) -> DegreeSequences:
    return DegreeSequences(
        diversification=net.matrix.sum(axis=1).astype(np.int64),
        ubiquity=net.matrix.sum(axis=0).astype(np.int64),
    )


def project_countries(net: BipartiteNetwork) -> CountryProjection:
    """Shared specialized sectors for every country pair, diagonal included."""
    m = net.matrix.astype(np.int64)
    return CountryProjection(net.year, net.countries, m @ m.T)


def base_year_correlation(
    panel: EmploymentPanel,
    measure: str,
    base_year: int,
    group_filter: str = "all",
    groups: Optional[CountryGroups] = None,
    years: Optional[Sequence[int]] = None,
    log_transform: bool = False,
    threshold: float = 1.0,
) -> pd.DataFrame:
    """Pearson correlation of every year's (c, s) values with the base year.

    Returns one row per year with the coefficient, the number of pairs and a
    `defined` flag (False with fewer than 3 pairs or zero variance).
    """
    if measure not in CORRELATION_MEASURES:
        raise PanelDataError(f"unknown correlation measure '{measure}'; use one of {CORRELATION_MEASURES}")
    if group_filter not in GROUP_FILTERS:
        raise PanelDataError(f"unknown group filter '{group_filter}'; use one of {GROUP_FILTERS}")

    years = list(years) if years is not None else list(panel.years)
    rows_mask = _country_mask(panel.countries, group_filter, groups)
    base = _measure_slice(panel, measure, base_year, threshold)[rows_mask]

    records = []
    for year in years:
        current = _measure_slice(panel, measure, year, threshold)[rows_mask]
        coefficient, n_pairs = _pearson(base.ravel(), current.ravel(), log_transform)
        records.append({
            "measure": measure,
            "group": group_filter,
            "base_year": int(base_year),
            "year": int(year),
            "coefficient": coefficient,
            "n_pairs": n_pairs,
            "defined": not np.isnan(coefficient),
        })
    return pd.DataFrame(records)


def _measure_slice(panel: EmploymentPanel, measure: str, year: int, threshold: float) -> np.ndarray:
    if measure != "motif_count":
        return panel.slice_year(measure, year)
    # Node motif counts come from the year's network
    from motif_counter import motif_node

    return motif_node(build_network(panel, year, threshold)).astype(float)


def _country_mask(countries: Sequence[str], group_filter: str, groups: Optional[CountryGroups]) -> np.ndarray:
    if group_filter == "all":
        return np.ones(len(countries), dtype=bool)
    if groups is None:
        raise PanelDataError(f"group filter '{group_filter}' needs country groups")
    return np.array([groups.mapping.get(c) == group_filter for c in countries])


def _pearson(x: np.ndarray, y: np.ndarray, log_transform: bool) -> Tuple[float, int]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if log_transform:
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(x > 0, np.log(x), np.nan)
            y = np.where(y > 0, np.log(y), np.nan)
    paired = ~np.isnan(x) & ~np.isnan(y)
    n_pairs = int(paired.sum())
    if n_pairs < MIN_PAIRS:
        return np.nan, n_pairs

    dx = x[paired] - x[paired].mean()
    dy = y[paired] - y[paired].mean()
    denominator = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denominator == 0:
        return np.nan, n_pairs
    return float(np.clip((dx * dy).sum() / denominator, -1.0, 1.0)), n_pairs


def write_network(net: BipartiteNetwork, directory: Path) -> List[Path]:
    """Edge list and dense 0/1 matrix CSVs for one year."""
    directory = Path(directory)
    return [
        write_csv(net.edge_list(), directory / f"edges_{net.year}.csv"),
        write_csv(net.dense_frame(), directory / f"network_{net.year}.csv"),
    ]


def write_rca(rca: RcaMatrix, directory: Path) -> Path:
    return write_csv(rca.to_frame(), Path(directory) / f"rca_{rca.year}.csv")


def read_dense_network(path: Path, year: int) -> BipartiteNetwork:
    df = pd.read_csv(path, dtype={"country": str}).set_index("country")
    return BipartiteNetwork(int(year), tuple(df.index), tuple(str(c) for c in df.columns),
                            df.to_numpy(dtype=np.int64))


def read_edge_list(path: Path, countries: Sequence[str], sectors: Sequence[str]) -> BipartiteNetwork:
    """Rebuild a network from its edge list; the node orders must be given."""
    df = pd.read_csv(path, dtype={"country": str, "sector": str})
    years = df["year"].unique()
    if len(years) > 1:
        raise PanelDataError(f"edge list {path} mixes years {sorted(years)}")
    matrix = np.zeros((len(countries), len(sectors)), dtype=np.int64)
    c_idx = pd.Index(countries).get_indexer(df["country"])
    s_idx = pd.Index(sectors).get_indexer(df["sector"])
    if (c_idx < 0).any() or (s_idx < 0).any():
        raise PanelDataError(f"edge list {path} names nodes outside the given orders")
    matrix[c_idx, s_idx] = 1
    year = int(years[0]) if len(years) else 0
    return BipartiteNetwork(year, tuple(countries), tuple(sectors), matrix)
