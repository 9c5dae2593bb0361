"""Plot-ready tables behind the report figures. Rendering is left to external tools."""
import logging
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from panel_processor import EmploymentPanel
from rca_network import GROUP_FILTERS, BipartiteNetwork, base_year_correlation
from taxonomy import CEE, CountryGroups

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 2.0
DISTRIBUTION_MEASURES = ("employment", "ulc", "value_added_pc")


class FigureDataBuilder:
    """Builds the tidy frames that the figures are drawn from."""

    def __init__(self, groups: Optional[CountryGroups] = None):
        self.groups = groups or CountryGroups.default()

    def create_base_year_correlations(self, panel: EmploymentPanel, base_year: int,
                                      years: Optional[Sequence[int]] = None, log_transform: bool = False,
                                      threshold: float = 1.0) -> pd.DataFrame:
        """Correlation of every measure with its base-year value, per country group."""
        years = list(years) if years is not None else [y for y in panel.years if y >= base_year]
        frames = []
        for measure in ("employment", "ulc", "value_added_pc", "motif_count"):
            if measure != "motif_count" and measure not in panel.measures:
                logger.warning(f"Skipping {measure} correlations: not in the panel")
                continue
            for group_filter in GROUP_FILTERS:
                frames.append(base_year_correlation(panel, measure, base_year, group_filter, self.groups,
                                                    years, log_transform, threshold))
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

    def create_distribution_summary(self, panel: EmploymentPanel,
                                    years: Optional[Sequence[int]] = None) -> pd.DataFrame:
        """Per year, group and measure: count, mean and five-number summary of the cell values."""
        years = list(years) if years is not None else list(panel.years)
        labels = np.array([self.groups.mapping.get(c) for c in panel.countries], dtype=object)
        records = []
        for measure in DISTRIBUTION_MEASURES:
            if measure not in panel.measures:
                continue
            for year in years:
                values = panel.slice_year(measure, year)
                for group in self.groups.labels:
                    cells = values[labels == group].ravel()
                    cells = cells[~np.isnan(cells)]
                    records.append(self._summarize(cells, measure, group, year))
        return pd.DataFrame(records)

    def create_cee_link_share(self, networks: Sequence[BipartiteNetwork]) -> pd.DataFrame:
        """Share of all links held by CEE countries, per year."""
        records = []
        for net in sorted(networks, key=lambda n: n.year):
            labels = np.array(self.groups.label_countries(net.countries), dtype=object)
            diversification = net.matrix.sum(axis=1)
            total = int(diversification.sum())
            cee_links = int(diversification[labels == CEE].sum())
            records.append({
                "year": net.year,
                "cee_links": cee_links,
                "total_links": total,
                "cee_share": cee_links / total if total else np.nan,
            })
        return pd.DataFrame(records, columns=["year", "cee_links", "total_links", "cee_share"])

    def create_zscore_series(self, zscores: pd.DataFrame) -> pd.DataFrame:
        """Yearly overall, internal and external z-scores for every null model."""
        rows = zscores[zscores["level"].isin(["network", "group"])].copy()
        rows["series"] = [self._series_name(level, scope, group)
                          for level, scope, group in zip(rows["level"], rows["scope"], rows["group"])]
        rows["significant"] = rows["z"].abs() >= SIGNIFICANCE_LEVEL
        columns = ["year", "null_model", "series", "observed", "mean", "sd", "z", "degenerate", "significant"]
        return rows[columns].sort_values(["null_model", "series", "year"], kind="mergesort").reset_index(drop=True)

    def create_node_zscores(self, zscores: pd.DataFrame) -> pd.DataFrame:
        """Country-industry z-scores side by side: overall, internal, external."""
        node = zscores[(zscores["level"] == "node") & (zscores["null_model"] == "full")]
        if node.empty:
            return pd.DataFrame(columns=["year", "country", "group", "sector", "sector_group",
                                         "z_overall", "z_internal", "z_external"])
        keys = ["year", "country", "group", "sector", "sector_group"]
        node = node.assign(sector_group=node["sector_group"].fillna(""), group=node["group"].fillna(""))
        wide = node.set_index([*keys, "scope"])["z"].unstack("scope")
        wide = wide.rename(columns=lambda scope: f"z_{scope}").reset_index()
        wide.columns.name = None
        return wide.sort_values(["year", "country", "sector"], kind="mergesort").reset_index(drop=True)

    def create_sector_group_series(self, zscores: pd.DataFrame) -> pd.DataFrame:
        """Yearly z-scores restricted to each sector group."""
        rows = zscores[zscores["level"] == "sector_group"].copy()
        rows["series"] = [self._series_name("group" if scope != "overall" else "network", scope, group)
                          for scope, group in zip(rows["scope"], rows["group"])]
        columns = ["year", "null_model", "sector_group", "series", "observed", "mean", "sd", "z", "degenerate"]
        return rows[columns].sort_values(["null_model", "sector_group", "series", "year"],
                                         kind="mergesort").reset_index(drop=True)

    @staticmethod
    def _series_name(level: str, scope: str, group: Optional[str]) -> str:
        if scope == "overall":
            return "Overall"
        if scope == "internal":
            return f"Internal {group}"
        return "External"

    @staticmethod
    def _summarize(cells: np.ndarray, measure: str, group: str, year: int) -> dict:
        record = {"year": int(year), "group": group, "measure": measure, "count": int(cells.size)}
        if cells.size == 0:
            stats: List[float] = [np.nan] * 6
        else:
            q25, median, q75 = np.percentile(cells, [25, 50, 75])
            stats = [float(cells.mean()), float(cells.min()), float(q25), float(median), float(q75),
                     float(cells.max())]
        record.update(dict(zip(["mean", "min", "q25", "median", "q75", "max"], stats)))
        return record
