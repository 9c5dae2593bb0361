import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from exceptions import (
    ConfigError,
    DuplicateKeyError,
    EmptySampleError,
    MalformedRowsError,
    MissingVariableError,
    PanelDataError,
    UnknownCodeError,
)
from taxonomy import SectorTaxonomy, canonical_country
from utils import write_csv

logger = logging.getLogger(__name__)

KEY_COLUMNS = ("country", "sector", "year")
MEASURES = ("employment", "value_added_pc", "gfc", "ulc")
NON_NEGATIVE = ("employment", "value_added_pc", "ulc")
MISSING_MARKERS = {"", "na", "nan", "n/a", "n.a.", "..", "null"}
DEFAULT_YEAR_RANGE = (1995, 2014)


@dataclass(frozen=True)
class EmploymentPanel:
    """Dense (country, sector, year) tensor of panel measures.

    Cells without a value hold NaN; `observed` marks the cells that had a
    record in the source file. Arrays are read-only.
    """

    countries: Tuple[str, ...]
    sectors: Tuple[str, ...]
    years: Tuple[int, ...]
    values: Dict[str, np.ndarray]
    observed: np.ndarray

    def __post_init__(self):
        shape = (len(self.countries), len(self.sectors), len(self.years))
        for name, array in self.values.items():
            if array.shape != shape:
                raise PanelDataError(f"measure {name} has shape {array.shape}, expected {shape}")
            array.setflags(write=False)
        self.observed.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return len(self.countries), len(self.sectors), len(self.years)

    @property
    def measures(self) -> List[str]:
        return [m for m in MEASURES if m in self.values]

    def measure(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise MissingVariableError(name)
        return self.values[name]

    def missing(self, name: str) -> np.ndarray:
        """Cells whose value is absent, whether or not a record exists."""
        return np.isnan(self.measure(name))

    def year_index(self, year: int) -> int:
        try:
            return self.years.index(int(year))
        except ValueError:
            raise PanelDataError(f"year {year} is not in the panel ({self.years[0]}-{self.years[-1]})")

    def slice_year(self, name: str, year: int) -> np.ndarray:
        """C x S matrix of one measure in one year."""
        return self.measure(name)[:, :, self.year_index(year)]

    def to_frame(self) -> pd.DataFrame:
        """Long-form frame of the observed records, in index order."""
        c_idx, s_idx, t_idx = np.nonzero(self.observed)
        df = pd.DataFrame({
            "country": np.asarray(self.countries, dtype=object)[c_idx],
            "sector": np.asarray(self.sectors, dtype=object)[s_idx],
            "year": np.asarray(self.years, dtype=np.int64)[t_idx],
        })
        for name in self.measures:
            df[name] = self.values[name][c_idx, s_idx, t_idx]
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, years: Optional[Sequence[int]] = None) -> "EmploymentPanel":
        """Build a panel from canonical long-form records with unique keys."""
        if df.empty:
            raise EmptySampleError("no observations left to build a panel")
        countries = tuple(sorted(df["country"].unique()))
        sectors = tuple(sorted(df["sector"].unique()))
        if years is None:
            years = range(int(df["year"].min()), int(df["year"].max()) + 1)
        years = tuple(int(y) for y in years)

        c_idx = pd.Index(countries).get_indexer(df["country"])
        s_idx = pd.Index(sectors).get_indexer(df["sector"])
        t_idx = pd.Index(years).get_indexer(df["year"].astype(int))
        shape = (len(countries), len(sectors), len(years))

        observed = np.zeros(shape, dtype=bool)
        observed[c_idx, s_idx, t_idx] = True
        values = {}
        for name in MEASURES:
            if name not in df.columns:
                continue
            array = np.full(shape, np.nan)
            array[c_idx, s_idx, t_idx] = df[name].to_numpy(dtype=float)
            values[name] = array
        return cls(countries, sectors, years, values, observed)

    def equals(self, other: "EmploymentPanel") -> bool:
        if (self.countries, self.sectors, self.years) != (other.countries, other.sectors, other.years):
            return False
        if self.measures != other.measures or not np.array_equal(self.observed, other.observed):
            return False
        return all(np.array_equal(self.values[m], other.values[m], equal_nan=True) for m in self.measures)

    def totals(self, name: str = "employment") -> pd.DataFrame:
        """Per (country, year) sum of a measure over sectors."""
        sums = np.nansum(self.measure(name), axis=1)
        frame = pd.DataFrame(sums, index=pd.Index(self.countries, name="country"), columns=self.years)
        return frame.rename_axis(columns="year")

    def restrict_years(self, start: int, end: int) -> "EmploymentPanel":
        keep = [i for i, y in enumerate(self.years) if start <= y <= end]
        if not keep:
            raise EmptySampleError(f"panel has no years in {start}-{end}")
        return EmploymentPanel(
            self.countries,
            self.sectors,
            tuple(self.years[i] for i in keep),
            {m: self.values[m][:, :, keep].copy() for m in self.measures},
            self.observed[:, :, keep].copy(),
        )


@dataclass
class LoadSummary:
    """What happened to the rows of one input file."""

    path: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped: Dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str, count: int) -> None:
        if count:
            self.dropped[reason] = self.dropped.get(reason, 0) + int(count)

    @property
    def rows_dropped(self) -> int:
        return sum(self.dropped.values())


@dataclass
class ValidationIssue:
    kind: str
    message: str
    measure: Optional[str] = None
    year: Optional[int] = None
    country: Optional[str] = None
    sector: Optional[str] = None
    cells: int = 0


@dataclass
class ValidationReport:
    """Findings of `validate_panel`; building one never changes the panel."""

    issues: List[ValidationIssue]
    coverage: pd.DataFrame

    @property
    def is_clean(self) -> bool:
        return not self.issues

    def kinds(self) -> Set[str]:
        return {issue.kind for issue in self.issues}

    def to_frame(self) -> pd.DataFrame:
        columns = ["kind", "measure", "year", "country", "sector", "cells", "message"]
        rows = [{c: getattr(issue, c) for c in columns} for issue in self.issues]
        df = pd.DataFrame(rows, columns=columns)
        df["year"] = df["year"].astype("Int64")
        df["cells"] = df["cells"].astype("int64")
        return df


class PanelProcessor:
    """Loads, aggregates and checks country-sector-year employment panels."""

    def __init__(
        self,
        schema: Optional[Dict[str, str]] = None,
        year_range: Tuple[int, int] = DEFAULT_YEAR_RANGE,
        allow_unknown_codes: bool = False,
        known_countries: Optional[Set[str]] = None,
        known_sectors: Optional[Set[str]] = None,
        employment_measure: str = "employees",
    ):
        if employment_measure not in ("employees", "fte"):
            raise ConfigError(f"employment measure must be 'employees' or 'fte', got '{employment_measure}'")
        self.schema = dict(schema or {})
        self.year_range = (int(year_range[0]), int(year_range[1]))
        self.allow_unknown_codes = allow_unknown_codes
        self.known_countries = set(known_countries) if known_countries else None
        self.known_sectors = set(known_sectors) if known_sectors else None
        self.employment_measure = employment_measure
        self.column_mappings = {
            # Common spellings in OECD STAN exports
            "country": ["country", "cou", "location", "iso3"],
            "sector": ["sector", "ind", "industry", "activity"],
            "year": ["year", "time", "period"],
            "employment": ["employment", "empn", "empe", "emp", "employees"],
            "employment_fte": ["employment_fte", "fte", "ftee", "empn_fte"],
            "value_added_pc": ["value_added_pc", "va_pc", "valu_pc", "value_added_per_worker"],
            "gfc": ["gfc", "gfcf", "gross_capital_formation"],
            "ulc": ["ulc", "unit_labour_cost", "unit_labor_cost"],
        }
        self.last_summary: Optional[LoadSummary] = None

    def load_panel(self, path: Path) -> EmploymentPanel:
        """Parse a long-form CSV into an EmploymentPanel."""
        path = Path(path)
        if not path.exists():
            raise PanelDataError(f"input file not found: {path}")

        summary = LoadSummary(path=str(path))
        try:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.ParserError as e:
            match = re.search(r"line (\d+)", str(e))
            lines = [int(match.group(1))] if match else []
            raise MalformedRowsError(lines, "wrong number of fields")
        except pd.errors.EmptyDataError:
            raise EmptySampleError(f"input file {path} is empty")
        summary.rows_read = len(raw)

        df = self._map_columns(raw, path)
        df = self._clean_data_types(df)
        df = self._filter_codes(df, summary)
        df = self._filter_years(df, summary)
        df = self._remove_duplicates(df, summary)

        summary.rows_kept = len(df)
        self.last_summary = summary
        if summary.rows_dropped:
            reasons = ", ".join(f"{n} {reason}" for reason, n in sorted(summary.dropped.items()))
            logger.info(f"Removed {summary.rows_dropped} rows from {path.name}: {reasons}")
        logger.info(f"Loaded {summary.rows_kept} observations from {path.name}")

        return EmploymentPanel.from_frame(df.drop(columns=["line"]))

    def _map_columns(self, raw: pd.DataFrame, path: Path) -> pd.DataFrame:
        """Rename source columns to canonical names."""
        required = ["country", "sector", "year"]
        required.append("employment_fte" if self.employment_measure == "fte" else "employment")

        lookup = {col.lower().strip(): col for col in raw.columns}
        column_mapping: Dict[str, str] = {}
        for canonical, aliases in self.column_mappings.items():
            if canonical in self.schema:
                source = self.schema[canonical]
                if source not in raw.columns:
                    raise MissingVariableError(source, where=f"header of {path}")
                column_mapping[canonical] = source
                continue
            found = next((lookup[a] for a in aliases if a in lookup), None)
            if found is not None:
                column_mapping[canonical] = found

        missing = [c for c in required if c not in column_mapping]
        if missing:
            raise MissingVariableError(missing[0], where=f"header of {path} (columns: {list(raw.columns)})")

        employment_source = "employment_fte" if self.employment_measure == "fte" else "employment"
        df = pd.DataFrame({
            "country": raw[column_mapping["country"]],
            "sector": raw[column_mapping["sector"]],
            "year": raw[column_mapping["year"]],
            "employment": raw[column_mapping[employment_source]],
        })
        for name in ("value_added_pc", "gfc", "ulc"):
            if name in column_mapping:
                df[name] = raw[column_mapping[name]]
        # header is line 1
        df["line"] = np.arange(len(raw)) + 2
        return df

    def _clean_data_types(self, df: pd.DataFrame) -> pd.DataFrame:
        """Convert text fields to typed values; malformed rows are fatal."""
        df = df.copy()
        df["country"] = df["country"].map(canonical_country)
        df["sector"] = df["sector"].astype(str).str.strip()

        bad = pd.Series(False, index=df.index)
        bad |= (df["country"] == "") | (df["sector"] == "")

        year_text = df["year"].astype(str).str.strip()
        years = pd.to_numeric(year_text, errors="coerce")
        bad |= years.isna() | (years != years.round())
        df["year"] = years

        for name in [m for m in MEASURES if m in df.columns]:
            text = df[name].astype(str).str.strip()
            absent = text.str.lower().isin(MISSING_MARKERS)
            # float() is correctly rounded, so written panels reload bit for bit
            numbers = text.where(~absent).map(_to_float, na_action="ignore").astype(float)
            bad |= numbers.isna() & ~absent
            bad |= ~np.isfinite(numbers.fillna(0.0))
            if name in NON_NEGATIVE:
                bad |= numbers < 0
            df[name] = numbers.astype(float)

        if bad.any():
            raise MalformedRowsError(df.loc[bad, "line"].tolist())

        df["year"] = df["year"].astype(int)
        return df

    def _filter_codes(self, df: pd.DataFrame, summary: LoadSummary) -> pd.DataFrame:
        for column, known in (("country", self.known_countries), ("sector", self.known_sectors)):
            if known is None:
                continue
            unknown = ~df[column].isin(known)
            if not unknown.any():
                continue
            if not self.allow_unknown_codes:
                raise UnknownCodeError(column, df.loc[unknown, column].unique().tolist())
            logger.warning(f"Skipping unknown {column} codes: {sorted(df.loc[unknown, column].unique())}")
            summary.drop(f"unknown {column} code", int(unknown.sum()))
            df = df[~unknown]
        return df

    def _filter_years(self, df: pd.DataFrame, summary: LoadSummary) -> pd.DataFrame:
        start, end = self.year_range
        outside = (df["year"] < start) | (df["year"] > end)
        summary.drop("outside year range", int(outside.sum()))
        return df[~outside]

    def _remove_duplicates(self, df: pd.DataFrame, summary: LoadSummary) -> pd.DataFrame:
        """Drop exact repeats of a key; conflicting repeats are errors."""
        keys = list(KEY_COLUMNS)
        repeated = df[df.duplicated(subset=keys, keep=False)]
        if repeated.empty:
            return df

        value_columns = [m for m in MEASURES if m in df.columns]
        for key, group in repeated.groupby(keys, sort=True):
            values = group[value_columns].fillna(np.inf)
            if len(values.drop_duplicates()) > 1:
                raise DuplicateKeyError((key[0], key[1], int(key[2])))

        duplicated = df.duplicated(subset=keys, keep="first")
        summary.drop("exact duplicate", int(duplicated.sum()))
        return df[~duplicated]

    def aggregate_sectors(self, panel: EmploymentPanel, taxonomy: SectorTaxonomy) -> EmploymentPanel:
        """Fold raw activity codes into sector classes."""
        code_map = taxonomy.map_codes(panel.sectors)
        keys = list(KEY_COLUMNS)

        # Every member code in every (country, year), so unobserved members surface as NaN
        observed = panel.to_frame().set_index(keys)
        grid = pd.MultiIndex.from_product([panel.countries, panel.sectors, panel.years], names=keys)
        df = observed.reindex(grid).reset_index()
        df["present"] = grid.isin(observed.index)
        df["sector"] = df["sector"].map(code_map)

        # Additive quantities; value added and ULC are carried as employment-weighted totals
        additive = pd.DataFrame({"employment": df["employment"]})
        if "gfc" in df.columns:
            additive["gfc"] = df["gfc"]
        if "value_added_pc" in df.columns:
            additive["value_added"] = df["value_added_pc"] * df["employment"]
        if "ulc" in df.columns:
            additive["ulc_weighted"] = df["ulc"] * df["employment"]

        groups = [df[k] for k in keys]
        sums = additive.groupby(groups).sum()
        any_missing = additive.isna().groupby(groups).any()
        sums = sums.mask(any_missing)
        size = df.groupby(keys).size()
        first = df.groupby(keys)[[m for m in panel.measures]].first()

        out = pd.DataFrame(index=sums.index)
        out["employment"] = sums["employment"]
        if "value_added_pc" in panel.measures:
            out["value_added_pc"] = sums["value_added"] / sums["employment"].where(sums["employment"] > 0)
        if "gfc" in panel.measures:
            out["gfc"] = sums["gfc"]
        if "ulc" in panel.measures:
            out["ulc"] = sums["ulc_weighted"] / sums["employment"].where(sums["employment"] > 0)

        # Singleton classes keep their values bit for bit
        single = size == 1
        out.loc[single, panel.measures] = first.loc[single, panel.measures]

        # Classes with no observed member in a (country, year) stay unobserved
        out = out[df.groupby(keys)["present"].any()]
        partial = int(out["employment"].isna().sum())
        if partial:
            logger.warning(f"{partial} aggregated cell(s) have missing employment")

        aggregated = EmploymentPanel.from_frame(out[panel.measures].reset_index(), years=panel.years)
        merged = len(panel.sectors) - len(aggregated.sectors)
        logger.info(f"Aggregated {len(panel.sectors)} activity codes into {len(aggregated.sectors)} classes"
                    f" ({merged} merged)")
        return aggregated

    def validate_panel(self, panel: EmploymentPanel) -> ValidationReport:
        """List missing cells, zero-employment cells and year coverage."""
        issues: List[ValidationIssue] = []

        # 1. Missing measures per year
        for name in panel.measures:
            missing = panel.missing(name)
            for t, year in enumerate(panel.years):
                count = int(missing[:, :, t].sum())
                if count:
                    issues.append(ValidationIssue(
                        kind="missing",
                        measure=name,
                        year=year,
                        cells=count,
                        message=f"{count} cell(s) lack {name} in {year}",
                    ))

        # 2. Zero employment makes RCA degenerate
        employment = panel.measure("employment")
        for c, s, t in zip(*np.nonzero(employment == 0)):
            issues.append(ValidationIssue(
                kind="zero_employment",
                measure="employment",
                year=panel.years[t],
                country=panel.countries[c],
                sector=panel.sectors[s],
                cells=1,
                message="zero employment: degenerate RCA risk",
            ))

        # 3. Year coverage per country
        covered = (~np.isnan(employment)).any(axis=1)
        coverage = pd.DataFrame({
            "country": panel.countries,
            "first_year": [_first_year(panel.years, row) for row in covered],
            "last_year": [_last_year(panel.years, row) for row in covered],
            "years_covered": covered.sum(axis=1).astype(int),
            "years_total": len(panel.years),
        })
        for row in coverage.itertuples(index=False):
            if row.years_covered < row.years_total:
                issues.append(ValidationIssue(
                    kind="incomplete_coverage",
                    measure="employment",
                    country=row.country,
                    cells=int(row.years_total - row.years_covered),
                    message=f"{row.country} has employment in {row.years_covered} of {row.years_total} years",
                ))

        if issues:
            logger.warning(f"Panel validation found {len(issues)} issue(s)")
        return ValidationReport(issues=issues, coverage=coverage)

    def save_panel(self, panel: EmploymentPanel, path: Path) -> Path:
        """Write the canonical long-form CSV."""
        return write_csv(panel.to_frame(), path)

    def get_summary_stats(self, panel: EmploymentPanel) -> Dict[str, Any]:
        """Headline numbers of a panel."""
        employment = panel.measure("employment")
        return {
            "countries": len(panel.countries),
            "sectors": len(panel.sectors),
            "years": (panel.years[0], panel.years[-1]),
            "observations": int(panel.observed.sum()),
            "total_employment": float(np.nansum(employment)),
            "missing_employment": int(np.isnan(employment).sum()),
        }


def _first_year(years: Tuple[int, ...], mask: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(years[idx[0]]) if idx.size else None


def _last_year(years: Tuple[int, ...], mask: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(years[idx[-1]]) if idx.size else None


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan
