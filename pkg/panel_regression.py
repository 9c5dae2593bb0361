"""Fixed-effect panel regressions of value added on lagged motif z-scores."""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, stats

from exceptions import ConfigError, EmptySampleError, MissingVariableError, PanelDataError, RankDeficiencyError
from motif_significance import ZScoreResult, zscore_frame
from panel_processor import EmploymentPanel
from taxonomy import CEE, CountryGroups, SectorTaxonomy
from utils import format_coefficient, significance_stars

logger = logging.getLogger(__name__)

MOTIF_REGRESSORS = ("overall", "internal", "external")
INTERACTIONS = ("cee", "entry", "cee_entry")
DEPENDENT_FORMS = ("level", "difference")
ENTRY_YEAR = 2004
RECESSION_YEARS = (2008, 2009)
KEYS = ["country", "sector", "year"]
COLLINEARITY_TOLERANCE = 1e-9

TERM_LABELS = {
    "overall": "Overall",
    "internal": "Internal",
    "external": "External",
    "entry": "Entry",
    "cee": "CEE",
    "recession": "Recession",
    "employment": "EMP",
    "gfc": "GFC",
    "ulc": "ULC",
    "trend": "Time trend",
    "Intercept": "Intercept",
}


@dataclass(frozen=True)
class ModelSpec:
    """One fixed-effect model: regressors, interactions, controls and sample filter."""

    name: str
    regressors: Tuple[str, ...] = ("overall",)
    interactions: Tuple[str, ...] = ()
    controls: Tuple[str, ...] = ("employment", "gfc")
    dependent: str = "value_added_pc"
    dependent_form: str = "level"
    standardize_dependent: bool = True
    entry: bool = True
    recession: bool = True
    year_effects: bool = True
    trend: bool = True
    sector_group: Optional[str] = None
    cluster: str = "country"
    null_model: str = "full"

    def __post_init__(self):
        unknown = [r for r in self.regressors if r not in MOTIF_REGRESSORS]
        if unknown:
            raise ConfigError(f"model {self.name}: unknown regressors {unknown}; use {MOTIF_REGRESSORS}")
        unknown = [i for i in self.interactions if i not in INTERACTIONS]
        if unknown:
            raise ConfigError(f"model {self.name}: unknown interactions {unknown}; use {INTERACTIONS}")
        if self.dependent_form not in DEPENDENT_FORMS:
            raise ConfigError(f"model {self.name}: dependent_form must be one of {DEPENDENT_FORMS}")
        if self.cluster != "country":
            raise ConfigError(f"model {self.name}: only country clustering is supported")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        values = dict(data)
        for key in ("regressors", "interactions", "controls"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "regressors": list(self.regressors),
            "interactions": list(self.interactions),
            "controls": list(self.controls),
            "dependent": self.dependent,
            "dependent_form": self.dependent_form,
            "standardize_dependent": self.standardize_dependent,
            "entry": self.entry,
            "recession": self.recession,
            "year_effects": self.year_effects,
            "trend": self.trend,
            "sector_group": self.sector_group,
            "cluster": self.cluster,
            "null_model": self.null_model,
        }


def default_models() -> List[ModelSpec]:
    """The eight fixed-effect models: overall and decomposed motifs, then by sector group."""
    decomposed = ("internal", "external")
    models = [
        ModelSpec("model_1", regressors=("overall",)),
        ModelSpec("model_2", regressors=("overall",), interactions=INTERACTIONS),
        ModelSpec("model_3", regressors=decomposed),
        ModelSpec("model_4", regressors=decomposed, interactions=INTERACTIONS),
    ]
    sector_groups = ["Primary production", "Basic manufacturing", "Manufacturing of capital goods", "Services"]
    for number, group in enumerate(sector_groups, start=5):
        models.append(ModelSpec(f"model_{number}", regressors=decomposed, interactions=INTERACTIONS,
                                sector_group=group))
    return models


@dataclass(frozen=True)
class PanelDataset:
    """Regression-ready rows for one model.

    `frame` holds the estimation sample (after listwise deletion); `pooled`
    keeps every candidate row of the model's sample, which the descriptive
    tables are computed over. Standardization always uses all sectors.
    """

    spec: ModelSpec
    frame: pd.DataFrame
    pooled: pd.DataFrame
    y_column: str
    x_columns: Tuple[str, ...]
    n_dropped: int
    window: Tuple[int, int]
    degenerate: Tuple[str, ...] = ()
    unit_means: Optional[pd.DataFrame] = None

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    @property
    def n_units(self) -> int:
        return int(self.frame["unit"].nunique())

    def matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        return (self.frame[self.y_column].to_numpy(dtype=float),
                self.frame[list(self.x_columns)].to_numpy(dtype=float))


@dataclass(frozen=True)
class RegressionResult:
    name: str
    terms: Tuple[str, ...]
    params: pd.Series
    bse: pd.Series
    tvalues: pd.Series
    pvalues: pd.Series
    covariance: pd.DataFrame
    r2_within: float
    n_obs: int
    n_groups: int
    n_clusters: int
    residuals: np.ndarray
    design: np.ndarray = field(repr=False)
    dropped_terms: Tuple[str, ...] = ()
    window: Tuple[int, int] = (0, 0)
    n_dropped_rows: int = 0
    year_effects: bool = False
    trend: bool = False
    sector_group: Optional[str] = None

    def to_frame(self) -> pd.DataFrame:
        """Columns: model, term, estimate, se, t, p."""
        return pd.DataFrame({
            "model": self.name,
            "term": list(self.terms),
            "estimate": self.params.to_numpy(),
            "se": self.bse.to_numpy(),
            "t": self.tvalues.to_numpy(),
            "p": self.pvalues.to_numpy(),
        })

    def summary(self) -> Dict[str, Any]:
        return {
            "model": self.name,
            "sector_group": self.sector_group or "All",
            "r2_within": self.r2_within,
            "n_obs": self.n_obs,
            "n_groups": self.n_groups,
            "n_clusters": self.n_clusters,
            "first_year": self.window[0],
            "last_year": self.window[1],
            "rows_dropped": self.n_dropped_rows,
            "dropped_terms": ";".join(self.dropped_terms),
            "year_effects": self.year_effects,
            "trend": self.trend,
        }


def interaction_name(kind: str, regressor: str) -> str:
    prefix = {"cee": "cee", "entry": "entry", "cee_entry": "cee_x_entry"}[kind]
    return f"{prefix}_x_{regressor}"


def term_label(term: str) -> str:
    """Display name of a design column, e.g. 'CEE # Entry # Overall'."""
    if term in TERM_LABELS:
        return TERM_LABELS[term]
    if term.startswith("year_"):
        return f"Year {term[5:]}"
    return " # ".join(TERM_LABELS.get(part, part) for part in term.split("_x_"))


def build_dataset(
    panel: EmploymentPanel,
    zscores: Union[Sequence[ZScoreResult], pd.DataFrame],
    spec: ModelSpec,
    groups: Optional[CountryGroups] = None,
    taxonomy: Optional[SectorTaxonomy] = None,
    years: Optional[Sequence[int]] = None,
) -> PanelDataset:
    """Lagged, standardized design for one model.

    Regressors and controls are taken from year t-1; Entry and Recession
    follow the dependent year t. Rows missing any required value are dropped.
    """
    groups = groups or CountryGroups.default()
    taxonomy = taxonomy or SectorTaxonomy.default()

    motifs = _node_zscores(zscores, spec)
    for variable in (spec.dependent, *spec.controls):
        if variable not in panel.measures:
            raise MissingVariableError(variable)
    source = panel.to_frame().merge(motifs, on=KEYS, how="outer")

    # 1. Dependent-year window
    if years is None:
        motif_years = sorted(motifs["year"].unique())
        years = [y for y in motif_years[1:] if y in panel.years]
    years = sorted(int(y) for y in years)
    if not years:
        raise EmptySampleError("no dependent years left after lagging")

    rows = source.loc[source["year"].isin(years), KEYS + [spec.dependent]].rename(columns={spec.dependent: "y"})
    if spec.dependent_form == "difference":
        rows = rows.merge(_lag(source, [spec.dependent]), on=KEYS, how="left")
        rows["y"] = rows["y"] - rows.pop(f"{spec.dependent}_lag")

    # 2. Lagged explanatory variables
    lagged = _lag(source, [*spec.regressors, *spec.controls])
    rows = rows.merge(lagged, on=KEYS, how="left")
    rows = rows.rename(columns={f"{c}_lag": c for c in (*spec.regressors, *spec.controls)})

    if spec.sector_group is not None and spec.sector_group not in taxonomy.groups:
        raise ConfigError(f"model {spec.name}: unknown sector group '{spec.sector_group}'")

    # 3. Standardize over the pooled sample, before any sector-group filter
    continuous = [*spec.regressors, *spec.controls] + (["y"] if spec.standardize_dependent else [])
    degenerate = []
    for column in continuous:
        rows[column], ok = standardize(rows[column])
        if not ok:
            degenerate.append(column)
            logger.warning(f"Model {spec.name}: '{column}' has no variance; standardized to 0")

    # 4. Sample filter
    if spec.sector_group is not None:
        rows = rows[rows["sector"].map(taxonomy.group_of) == spec.sector_group]
    rows = rows.sort_values(KEYS).reset_index(drop=True)
    if rows.empty:
        raise EmptySampleError(f"model {spec.name}: no rows in the sample", 0)

    # 5. Dummies and interactions
    rows["cee"] = (rows["country"].map(groups.mapping) == CEE).astype(float)
    rows["entry"] = (rows["year"] >= ENTRY_YEAR).astype(float)
    rows["recession"] = rows["year"].isin(RECESSION_YEARS).astype(float)
    interactions = []
    for regressor in spec.regressors:
        for kind in spec.interactions:
            name = interaction_name(kind, regressor)
            factor = {"cee": rows["cee"], "entry": rows["entry"], "cee_entry": rows["cee"] * rows["entry"]}[kind]
            rows[name] = factor * rows[regressor]
            interactions.append(name)
    rows["unit"] = rows["country"] + ":" + rows["sector"]
    rows["cluster"] = rows[spec.cluster]

    x_columns = [*spec.regressors, *interactions]
    x_columns += [d for d, on in (("entry", spec.entry), ("recession", spec.recession)) if on]
    x_columns += list(spec.controls)

    # 6. Listwise deletion
    required = ["y", *x_columns]
    complete = rows[required].notna().all(axis=1)
    n_dropped = int((~complete).sum())
    frame = rows[complete].reset_index(drop=True)
    if n_dropped:
        logger.info(f"Model {spec.name}: dropped {n_dropped} of {len(rows)} rows with missing values")
    if frame.empty:
        raise EmptySampleError(f"model {spec.name}: every row has a missing value ({len(rows)} candidates)",
                               len(rows))

    return PanelDataset(
        spec=spec,
        frame=frame,
        pooled=rows,
        y_column="y",
        x_columns=tuple(x_columns),
        n_dropped=n_dropped,
        window=(int(frame["year"].min()), int(frame["year"].max())),
        degenerate=tuple(degenerate),
    )


def standardize(values: pd.Series) -> Tuple[pd.Series, bool]:
    """Mean 0, sd 1 over the non-missing values; constant columns become 0."""
    present = values.dropna()
    if len(present) < 2:
        return values.where(values.isna(), 0.0), False
    sd = present.std(ddof=1)
    if not np.isfinite(sd) or sd == 0:
        return values.where(values.isna(), 0.0), False
    return (values - present.mean()) / sd, True


def within_transform(dataset: PanelDataset, columns: Optional[Sequence[str]] = None) -> PanelDataset:
    """Demean y and the design columns within each unit; unit means are kept."""
    columns = list(columns) if columns is not None else [dataset.y_column, *dataset.x_columns]
    frame = dataset.frame.copy()
    if not (frame.groupby("unit").size() >= 2).any():
        logger.warning("No unit has two observations; every demeaned row is zero")
    grouped = frame.groupby("unit", sort=True)[columns]
    means = grouped.transform("mean")
    frame[columns] = frame[columns] - means
    return replace(dataset, frame=frame, unit_means=grouped.mean())


def fit_fe(dataset: PanelDataset, spec: Optional[ModelSpec] = None) -> RegressionResult:
    """Within estimator with country-clustered standard errors."""
    spec = spec or dataset.spec
    frame = dataset.frame.copy()
    if frame.empty:
        raise EmptySampleError(f"model {spec.name}: empty estimation sample")

    # Year effects and trend
    columns = list(dataset.x_columns)
    optional: Dict[str, str] = {}
    years = sorted(frame["year"].unique())
    if spec.year_effects:
        for year in years[1:]:
            name = f"year_{year}"
            frame[name] = (frame["year"] == year).astype(float)
            columns.append(name)
            optional[name] = "year"
    if spec.trend:
        frame["trend"] = (frame["year"] - years[0]).astype(float)
        columns.append("trend")
        optional["trend"] = "trend"

    augmented = replace(dataset, frame=frame, x_columns=tuple(columns))
    within = within_transform(augmented)
    y_dm, x_dm = within.matrices()

    kept, dropped = _independent_columns(x_dm, columns, optional)
    x_dm = x_dm[:, kept]
    terms = [columns[k] for k in kept]

    # Grand means added back so the intercept is the average fixed effect
    grand = frame[terms].mean().to_numpy(dtype=float)
    y_bar = float(frame[dataset.y_column].mean())
    design = np.column_stack([x_dm + grand, np.ones(len(frame))])
    response = y_dm + y_bar
    terms.append("Intercept")

    q, r = linalg.qr(design, mode="economic")
    beta = linalg.solve_triangular(r, q.T @ response)
    residuals = response - design @ beta

    # Within variation at rounding level counts as none
    total = float(y_dm @ y_dm)
    y_raw = frame[dataset.y_column].to_numpy(dtype=float)
    if total <= np.finfo(float).eps * max(1.0, float(y_raw @ y_raw)):
        r2 = 0.0
    else:
        r2 = float(np.clip(1.0 - (residuals @ residuals) / total, 0.0, 1.0))

    clusters = frame["cluster"].to_numpy()
    covariance = cluster_robust_covariance(design, residuals, clusters)
    n_clusters = int(pd.unique(clusters).size)
    se = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.nan)
    p = 2 * stats.t.sf(np.abs(t), df=n_clusters - 1)

    index = pd.Index(terms, name="term")
    result = RegressionResult(
        name=spec.name,
        terms=tuple(terms),
        params=pd.Series(beta, index=index),
        bse=pd.Series(se, index=index),
        tvalues=pd.Series(t, index=index),
        pvalues=pd.Series(p, index=index),
        covariance=pd.DataFrame(covariance, index=index, columns=index),
        r2_within=r2,
        n_obs=len(frame),
        n_groups=int(frame["unit"].nunique()),
        n_clusters=n_clusters,
        residuals=residuals,
        design=design,
        dropped_terms=tuple(dropped),
        window=dataset.window,
        n_dropped_rows=dataset.n_dropped,
        year_effects=any(term.startswith("year_") for term in terms),
        trend="trend" in terms,
        sector_group=spec.sector_group,
    )
    logger.info(f"Fitted {spec.name}: {result.n_obs} observations, {result.n_groups} units, "
                f"within R2 {r2:.3f}")
    return result


def cluster_robust_covariance(design: np.ndarray, residuals: np.ndarray, clusters: Sequence) -> np.ndarray:
    """Sandwich covariance with cluster-summed scores and the G/(G-1)*(N-1)/(N-K) correction."""
    n, k = design.shape
    codes, uniques = pd.factorize(pd.Series(clusters))
    n_clusters = len(uniques)
    if n_clusters < 2:
        raise PanelDataError(f"cluster-robust errors need at least 2 clusters, got {n_clusters}")
    if n <= k:
        raise EmptySampleError(f"{n} observations cannot support {k} coefficients", n)

    _, r = linalg.qr(design, mode="economic")
    r_inv = linalg.solve_triangular(r, np.eye(k))
    bread = r_inv @ r_inv.T

    scores = np.zeros((n_clusters, k))
    np.add.at(scores, codes, design * residuals[:, None])
    meat = scores.T @ scores

    correction = n_clusters / (n_clusters - 1) * (n - 1) / (n - k)
    return correction * (bread @ meat @ bread)


def cluster_robust_se(result: RegressionResult, clusters: Sequence) -> pd.Series:
    """Cluster-robust standard errors of a fitted model for a given cluster assignment."""
    covariance = cluster_robust_covariance(result.design, result.residuals, clusters)
    return pd.Series(np.sqrt(np.maximum(np.diag(covariance), 0.0)), index=list(result.terms))


def descriptive_statistics(dataset: PanelDataset) -> pd.DataFrame:
    """Obs, mean, sd, min and max of the regression variables over the pooled rows."""
    records = []
    for column in _described_columns(dataset):
        values = dataset.pooled[column].dropna()
        records.append({
            "variable": _variable_label(dataset, column),
            "obs": int(len(values)),
            "mean": float(values.mean()) if len(values) else np.nan,
            "sd": float(values.std(ddof=1)) if len(values) > 1 else np.nan,
            "min": float(values.min()) if len(values) else np.nan,
            "max": float(values.max()) if len(values) else np.nan,
        })
    return pd.DataFrame(records)


def correlation_table(dataset: PanelDataset) -> pd.DataFrame:
    """Pairwise-complete Pearson correlations of the regression variables."""
    columns = _described_columns(dataset)
    corr = dataset.pooled[columns].astype(float).corr(method="pearson")
    labels = [_variable_label(dataset, c) for c in columns]
    corr.index = labels
    corr.columns = labels
    return corr.reset_index().rename(columns={"index": "variable"})


def format_table(results: Sequence[RegressionResult]) -> str:
    """Side-by-side text table: estimates with stars, clustered SEs in brackets."""
    if not results:
        return ""
    terms: List[str] = []
    for result in results:
        for term in result.terms:
            if term not in terms and not term.startswith("year_") and term not in ("trend", "Intercept"):
                terms.append(term)
    terms.append("Intercept")

    header = [""] + [f"({i})" for i in range(1, len(results) + 1)]
    sample = ["Sample"] + [r.sector_group or "All" for r in results]
    names = ["Model"] + [r.name for r in results]
    lines: List[List[str]] = [header, names, sample]
    for term in terms:
        estimates, errors = [term_label(term)], [""]
        for result in results:
            if term in result.params.index:
                estimates.append(format_coefficient(result.params[term]) + significance_stars(result.pvalues[term]))
                errors.append(f"({format_coefficient(result.bse[term])})")
            else:
                estimates.append("")
                errors.append("")
        lines.extend([estimates, errors])

    lines.append(["Time trend"] + ["Y" if r.trend else "N" for r in results])
    lines.append(["Industry-country FE"] + ["Y" for _ in results])
    lines.append(["Year FE"] + ["Y" if r.year_effects else "N" for r in results])
    lines.append(["R2 (within)"] + [format_coefficient(r.r2_within) for r in results])
    lines.append(["N (Groups)"] + [str(r.n_groups) for r in results])
    lines.append(["N (Observations)"] + [str(r.n_obs) for r in results])
    lines.append(["Years"] + [f"{r.window[0]}-{r.window[1]}" for r in results])

    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    text = [rule]
    for row in lines:
        if row[0] == "Time trend":
            text.append(rule)
        text.append("  ".join(cell.ljust(widths[j]) if j == 0 else cell.rjust(widths[j])
                              for j, cell in enumerate(row)).rstrip())
        if row[0] == "Sample":
            text.append(rule)
    text.append(rule)
    text.append("Cluster-robust standard errors at country level in brackets; * p<0.1, ** p<0.05, *** p<0.01")
    return "\n".join(text) + "\n"


def _node_zscores(zscores: Union[Sequence[ZScoreResult], pd.DataFrame], spec: ModelSpec) -> pd.DataFrame:
    df = zscores if isinstance(zscores, pd.DataFrame) else zscore_frame(list(zscores))
    node = df[(df["level"] == "node") & (df["null_model"] == spec.null_model)]
    if node.empty:
        raise MissingVariableError("node z-scores", where=f"{spec.null_model} z-scores")
    wide = node.set_index([*KEYS, "scope"])["z"].unstack("scope").reset_index()
    wide.columns.name = None
    for regressor in spec.regressors:
        if regressor not in wide.columns:
            raise MissingVariableError(regressor, where="z-scores")
    wide["year"] = wide["year"].astype(np.int64)
    return wide[[*KEYS, *spec.regressors]]


def _described_columns(dataset: PanelDataset) -> List[str]:
    return [dataset.y_column, *dataset.x_columns]


def _variable_label(dataset: PanelDataset, column: str) -> str:
    if column == dataset.y_column:
        return dataset.spec.dependent
    return term_label(column)


def _lag(source: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Values of `columns` keyed to the following year."""
    lagged = source[[*KEYS, *columns]].copy()
    lagged["year"] = lagged["year"] + 1
    return lagged.rename(columns={c: f"{c}_lag" for c in columns})


def _independent_columns(x: np.ndarray, names: Sequence[str],
                         optional: Dict[str, str]) -> Tuple[List[int], List[str]]:
    """Greedy left-to-right selection of linearly independent columns.

    Year dummies and the trend may be dropped; any other dependent column
    is an error.
    """
    basis = np.zeros((x.shape[0], 0))
    kept: List[int] = []
    dropped: List[str] = []
    collinear: List[str] = []
    for k, name in enumerate(names):
        column = x[:, k]
        norm = np.linalg.norm(column)
        residual = column.copy()
        for _ in range(2):
            residual -= basis @ (basis.T @ residual)
        if norm > 0 and np.linalg.norm(residual) > COLLINEARITY_TOLERANCE * max(norm, 1.0):
            basis = np.column_stack([basis, residual / np.linalg.norm(residual)])
            kept.append(k)
            continue
        kind = optional.get(name)
        if kind == "year":
            logger.info(f"Dropped year effect {name} (collinear with earlier terms)")
            dropped.append(name)
        elif kind == "trend":
            logger.warning("Dropped the time trend: collinear with the year effects")
            dropped.append(name)
        else:
            collinear.append(name)
    if collinear:
        raise RankDeficiencyError(collinear)
    return kept, dropped
