"""Command-line pipeline: panel -> networks -> z-scores -> regressions -> figure data."""
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import wraps
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
import typer

from bicm_model import BicmSolver, write_model
from config import RunConfig, load_config, parse_years
from exceptions import ConfigError, CospecError
from figure_data import FigureDataBuilder
from motif_counter import count_motifs, motif_frame
from motif_significance import restricted_zscores, zscore_frame, zscores
from panel_processor import EmploymentPanel, PanelProcessor, ValidationReport
from panel_regression import (
    ModelSpec, build_dataset, correlation_table, descriptive_statistics, fit_fe, format_table,
)
from rca_network import BipartiteNetwork, binarize, rca_matrix, write_network, write_rca
from taxonomy import CountryGroups, SectorTaxonomy
from utils import sanitize_filename, setup_logging, stable_json, update_manifest, write_csv, write_text

logger = logging.getLogger(__name__)

app = typer.Typer(
    help="Co-specialization motifs in country-sector employment networks.",
    add_completion=False,
    no_args_is_help=True,
)

ZSCORE_DTYPES = {"null_model": str, "level": str, "scope": str, "group": str, "sector_group": str,
                 "country": str, "sector": str}


@dataclass
class CliOptions:
    config: Optional[Path] = None
    seed: Optional[int] = None
    samples: Optional[int] = None
    years: Optional[str] = None
    out: Optional[Path] = None
    threads: Optional[int] = None
    tolerance: Optional[float] = None


class CospecPipeline:
    """Runs the pipeline stages for one configuration and records what it writes."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.config_hash = config.config_hash()
        self.out = config.out_path

        groups_path = config.resolve(config.groups_path)
        self.groups = CountryGroups.from_csv(groups_path) if groups_path else CountryGroups.default()
        taxonomy_path = config.resolve(config.taxonomy_path)
        self.taxonomy = SectorTaxonomy.from_csv(taxonomy_path) if taxonomy_path else SectorTaxonomy.default()

        self.processor = PanelProcessor(
            schema=config.schema,
            year_range=config.panel_years,
            allow_unknown_codes=config.allow_unknown_codes,
            known_countries=set(self.groups.mapping),
            known_sectors=set(self.taxonomy.raw_to_class if config.aggregate_sectors
                              else self.taxonomy.class_to_group),
            employment_measure=config.employment_measure,
        )
        self.solver = BicmSolver(config.tolerance, config.max_iterations, config.damping)
        self.figures = FigureDataBuilder(self.groups)

        self.written: List[Path] = []
        self._panel: Optional[EmploymentPanel] = None
        self._networks: Optional[List[BipartiteNetwork]] = None
        self._zscores: Optional[pd.DataFrame] = None

    # Stages

    def run_validate(self) -> ValidationReport:
        panel = self.panel()
        report = self.processor.validate_panel(panel)
        summary = self.processor.last_summary
        self._write_csv(report.to_frame(), "validate/issues.csv")
        self._write_csv(report.coverage, "validate/coverage.csv")
        self._write_csv(panel.to_frame(), "validate/panel.csv")
        stats = self.processor.get_summary_stats(panel)
        if summary is not None:
            stats.update({"rows_read": summary.rows_read, "rows_kept": summary.rows_kept,
                          "rows_dropped": dict(sorted(summary.dropped.items()))})
        self._write_text(stable_json(stats), "validate/summary.json")
        return report

    def run_networks(self) -> List[BipartiteNetwork]:
        networks = self.networks()
        panel = self.panel()
        for net in networks:
            self.written.append(write_rca(rca_matrix(panel, net.year), self.out / "networks"))
            self.written.extend(write_network(net, self.out / "networks"))
        counts = [motif_frame(count_motifs(net, self.groups)) for net in networks]
        self._write_csv(pd.concat(counts, ignore_index=True), "motifs/motif_counts.csv")
        return networks

    def run_zscores(self) -> pd.DataFrame:
        frame = self.zscores()
        target = self.out / "zscores" / "zscores.csv"
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(self._zscore_cache(), target)
        self.written.append(target)
        return frame

    def run_panel(self) -> List[Any]:
        panel = self.panel()
        z = self.zscores()
        models = list(self.config.models)
        if not models:
            raise ConfigError("no model specifications configured")

        def estimate(spec: ModelSpec):
            dataset = build_dataset(panel, z, spec, self.groups, self.taxonomy)
            return fit_fe(dataset)

        results = self._map(estimate, models)
        for result in results:
            self._write_csv(result.to_frame(), f"panel/{sanitize_filename(result.name)}.csv")
        self._write_csv(pd.DataFrame([r.summary() for r in results]), "panel/models.csv")
        self._write_text(format_table(results), "panel/model_table.txt")

        pooled = build_dataset(panel, z, self._descriptive_spec(models), self.groups, self.taxonomy)
        self._write_csv(descriptive_statistics(pooled), "panel/descriptives.csv")
        self._write_csv(correlation_table(pooled), "panel/correlations.csv")
        return results

    def run_report(self) -> List[Path]:
        panel = self.panel()
        networks = self.run_networks()
        z = self.run_zscores()
        base_years = [y for y in panel.years if y >= self.config.base_year]
        tables = {
            "base_year_correlation.csv": self.figures.create_base_year_correlations(
                panel, self.config.base_year, base_years, self.config.log_transform, self.config.threshold),
            "distributions.csv": self.figures.create_distribution_summary(panel),
            "cee_link_share.csv": self.figures.create_cee_link_share(networks),
            "zscore_series.csv": self.figures.create_zscore_series(z),
            "node_zscores.csv": self.figures.create_node_zscores(z),
            "sector_group_zscores.csv": self.figures.create_sector_group_series(z),
        }
        return [self._write_csv(df, f"figures/{name}") for name, df in tables.items()]

    def finish(self) -> Path:
        """Write run_config.json and merge checksums into the manifest."""
        self._write_text(stable_json(self.config.outputs_dict()), "run_config.json")
        files = sorted(set(self.written))
        return update_manifest(self.out, files, self.config_hash, self.config.seed)

    # Cached intermediate results

    def panel(self) -> EmploymentPanel:
        if self._panel is None:
            path = self.config.resolve(self.config.panel_path)
            if path is None:
                raise ConfigError("no panel_path in the configuration")
            panel = self.processor.load_panel(path)
            if self.config.aggregate_sectors:
                panel = self.processor.aggregate_sectors(panel, self.taxonomy)
            self._panel = panel
        return self._panel

    def networks(self) -> List[BipartiteNetwork]:
        if self._networks is None:
            panel = self.panel()
            threshold = self.config.threshold

            def build(year: int) -> BipartiteNetwork:
                net = binarize(rca_matrix(panel, year), threshold)
                return net.labelled(self.groups, self.taxonomy)

            self._networks = self._map(build, self.config.network_year_list)
            logger.info(f"Built {len(self._networks)} networks "
                        f"({self.config.network_years[0]}-{self.config.network_years[1]})")
        return self._networks

    def zscores(self) -> pd.DataFrame:
        """Z-scores of every year, computed once per input fingerprint and kept on disk."""
        if self._zscores is not None:
            return self._zscores
        cache = self._zscore_cache()
        if cache.exists():
            logger.info(f"Using cached z-scores {cache.name}")
        else:
            networks = self.networks()
            scored = self._map(self._score_year, networks)
            results = [r for year_results, _ in scored for r in year_results]
            for _, models in scored:
                for model, label in models:
                    self.written.append(write_model(model, self.out / "zscores", label))
            write_csv(zscore_frame(results), cache)
        self._zscores = pd.read_csv(cache, dtype=ZSCORE_DTYPES, keep_default_na=True, float_precision="round_trip")
        return self._zscores

    # Helpers

    def _score_year(self, net: BipartiteNetwork) -> Tuple[list, list]:
        config = self.config
        seed = year_seed(config.seed, net.year)
        results, models = [], []
        if config.null_mode in ("full", "both"):
            model = self.solver.fit_network(net)
            results.extend(zscores(net, model, self.groups, n=config.samples, seed=seed))
            models.append((model, ""))
        if config.null_mode in ("restricted", "both"):
            restricted, model = restricted_zscores(net, self.groups, config.restricted_group, self.solver,
                                                   n=config.samples, seed=seed)
            results.extend(restricted)
            models.append((model, f"restricted_{config.restricted_group}"))
        return results, models

    def _zscore_cache(self) -> Path:
        return self.out / "cache" / f"zscores_{self.config.input_fingerprint()[:16]}.csv"

    def _descriptive_spec(self, models: Sequence[ModelSpec]) -> ModelSpec:
        regressors = tuple(r for r in ("overall", "internal", "external")
                           if any(r in m.regressors for m in models))
        controls = tuple(dict.fromkeys(c for m in models for c in m.controls))
        return ModelSpec("descriptives", regressors=regressors, controls=controls,
                         null_model=models[0].null_model)

    def _map(self, function: Callable, items: Sequence) -> list:
        """Ordered parallel map; results never depend on the thread count."""
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            return list(pool.map(function, items))

    def _write_csv(self, df: pd.DataFrame, relative: str) -> Path:
        path = write_csv(df, self.out / relative)
        self.written.append(path)
        return path

    def _write_text(self, text: str, relative: str) -> Path:
        path = write_text(text, self.out / relative)
        self.written.append(path)
        return path


def year_seed(seed: int, year: int) -> int:
    """Independent master seed for one year's ensemble."""
    return int(np.random.SeedSequence([int(seed), int(year)]).generate_state(1, dtype=np.uint32)[0])


def _exit_on_error(command: Callable) -> Callable:
    """Turn pipeline errors into their exit codes."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except CospecError as e:
            logger.error(str(e))
            typer.echo(f"Error: {e}", err=True)
            raise typer.Exit(code=e.exit_code)

    return wrapper


def _pipeline(ctx: typer.Context) -> CospecPipeline:
    options: CliOptions = ctx.obj or CliOptions()
    config = load_config(options.config)
    config = config.with_overrides(
        seed=options.seed,
        samples=options.samples,
        network_years=parse_years(options.years) if options.years else None,
        out_dir=str(options.out.resolve()) if options.out is not None else None,
        threads=options.threads,
        tolerance=options.tolerance,
    )
    logger.debug(f"Config hash {config.config_hash()}")
    return CospecPipeline(config)


@app.callback()
def main_options(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="JSON run configuration."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Master random seed."),
    samples: Optional[int] = typer.Option(None, "--samples", min=2, help="Ensemble size per year."),
    years: Optional[str] = typer.Option(None, "--years", help="Network years, e.g. 2000-2014."),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory."),
    threads: Optional[int] = typer.Option(None, "--threads", min=1, help="Worker threads."),
    tolerance: Optional[float] = typer.Option(None, "--tolerance", min=0.0, help="Null-model fit tolerance."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging."),
):
    """Global options shared by every stage."""
    setup_logging(verbose)
    ctx.obj = CliOptions(config, seed, samples, years, out, threads, tolerance)


@app.command()
@_exit_on_error
def validate(ctx: typer.Context):
    """Load the panel and report gaps, zero-employment cells and coverage."""
    pipeline = _pipeline(ctx)
    report = pipeline.run_validate()
    pipeline.finish()
    kinds = report.to_frame()["kind"].value_counts().sort_index() if report.issues else {}
    typer.echo(f"Panel checked: {len(report.issues)} issue(s)")
    for kind, count in dict(kinds).items():
        typer.echo(f"  {kind}: {count}")


@app.command()
@_exit_on_error
def networks(ctx: typer.Context):
    """Write RCA matrices, binary networks and motif counts for each year."""
    pipeline = _pipeline(ctx)
    built = pipeline.run_networks()
    pipeline.finish()
    typer.echo(f"Wrote {len(built)} yearly networks to {pipeline.out / 'networks'}")


@app.command("zscores")
@_exit_on_error
def zscores_command(ctx: typer.Context):
    """Score motif counts against the null-model ensemble."""
    pipeline = _pipeline(ctx)
    pipeline.run_networks()
    frame = pipeline.run_zscores()
    pipeline.finish()
    typer.echo(f"Wrote {len(frame)} z-scores ({int(frame['degenerate'].sum())} degenerate) "
               f"to {pipeline.out / 'zscores'}")


@app.command()
@_exit_on_error
def panel(ctx: typer.Context):
    """Estimate the fixed-effect models and write their tables."""
    pipeline = _pipeline(ctx)
    results = pipeline.run_panel()
    pipeline.finish()
    for result in results:
        typer.echo(f"{result.name}: {result.n_obs} observations, {result.n_groups} units, "
                   f"within R2 {result.r2_within:.3f}")


@app.command()
@_exit_on_error
def report(ctx: typer.Context):
    """Write the plot-ready figure tables with a checksum manifest."""
    pipeline = _pipeline(ctx)
    files = pipeline.run_report()
    manifest = pipeline.finish()
    typer.echo(f"Wrote {len(files)} figure tables; manifest at {manifest}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; usage errors exit with 1."""
    try:
        result = app(args=list(argv) if argv is not None else None, prog_name="cospec", standalone_mode=False)
    except click.exceptions.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
