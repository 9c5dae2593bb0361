"""Ensemble sampling, exact enumeration and motif z-scores under the null model."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bicm_model import BicmModel, BicmSolver, analytic_motif_mean, log_probability_array
from exceptions import ConfigError, EnumerationLimitError, PanelDataError
from motif_counter import decompose_array, motif_total_array, node_array, node_decompose_array
from rca_network import BipartiteNetwork
from taxonomy import GROUP_LABELS, CountryGroups

logger = logging.getLogger(__name__)

ENUMERATION_BOUND = 20
DEFAULT_SAMPLES = 10_000
CHUNK_SIZE = 250

Statistic = Callable[[np.ndarray], np.ndarray]
StatKey = Tuple[str, str, Optional[str], Optional[str]]

ZSCORE_COLUMNS = [
    "year", "null_model", "level", "scope", "group", "sector_group", "country", "sector",
    "observed", "mean", "sd", "z", "degenerate",
]


@dataclass(frozen=True)
class EnsembleStats:
    statistic: str
    n_samples: int
    mean: float
    std: float
    analytic_mean: Optional[float] = None


@dataclass(frozen=True)
class ZScoreResult:
    year: Optional[int]
    null_model: str
    level: str
    scope: str
    group: Optional[str]
    sector_group: Optional[str]
    country: Optional[str]
    sector: Optional[str]
    observed: float
    mean: float
    sd: float
    z: float
    degenerate: bool


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample `index`, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_matrix(model: BicmModel, seed: int, index: int) -> np.ndarray:
    rng = sample_rng(seed, index)
    return (rng.random(model.shape) < model.probabilities).astype(np.int64)


def sample_stack(model: BicmModel, seed: int, start: int, stop: int) -> np.ndarray:
    """Samples start..stop-1 stacked as a (B, C, S) array."""
    return np.stack([sample_matrix(model, seed, k) for k in range(start, stop)])


def sample(model: BicmModel, n: int, seed: int) -> Iterator[BipartiteNetwork]:
    """Yield n networks; sample k depends only on (seed, k)."""
    if n < 1:
        raise ConfigError(f"sample count must be at least 1, got {n}")
    for k in range(n):
        yield BipartiteNetwork(model.year if model.year is not None else 0, model.countries, model.sectors,
                               sample_matrix(model, seed, k))


def exact_ensemble_stats(model: BicmModel, statistic: Statistic, name: str = "statistic",
                         bound: int = ENUMERATION_BOUND) -> EnsembleStats:
    """Mean and sd of a statistic over every binary matrix, weighted by its probability."""
    C, S = model.shape
    cells = C * S
    if cells > bound:
        raise EnumerationLimitError(f"exact enumeration needs C*S <= {bound}, got {C}x{S}={cells}")

    p = model.probabilities
    total = 1 << cells
    chunk = min(total, 1 << 16)
    weights, values = [], []
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((idx[:, None] >> np.arange(cells, dtype=np.int64)) & 1).reshape(-1, C, S)
        weights.append(np.exp(log_probability_array(p, bits)))
        values.append(np.asarray(statistic(bits), dtype=float))
    w = np.concatenate(weights)
    v = np.concatenate(values)

    mass = w.sum()
    mean = float((w * v).sum() / mass)
    variance = float((w * (v - mean) ** 2).sum() / mass)
    analytic = analytic_motif_mean(model) if name == "motif_total" else None
    return EnsembleStats(name, total, mean, float(np.sqrt(variance)), analytic)


def motif_statistics(matrices: np.ndarray, labels: np.ndarray, group_names: Sequence[str],
                     sector_groups: Optional[Dict[str, np.ndarray]] = None,
                     include_nodes: bool = True) -> Dict[StatKey, np.ndarray]:
    """Every motif statistic of a (B, C, S) stack, keyed by (level, scope, group, sector group)."""
    stats: Dict[StatKey, np.ndarray] = {
        ("network", "overall", None, None): motif_total_array(matrices),
    }
    internal, external = decompose_array(matrices, labels, group_names)
    for g in group_names:
        stats[("group", "internal", g, None)] = internal[g]
    stats[("group", "external", None, None)] = external

    if include_nodes:
        node_internal, node_external = node_decompose_array(matrices, labels, group_names)
        stats[("node", "overall", None, None)] = node_array(matrices)
        stats[("node", "internal", None, None)] = node_internal
        stats[("node", "external", None, None)] = node_external

    for sector_group, mask in (sector_groups or {}).items():
        sub = matrices[..., mask]
        stats[("sector_group", "overall", None, sector_group)] = motif_total_array(sub)
        sub_internal, sub_external = decompose_array(sub, labels, group_names)
        for g in group_names:
            stats[("sector_group", "internal", g, sector_group)] = sub_internal[g]
        stats[("sector_group", "external", None, sector_group)] = sub_external
    return stats


def zscores(
    net: BipartiteNetwork,
    model: BicmModel,
    groups: CountryGroups,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    threads: int = 1,
    include_nodes: bool = True,
    null_model: str = "full",
) -> List[ZScoreResult]:
    """Observed motif statistics scored against n ensemble samples."""
    if n < 2:
        raise ConfigError(f"z-scores need at least 2 samples, got {n}")
    if net.matrix.shape != model.shape:
        raise PanelDataError(f"network shape {net.matrix.shape} does not match model shape {model.shape}")

    labels = np.array(groups.label_countries(net.countries), dtype=object)
    group_names = sorted(set(GROUP_LABELS) | set(labels.tolist()))
    sector_groups = _sector_group_masks(net)

    observed = motif_statistics(net.matrix[None], labels, group_names, sector_groups, include_nodes)
    observed = {key: value[0] for key, value in observed.items()}

    def accumulate(bounds: Tuple[int, int]) -> Dict[StatKey, Tuple[np.ndarray, np.ndarray]]:
        stack = sample_stack(model, seed, *bounds)
        stats = motif_statistics(stack, labels, group_names, sector_groups, include_nodes)
        return {key: (v.sum(axis=0), (v * v).sum(axis=0)) for key, v in stats.items()}

    chunks = [(start, min(start + CHUNK_SIZE, n)) for start in range(0, n, CHUNK_SIZE)]
    sums = {key: np.zeros_like(value, dtype=np.int64) for key, value in observed.items()}
    squares = {key: np.zeros_like(value, dtype=np.int64) for key, value in observed.items()}
    # Integer sums are exact, so the reduction does not depend on thread scheduling
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for partial in pool.map(accumulate, chunks):
            for key, (s1, s2) in partial.items():
                sums[key] += s1
                squares[key] += s2

    results: List[ZScoreResult] = []
    for key, value in observed.items():
        mean, sd = _moments(sums[key], squares[key], n)
        results.extend(_results(net, labels, key, value, mean, sd, null_model))

    n_degenerate = sum(r.degenerate for r in results)
    logger.info(f"Scored {len(results)} motif statistics for {net.year} against {n} samples "
                f"({n_degenerate} degenerate)")
    return results


def restricted_zscores(net: BipartiteNetwork, groups: CountryGroups, group: str, solver: BicmSolver,
                       n: int = DEFAULT_SAMPLES, seed: int = 0,
                       threads: int = 1) -> Tuple[List[ZScoreResult], BicmModel]:
    """Refit the null model on one country group's rows and score that submatrix."""
    members = groups.members(group)
    sub = net.restrict_countries(members)
    if not sub.countries:
        raise PanelDataError(f"no countries of group {group} in the {net.year} network")
    model = solver.fit_network(sub)
    results = zscores(sub, model, groups, n=n, seed=seed, threads=threads, include_nodes=False,
                      null_model=f"restricted:{group}")
    return results, model


def zscore_frame(results: Sequence[ZScoreResult]) -> pd.DataFrame:
    df = pd.DataFrame([asdict(r) for r in results], columns=ZSCORE_COLUMNS)
    df["degenerate"] = df["degenerate"].astype(bool)
    return df


def _moments(s1: np.ndarray, s2: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Population mean and sd from exact integer sums."""
    s1_int = np.asarray(s1, dtype=object)
    s2_int = np.asarray(s2, dtype=object)
    numerator = n * s2_int - s1_int * s1_int
    variance = np.asarray(numerator, dtype=float) / float(n * n)
    mean = np.asarray(s1, dtype=float) / n
    return mean, np.sqrt(np.maximum(variance, 0.0))


def _results(net: BipartiteNetwork, labels: np.ndarray, key: StatKey, observed: np.ndarray, mean: np.ndarray,
             sd: np.ndarray, null_model: str) -> List[ZScoreResult]:
    level, scope, group, sector_group = key
    observed = np.asarray(observed, dtype=float)
    degenerate = sd == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(degenerate, np.nan, (observed - mean) / np.where(degenerate, 1.0, sd))

    if level != "node":
        return [ZScoreResult(net.year, null_model, level, scope, group, sector_group, None, None,
                             float(observed), float(mean), float(sd), float(z), bool(degenerate))]

    results = []
    for c, country in enumerate(net.countries):
        for s, sector in enumerate(net.sectors):
            results.append(ZScoreResult(
                year=net.year,
                null_model=null_model,
                level=level,
                scope=scope,
                group=labels[c],
                sector_group=net.sector_groups[s] if net.sector_groups is not None else None,
                country=country,
                sector=sector,
                observed=float(observed[c, s]),
                mean=float(mean[c, s]),
                sd=float(sd[c, s]),
                z=float(z[c, s]),
                degenerate=bool(degenerate[c, s]),
            ))
    return results


def _sector_group_masks(net: BipartiteNetwork) -> Dict[str, np.ndarray]:
    if net.sector_groups is None:
        return {}
    tags = np.array(net.sector_groups, dtype=object)
    return {g: tags == g for g in dict.fromkeys(net.sector_groups) if g}
