"""Co-specialization motif counts: two countries specialized in one sector.

The `*_array` kernels accept 0/1 integer arrays of shape (..., C, S) so the
same code counts one observed network or a whole stack of ensemble samples.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from rca_network import BipartiteNetwork
from taxonomy import CEE, EU15, GROUP_LABELS, CountryGroups


@dataclass(frozen=True)
class MotifDecomposition:
    internal: Dict[str, int]
    external: int

    def as_tuple(self) -> Tuple[int, int, int]:
        """(EU15 internal, CEE internal, external)."""
        return self.internal.get(EU15, 0), self.internal.get(CEE, 0), self.external


@dataclass(frozen=True)
class MotifCounts:
    year: int
    countries: Tuple[str, ...]
    sectors: Tuple[str, ...]
    total: int
    internal: Dict[str, int]
    external: int
    node: np.ndarray
    node_internal: np.ndarray
    node_external: np.ndarray


def motif_total_array(matrices: np.ndarray) -> np.ndarray:
    """Motif count per matrix: sum over sectors of u_s choose 2."""
    u = matrices.sum(axis=-2, dtype=np.int64)
    return (u * (u - 1)).sum(axis=-1) // 2


def group_ubiquity_array(matrices: np.ndarray, labels: np.ndarray, groups: Sequence[str]) -> Dict[str, np.ndarray]:
    return {g: matrices[..., labels == g, :].sum(axis=-2, dtype=np.int64) for g in groups}


def decompose_array(matrices: np.ndarray, labels: np.ndarray,
                    groups: Sequence[str]) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Internal count per group and the cross-group (external) count."""
    ubiquity = group_ubiquity_array(matrices, labels, groups)
    internal = {g: (u * (u - 1)).sum(axis=-1) // 2 for g, u in ubiquity.items()}

    # Pairs with one specialist from each of two different groups
    stacked = np.stack(list(ubiquity.values()))
    total = stacked.sum(axis=0)
    external = ((total * total - (stacked * stacked).sum(axis=0)) // 2).sum(axis=-1)
    return internal, external


def node_array(matrices: np.ndarray) -> np.ndarray:
    """(u_s - 1) * M_cs for every cell."""
    m = matrices.astype(np.int64, copy=False)
    u = m.sum(axis=-2, keepdims=True)
    return (u - 1) * m


def node_decompose_array(matrices: np.ndarray, labels: np.ndarray,
                         groups: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell partners inside the country's own group and outside it."""
    m = matrices.astype(np.int64, copy=False)
    u = m.sum(axis=-2, keepdims=True)
    own = np.zeros_like(m)
    for g in groups:
        rows = labels == g
        u_g = m[..., rows, :].sum(axis=-2, keepdims=True)
        own[..., rows, :] = np.broadcast_to(u_g, m[..., rows, :].shape)
    internal = (own - 1) * m
    external = (u - own) * m
    return internal, external


def motif_total(net: BipartiteNetwork) -> int:
    return int(motif_total_array(net.matrix))


def motif_decompose(net: BipartiteNetwork, groups: CountryGroups) -> MotifDecomposition:
    labels, names = _labels(net, groups)
    internal, external = decompose_array(net.matrix, labels, names)
    return MotifDecomposition({g: int(v) for g, v in internal.items()}, int(external))


def motif_node(net: BipartiteNetwork) -> np.ndarray:
    return node_array(net.matrix)


def motif_node_decompose(net: BipartiteNetwork, groups: CountryGroups) -> Tuple[np.ndarray, np.ndarray]:
    """(internal, external) C x S count matrices."""
    labels, names = _labels(net, groups)
    return node_decompose_array(net.matrix, labels, names)


def count_motifs(net: BipartiteNetwork, groups: CountryGroups) -> MotifCounts:
    """Every motif count of one network."""
    decomposition = motif_decompose(net, groups)
    node_internal, node_external = motif_node_decompose(net, groups)
    return MotifCounts(
        year=net.year,
        countries=net.countries,
        sectors=net.sectors,
        total=motif_total(net),
        internal=decomposition.internal,
        external=decomposition.external,
        node=motif_node(net),
        node_internal=node_internal,
        node_external=node_external,
    )


def motif_frame(counts: MotifCounts, include_nodes: bool = True) -> pd.DataFrame:
    """Tidy rows: year, level, group, country, sector, scope, count."""
    rows: List[Dict[str, object]] = [
        _row(counts.year, "network", "overall", counts.total),
    ]
    for group in sorted(counts.internal):
        rows.append(_row(counts.year, "group", "internal", counts.internal[group], group=group))
    rows.append(_row(counts.year, "group", "external", counts.external))
    df = pd.DataFrame(rows)

    if include_nodes:
        c_idx, s_idx = np.indices(counts.node.shape).reshape(2, -1)
        countries = np.asarray(counts.countries, dtype=object)[c_idx]
        sectors = np.asarray(counts.sectors, dtype=object)[s_idx]
        frames = [df]
        for scope, matrix in (("overall", counts.node), ("internal", counts.node_internal),
                              ("external", counts.node_external)):
            frames.append(pd.DataFrame({
                "year": counts.year,
                "level": "node",
                "group": None,
                "country": countries,
                "sector": sectors,
                "scope": scope,
                "count": matrix[c_idx, s_idx],
            }))
        df = pd.concat(frames, ignore_index=True)
    df["count"] = df["count"].astype(np.int64)
    return df


def _row(year: int, level: str, scope: str, count: int, group: Optional[str] = None) -> Dict[str, object]:
    return {"year": year, "level": level, "group": group, "country": None, "sector": None,
            "scope": scope, "count": int(count)}


def _labels(net: BipartiteNetwork, groups: CountryGroups) -> Tuple[np.ndarray, List[str]]:
    labels = np.array(groups.label_countries(net.countries), dtype=object)
    names = sorted(set(GROUP_LABELS) | set(labels.tolist()))
    return labels, names
