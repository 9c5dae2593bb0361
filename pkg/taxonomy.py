"""Sector taxonomy and country groups used to label the bipartite networks.

Both ship with built-in defaults (the 31 STAN sector classes in 7 groups and
the 21 EU member states split into CEE and EU15) and can be overridden from
a CSV file.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from exceptions import ConfigError, UnknownCodeError

logger = logging.getLogger(__name__)

CEE = "CEE"
EU15 = "EU15"
GROUP_LABELS = (CEE, EU15)

DEFAULT_COUNTRY_GROUPS: Dict[str, List[str]] = {
    CEE: ["CZE", "EST", "HUN", "LVA", "POL", "SVK", "SVN"],
    EU15: [
        "AUT", "BEL", "DEU", "DNK", "ESP", "FIN", "FRA",
        "GBR", "GRC", "ITA", "LUX", "NLD", "PRT", "SWE",
    ],
}

# Spellings seen in published tables
COUNTRY_ALIASES: Dict[str, str] = {"NDL": "NLD"}

DEFAULT_SECTOR_GROUPS: Dict[str, List[str]] = {
    "Primary production": ["D01T03", "D05T09", "D10T12", "D13T15", "D16T18"],
    "Basic manufacturing": ["D19T23", "D24T25"],
    "Manufacturing of capital goods": ["D26T28", "D29T30", "D31T33"],
    "Infrastructure": ["D35T39", "D41T43"],
    "Retail": ["D45T47", "D49T53"],
    "Services": [
        "D55T56", "D58T60", "D61", "D62T63", "D64T66",
        "D68", "D69T71", "D72", "D73T75", "D77T82",
    ],
    "Personal services": ["D84", "D85", "D86T88", "D90T93", "D94T96", "D97T98", "D99"],
}

DEFAULT_GROUP_SIZES = (5, 2, 3, 2, 2, 10, 7)

# Finer STAN activity codes folded into the 31 classes
DEFAULT_RAW_CODES: Dict[str, List[str]] = {
    "D01T03": ["D01T02", "D01", "D02", "D03"],
    "D05T09": ["D05T06", "D07T08", "D09"],
    "D10T12": ["D10", "D11", "D12"],
    "D13T15": ["D13", "D14", "D15"],
    "D16T18": ["D16", "D17", "D18", "D17T18"],
    "D19T23": ["D19", "D20", "D21", "D22", "D23", "D20T21"],
    "D24T25": ["D24", "D25"],
    "D26T28": ["D26", "D27", "D28"],
    "D29T30": ["D29", "D30"],
    "D31T33": ["D31T32", "D33"],
    "D35T39": ["D35", "D36T39", "D36", "D37T39"],
    "D41T43": ["D41", "D42", "D43"],
    "D45T47": ["D45", "D46", "D47"],
    "D49T53": ["D49", "D50", "D51", "D52", "D53"],
    "D55T56": ["D55", "D56"],
    "D58T60": ["D58", "D59T60", "D59", "D60"],
    "D62T63": ["D62", "D63"],
    "D64T66": ["D64", "D65", "D66"],
    "D69T71": ["D69T70", "D69", "D70", "D71"],
    "D73T75": ["D73", "D74T75", "D74", "D75"],
    "D77T82": ["D77", "D78", "D79", "D80T82"],
    "D86T88": ["D86", "D87T88"],
    "D90T93": ["D90T92", "D93"],
    "D94T96": ["D94", "D95", "D96"],
}


@dataclass(frozen=True)
class SectorTaxonomy:
    """Maps raw activity codes to sector classes and classes to sector groups."""

    raw_to_class: Dict[str, str]
    class_to_group: Dict[str, str]
    group_order: Tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def default(cls) -> "SectorTaxonomy":
        class_to_group = {
            code: group for group, codes in DEFAULT_SECTOR_GROUPS.items() for code in codes
        }
        raw_to_class = {code: code for code in class_to_group}
        for sector_class, raw_codes in DEFAULT_RAW_CODES.items():
            for raw in raw_codes:
                raw_to_class[raw] = sector_class
        return cls(raw_to_class, class_to_group, tuple(DEFAULT_SECTOR_GROUPS))

    @classmethod
    def identity(cls, codes: Sequence[str], group: str = "All") -> "SectorTaxonomy":
        """Every code is its own class; all classes share one group."""
        return cls({c: c for c in codes}, {c: group for c in codes}, (group,))

    @classmethod
    def from_csv(cls, path: Path) -> "SectorTaxonomy":
        """Read `raw_code,sector,group` rows."""
        df = pd.read_csv(path, dtype=str).fillna("")
        missing = {"raw_code", "sector", "group"} - set(df.columns)
        if missing:
            raise ConfigError(f"taxonomy file {path} lacks column(s): {', '.join(sorted(missing))}")

        raw_to_class: Dict[str, str] = {}
        class_to_group: Dict[str, str] = {}
        for row in df.itertuples(index=False):
            raw, sector, group = row.raw_code.strip(), row.sector.strip(), row.group.strip()
            if raw in raw_to_class and raw_to_class[raw] != sector:
                raise ConfigError(f"taxonomy file {path} maps raw code {raw} to two classes")
            if sector in class_to_group and class_to_group[sector] != group:
                raise ConfigError(f"taxonomy file {path} puts class {sector} into two groups")
            raw_to_class[raw] = sector
            class_to_group[sector] = group
        group_order = tuple(dict.fromkeys(df["group"].str.strip()))
        logger.info(f"Loaded taxonomy with {len(class_to_group)} classes from {path}")
        return cls(raw_to_class, class_to_group, group_order)

    @property
    def classes(self) -> List[str]:
        return sorted(self.class_to_group)

    @property
    def groups(self) -> List[str]:
        return list(self.group_order) or sorted(set(self.class_to_group.values()))

    def group_sizes(self) -> Tuple[int, ...]:
        counts = pd.Series(list(self.class_to_group.values())).value_counts()
        return tuple(int(counts.get(g, 0)) for g in self.groups)

    def members(self, group: str) -> List[str]:
        return sorted(c for c, g in self.class_to_group.items() if g == group)

    def group_of(self, sector: str) -> Optional[str]:
        return self.class_to_group.get(sector)

    def map_codes(self, codes: Sequence[str]) -> Dict[str, str]:
        """Class of each raw code; raises listing every unmapped code."""
        unmapped = [c for c in codes if c not in self.raw_to_class]
        if unmapped:
            raise UnknownCodeError("sector", unmapped)
        return {c: self.raw_to_class[c] for c in codes}

    def check_partition(self, expected_sizes: Sequence[int] = DEFAULT_GROUP_SIZES) -> None:
        unknown = set(self.raw_to_class.values()) - set(self.class_to_group)
        if unknown:
            raise ConfigError(f"classes without a sector group: {', '.join(sorted(unknown))}")
        if tuple(expected_sizes) != self.group_sizes():
            raise ConfigError(
                f"sector groups have sizes {self.group_sizes()}, expected {tuple(expected_sizes)}"
            )


@dataclass(frozen=True)
class CountryGroups:
    """Maps each country code to a group label (CEE or EU15)."""

    mapping: Dict[str, str]

    @classmethod
    def default(cls) -> "CountryGroups":
        return cls({c: g for g, codes in DEFAULT_COUNTRY_GROUPS.items() for c in codes})

    @classmethod
    def from_csv(cls, path: Path) -> "CountryGroups":
        """Read `country,group` rows."""
        df = pd.read_csv(path, dtype=str)
        if not {"country", "group"} <= set(df.columns):
            raise ConfigError(f"country-group file {path} needs 'country' and 'group' columns")

        mapping: Dict[str, str] = {}
        for country, group in zip(df["country"].str.strip(), df["group"].str.strip()):
            country = COUNTRY_ALIASES.get(country, country)
            if group not in GROUP_LABELS:
                raise ConfigError(f"country {country} has group '{group}', expected one of {GROUP_LABELS}")
            if country in mapping and mapping[country] != group:
                raise ConfigError(f"country {country} appears in both groups")
            mapping[country] = group
        return cls(mapping)

    @property
    def labels(self) -> List[str]:
        return sorted(set(self.mapping.values()))

    def members(self, group: str) -> List[str]:
        return sorted(c for c, g in self.mapping.items() if g == group)

    def label_countries(self, countries: Sequence[str]) -> List[str]:
        """Group label per country, in order; raises on unlabeled countries."""
        unlabeled = [c for c in countries if c not in self.mapping]
        if unlabeled:
            raise UnknownCodeError("unlabeled country", unlabeled)
        return [self.mapping[c] for c in countries]

    def check_sizes(self, expected: Optional[Dict[str, int]] = None) -> None:
        expected = expected or {g: len(c) for g, c in DEFAULT_COUNTRY_GROUPS.items()}
        sizes = {g: len(self.members(g)) for g in expected}
        if sizes != expected:
            raise ConfigError(f"country groups have sizes {sizes}, expected {expected}")


def canonical_country(code: str) -> str:
    code = str(code).strip().upper()
    return COUNTRY_ALIASES.get(code, code)
