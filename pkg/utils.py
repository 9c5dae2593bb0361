import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import coloredlogs
import numpy as np
import pandas as pd

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

_logging_ready = False


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Install coloured console logging once per process."""
    global _logging_ready
    level = "DEBUG" if verbose else "INFO"
    if not _logging_ready:
        coloredlogs.install(level=level, fmt=LOG_FORMAT)
        _logging_ready = True
    else:
        logging.getLogger().setLevel(level)
    return logging.getLogger("cospec")


def format_coefficient(value: float, digits: int = 3) -> str:
    """Format a regression number for the text table; blank when missing."""
    if value is None or pd.isna(value):
        return ""
    return f"{value:.{digits}f}"


def significance_stars(p_value: float) -> str:
    if p_value is None or pd.isna(p_value):
        return ""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.1:
        return "*"
    return ""


def sanitize_filename(filename: str) -> str:
    """Sanitize a label for use inside a file name."""
    sanitized = re.sub(r'[<>:"/\\|?*\s]+', "_", filename)
    if len(sanitized) > 100:
        sanitized = sanitized[:100]
    return sanitized


def stable_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, no whitespace variation."""
    return json.dumps(data, sort_keys=True, indent=2, default=_json_default) + "\n"


def stable_hash(data: Any) -> str:
    """SHA-256 of the canonical JSON form of `data`."""
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    """Write a frame so that identical frames give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", na_rep="")
    return path


def write_text(text: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return path


def update_manifest(out_dir: Path, files: Iterable[Path], config_hash: str, seed: Optional[int]) -> Path:
    """Merge checksums of `files` into `<out_dir>/manifest.json`."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    manifest: Dict[str, Any] = {"config_hash": config_hash, "seed": seed, "files": {}}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as handle:
            previous = json.load(handle)
        if previous.get("config_hash") == config_hash:
            manifest["files"] = previous.get("files", {})

    for path in files:
        path = Path(path)
        relative = path.relative_to(out_dir).as_posix()
        manifest["files"][relative] = {
            "sha256": file_sha256(path),
            "config_hash": config_hash,
            "seed": seed,
        }

    return write_text(stable_json(manifest), manifest_path)


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
