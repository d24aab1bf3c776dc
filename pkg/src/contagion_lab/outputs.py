"""Deterministic file emission: CSV and JSON writers with 17-significant-
digit floats, plus the run manifest with per-file content hashes."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path


def fmt(value) -> str:
    """Render a number with 17 significant digits; infinities spelled out."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
    if hasattr(obj, "item") and not hasattr(obj, "__len__"):
        return _jsonable(obj.item())
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=1) + "\n")


def sha256_of(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, config: dict, files, versions: dict) -> Path:
    manifest = {
        "config": _jsonable(config),
        "versions": versions,
        "files": {f.name: sha256_of(f) for f in sorted(files)},
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path
