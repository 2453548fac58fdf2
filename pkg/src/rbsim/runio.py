"""Provenance fingerprints and byte-stable CSV / JSON / manifest writers.

Every output file begins with the run fingerprint so downstream tools can
refuse mismatched inputs.  Floats are written with ``repr`` (shortest
round-trip), making CSV bodies byte-identical across identical invocations.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Mapping, Sequence

__all__ = [
    "canonical_json",
    "fingerprint_of",
    "write_csv",
    "write_fits_json",
    "write_manifest",
    "read_csv_with_meta",
]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def fingerprint_of(config: Mapping) -> str:
    """Stable 12-hex-digit digest of a configuration mapping."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Mapping], fingerprint: str, config: Mapping) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = [f"# fingerprint={fingerprint}", f"# config={canonical_json(config)}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_fits_json(path: str, fits: Mapping[str, "DecayFit"], fingerprint: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    payload = {"fingerprint": fingerprint, "fits": {k: f.to_record() for k, f in fits.items()}}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_manifest(path: str, payload: Mapping) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def read_csv_with_meta(path: str) -> tuple[str, dict, list[str], list[list[str]]]:
    """Read a study CSV; returns (fingerprint, config, columns, raw rows)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if len(lines) < 3 or not lines[0].startswith("# fingerprint=") or not lines[1].startswith("# config="):
        raise ValueError(f"{path}: missing fingerprint/config header")
    fp = lines[0].split("=", 1)[1]
    config = json.loads(lines[1].split("=", 1)[1])
    columns = lines[2].split(",")
    rows = [ln.split(",") for ln in lines[3:] if ln]
    return fp, config, columns, rows
