"""
Persistence layer - snapshots and run output files only.
No simulation logic or interpretation of data.
"""
import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from diagnostics import CSV_COLUMNS, DiagnosticRecord
from evolution import ModelParams, SimState
from spectral_core import ScalarField, forward_transform, inverse_transform, make_grid

OUTPUT_ROOT = Path(os.environ.get("FRACFLOW_OUTPUT_ROOT", "runs"))

MAGIC = b"FRFL"
VERSION = 1
VARIANT_TAGS = {
    "sqg_physical": 0,
    "sqg_scaled": 1,
    "boussinesq_physical": 2,
    "boussinesq_scaled": 3,
    "linear_scaled": 4,
}
FIELD_TAGS = {"z": 0, "w": 1, "theta": 2}

# magic, version, n, box_length, alpha, beta, variant tag, time, field count
_HEADER = struct.Struct("<4sIIdddBdI")
_FIELD_TAG = struct.Struct("<B")

FIT_COLUMNS = ("field", "column", "exponent", "intercept", "r_squared", "t_min", "t_max",
               "expected", "status")

PathLike = Union[str, Path]


class SnapshotFormatError(ValueError):
    """Raised when a snapshot file is not a valid version-1 snapshot."""
    pass


class SnapshotMismatchError(ValueError):
    """Raised when a snapshot does not match the grid or variant it is resumed with."""
    pass


@dataclass
class SnapshotHeader:
    """Everything in a snapshot except the field values."""
    version: int
    n: int
    box_length: float
    alpha: float
    beta: float
    variant: str
    time: float
    field_names: List[str]


# --- Snapshots ---

def write_snapshot(state: SimState, params: ModelParams, path: PathLike) -> None:
    """Write real-space samples of every field, little-endian, row-major."""
    grid = params.grid
    header = _HEADER.pack(MAGIC, VERSION, grid.n, grid.box_length, params.alpha, params.beta,
                          VARIANT_TAGS[params.variant], state.time, len(state.fields))
    chunks = [header]
    for name, F in state.fields.items():
        if F.grid != grid:
            raise SnapshotMismatchError(f"field {name} is not on the run grid")
        chunks.append(_FIELD_TAG.pack(FIELD_TAGS[name]))
        chunks.append(np.ascontiguousarray(inverse_transform(F).values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _parse_header(blob: bytes) -> Tuple[SnapshotHeader, int]:
    if len(blob) < _HEADER.size:
        raise SnapshotFormatError(f"truncated header: {len(blob)} bytes")
    magic, version, n, box, alpha, beta, tag, time, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    variants = {v: k for k, v in VARIANT_TAGS.items()}
    if tag not in variants:
        raise SnapshotFormatError(f"unknown variant tag {tag}")
    header = SnapshotHeader(version=version, n=n, box_length=box, alpha=alpha, beta=beta,
                            variant=variants[tag], time=time, field_names=[])
    return header, count


def _parse(blob: bytes) -> Tuple[SnapshotHeader, Dict[str, np.ndarray]]:
    header, count = _parse_header(blob)
    names = {v: k for k, v in FIELD_TAGS.items()}
    size = header.n * header.n * 8
    offset = _HEADER.size
    values = {}
    for _ in range(count):
        if offset + _FIELD_TAG.size + size > len(blob):
            raise SnapshotFormatError("truncated field data")
        (tag,) = _FIELD_TAG.unpack_from(blob, offset)
        if tag not in names:
            raise SnapshotFormatError(f"unknown field tag {tag}")
        offset += _FIELD_TAG.size
        data = np.frombuffer(blob, dtype="<f8", count=header.n * header.n, offset=offset)
        values[names[tag]] = data.reshape(header.n, header.n).astype(float)
        offset += size
    if offset != len(blob):
        raise SnapshotFormatError(f"{len(blob) - offset} trailing bytes after the last field")
    header.field_names = list(values)
    return header, values


def read_snapshot_header(path: PathLike) -> SnapshotHeader:
    header, _ = _parse(Path(path).read_bytes())
    return header


def read_snapshot(path: PathLike, expected: Optional[ModelParams] = None) -> SimState:
    """
    Load a snapshot; real-space values come back bit for bit.

    Raises:
        SnapshotFormatError: bad magic/version, unknown tags, truncation
        SnapshotMismatchError: grid or variant differs from expected
    """
    header, values = _parse(Path(path).read_bytes())
    grid = make_grid(header.n, header.box_length)
    if expected is not None:
        if expected.grid != grid:
            raise SnapshotMismatchError(
                f"snapshot grid n={header.n}, L={header.box_length} does not match "
                f"n={expected.grid.n}, L={expected.grid.box_length}"
            )
        if expected.variant != header.variant:
            raise SnapshotMismatchError(
                f"snapshot variant {header.variant} does not match {expected.variant}"
            )
        if (expected.alpha, expected.beta) != (header.alpha, header.beta):
            raise SnapshotMismatchError(
                f"snapshot (alpha, beta)=({header.alpha}, {header.beta}) does not match "
                f"({expected.alpha}, {expected.beta})"
            )
    fields = {name: forward_transform(ScalarField.from_array(grid, v)) for name, v in values.items()}
    return SimState(time=header.time, fields=fields)


# --- Run outputs ---

def _format(value) -> str:
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_series_csv(path: PathLike, records: Iterable[DiagnosticRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for record in records:
            writer.writerow({k: _format(v) for k, v in record.as_row().items()})


def read_series_csv(path: PathLike) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_fit_csv(path: PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "nan")) for k in FIT_COLUMNS})


def write_meta(path: PathLike, config_text: str, extra: Dict[str, str]) -> None:
    """Config echo followed by `key = value` metadata lines."""
    lines = [config_text.rstrip("\n")]
    lines.extend(f"{k} = {v}" for k, v in extra.items())
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path: PathLike) -> Dict[str, str]:
    meta = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            meta[key] = value
    return meta


def mark_failed(run_dir: PathLike, message: str) -> None:
    """Drop a FAILED sentinel holding the error message."""
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    (Path(run_dir) / "FAILED").write_text(message.rstrip("\n") + "\n")


def clear_failed(run_dir: PathLike) -> None:
    sentinel = Path(run_dir) / "FAILED"
    if sentinel.exists():
        sentinel.unlink()


def snapshot_name(time: float) -> str:
    return f"snapshot_{time:.6f}.frfl"
