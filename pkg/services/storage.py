"""CSV curve files and the FSPC raw-spectra binary format."""
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Union

import numpy as np

from config import settings
from services.errors import DimensionMismatch, EmptyInput
from services.transforms import DensityCurve, Spectrum

logger = logging.getLogger(__name__)

SPECTRA_MAGIC = b"FSPC"
SPECTRA_VERSION = 1
SPECTRA_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("n", "<u8"),
    ("realizations", "<u8"),
])

PathLike = Union[str, Path]


def format_value(value) -> str:
    """Shortest text that round-trips a double; integers and booleans stay integral"""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def header_line(seed: Optional[int], canonical_flags: str) -> str:
    return f"# freespec v{settings.version} seed={'none' if seed is None else seed} cmd={canonical_flags}"


def curve_columns(curve: DensityCurve, density_name: str = "density") -> Dict[str, np.ndarray]:
    columns = {
        "lambda": curve.grid,
        density_name: curve.values,
        "converged": curve.valid,
    }
    if curve.iterations is not None:
        columns["iters"] = np.asarray(curve.iterations, dtype=int)
    return columns


def write_table(target: Optional[PathLike], columns: Dict[str, Sequence], header: Optional[str] = None) -> None:
    """Write equal-length columns as CSV with an optional comment line; '-' or None means stdout"""
    lengths = {len(v) for v in columns.values()}
    if len(lengths) > 1:
        raise DimensionMismatch(f"columns differ in length: {sorted(lengths)}")
    buffer = io.StringIO()
    if header:
        buffer.write(header + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(columns))
    for row in zip(*columns.values()):
        writer.writerow([format_value(v) for v in row])

    if target is None or str(target) == "-":
        sys.stdout.write(buffer.getvalue())
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    logger.info(f"Wrote {path} ({lengths.pop() if lengths else 0} rows)")


def write_curve_csv(target: Optional[PathLike], curve: DensityCurve, header: Optional[str] = None,
                    extra: Optional[Dict[str, Sequence]] = None) -> None:
    columns = curve_columns(curve)
    columns.update(extra or {})
    write_table(target, columns, header)


def _read_rows(handle: TextIO) -> List[Dict[str, str]]:
    lines = [line for line in handle if line.strip() and not line.startswith("#")]
    return list(csv.DictReader(lines))


def read_curve_csv(path: PathLike, density_column: str = "density") -> DensityCurve:
    """Read a curve written by write_curve_csv (or any CSV with lambda and density columns)"""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = _read_rows(handle)
    if not rows:
        raise EmptyInput(f"{path} holds no rows")
    if "lambda" not in rows[0] or density_column not in rows[0]:
        raise ValueError(f"{path} needs 'lambda' and '{density_column}' columns")
    grid = np.array([float(r["lambda"]) for r in rows])
    values = np.array([float(r[density_column]) for r in rows])
    valid = None
    if "converged" in rows[0]:
        valid = np.array([r["converged"].strip() == "1" for r in rows])
    return DensityCurve(grid=grid, values=np.clip(values, 0.0, None), valid=valid)


def write_spectra(path: PathLike, spectra: Sequence[Spectrum]) -> None:
    """Little-endian header (magic, u32 version, u64 N, u64 realizations), then f64 eigenvalues"""
    if not spectra:
        raise EmptyInput("no spectra to write")
    n = spectra[0].n
    if any(s.n != n for s in spectra):
        raise DimensionMismatch("all spectra must have the same size")
    header = np.zeros(1, dtype=SPECTRA_HEADER)
    header["magic"] = SPECTRA_MAGIC
    header["version"] = SPECTRA_VERSION
    header["n"] = n
    header["realizations"] = len(spectra)
    body = np.concatenate([s.eigenvalues for s in spectra]).astype("<f8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.tobytes() + body.tobytes())
    logger.info(f"Wrote {len(spectra)} spectra of size {n} to {path}")


def read_spectra(path: PathLike) -> List[Spectrum]:
    raw = Path(path).read_bytes()
    if len(raw) < SPECTRA_HEADER.itemsize:
        raise ValueError(f"{path} is too short for a spectra header")
    header = np.frombuffer(raw[:SPECTRA_HEADER.itemsize], dtype=SPECTRA_HEADER)[0]
    if bytes(header["magic"]) != SPECTRA_MAGIC:
        raise ValueError(f"{path} is not a spectra file")
    if int(header["version"]) != SPECTRA_VERSION:
        raise ValueError(f"unsupported spectra version {int(header['version'])}")
    n, realizations = int(header["n"]), int(header["realizations"])
    body = np.frombuffer(raw[SPECTRA_HEADER.itemsize:], dtype="<f8")
    if body.size != n * realizations:
        raise DimensionMismatch(f"expected {n * realizations} eigenvalues, found {body.size}")
    return [Spectrum(row.copy()) for row in body.reshape(realizations, n)]
