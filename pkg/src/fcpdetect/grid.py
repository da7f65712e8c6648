"""Image grids and file I/O.

A grid is a 2-D float64 numpy array in row-major order. Two on-disk formats
are supported:

* ``ascii-matrix``: UTF-8 text, one row per line, space-separated decimal
  numbers.
* ``raw-f64-le``: a little-endian IEEE-754 float64 payload with a sidecar
  JSON header ``{"rows": R, "cols": C}``. The header lives next to the
  payload as ``<payload>.json`` unless another path is given.
"""

import json
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError, StructuralError

FORMATS = ("ascii-matrix", "raw-f64-le")


def as_grid(values) -> np.ndarray:
    """Validate and return ``values`` as a 2-D float64 grid.

    Raises ParameterError for anything that is not a nonempty 2-D array of
    finite numbers.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"grid must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"grid must be nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ParameterError(f"grid contains non-finite value at pixel ({bad[0]}, {bad[1]})")
    return arr


def as_mask(mask, shape=None) -> np.ndarray:
    """Validate a boolean mask, optionally against an expected shape."""
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        raise ParameterError(f"mask must be boolean, got dtype {arr.dtype}")
    if arr.ndim != 2:
        raise ParameterError(f"mask must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise StructuralError(f"mask shape {arr.shape} does not match grid shape {tuple(shape)}")
    return arr


def _header_path(path, header_path=None) -> Path:
    return Path(header_path) if header_path is not None else Path(str(path) + ".json")


def load_ascii(path) -> np.ndarray:
    """Parse an ascii-matrix file into a grid."""
    rows = []
    ncols = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            row = []
            for pos, tok in enumerate(tokens, start=1):
                try:
                    val = float(tok)
                except ValueError:
                    raise ParseError(
                        f"{path}: line {lineno}, field {pos}: not a number: {tok!r}"
                    ) from None
                if not np.isfinite(val):
                    raise ParseError(f"{path}: line {lineno}, field {pos}: non-finite value {tok!r}")
                row.append(val)
            if ncols is None:
                ncols = len(row)
            elif len(row) != ncols:
                raise StructuralError(
                    f"{path}: line {lineno}: expected {ncols} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise StructuralError(f"{path}: file contains no rows")
    return np.array(rows, dtype=np.float64)


def save_ascii(path, grid) -> None:
    grid = as_grid(grid)
    with open(path, "w", encoding="utf-8") as fh:
        for row in grid:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_raw(path, header_path=None) -> np.ndarray:
    """Load a raw-f64-le payload plus its JSON sidecar header."""
    hpath = _header_path(path, header_path)
    try:
        with open(hpath, encoding="utf-8") as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise StructuralError(f"{path}: missing header file {hpath}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{hpath}: invalid JSON: {exc}") from None
    if not isinstance(header, dict) or "rows" not in header or "cols" not in header:
        raise StructuralError(f"{hpath}: header must be an object with 'rows' and 'cols'")
    rows, cols = header["rows"], header["cols"]
    if not (isinstance(rows, int) and isinstance(cols, int) and rows > 0 and cols > 0):
        raise StructuralError(f"{hpath}: rows/cols must be positive integers, got {rows!r}, {cols!r}")
    payload = Path(path).read_bytes()
    if len(payload) != 8 * rows * cols:
        raise StructuralError(
            f"{path}: payload is {len(payload)} bytes, header declares "
            f"{rows}x{cols} = {8 * rows * cols} bytes"
        )
    values = np.frombuffer(payload, dtype="<f8")
    if not np.all(np.isfinite(values)):
        offset = int(np.flatnonzero(~np.isfinite(values))[0])
        raise StructuralError(f"{path}: non-finite value at element offset {offset}")
    return values.reshape(rows, cols).astype(np.float64)


def save_raw(path, grid, header_path=None) -> None:
    grid = as_grid(grid)
    Path(path).write_bytes(np.ascontiguousarray(grid, dtype="<f8").tobytes())
    header = {"rows": int(grid.shape[0]), "cols": int(grid.shape[1])}
    with open(_header_path(path, header_path), "w", encoding="utf-8") as fh:
        json.dump(header, fh)
        fh.write("\n")


def load_image(path, fmt: str) -> np.ndarray:
    """Load a grid in one of the supported formats ("ascii-matrix" or "raw-f64-le")."""
    if fmt == "ascii-matrix":
        return load_ascii(path)
    if fmt == "raw-f64-le":
        return load_raw(path)
    raise ParameterError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def save_image(path, grid, fmt: str) -> None:
    if fmt == "ascii-matrix":
        save_ascii(path, grid)
    elif fmt == "raw-f64-le":
        save_raw(path, grid)
    else:
        raise ParameterError(f"unknown format {fmt!r}; expected one of {FORMATS}")
