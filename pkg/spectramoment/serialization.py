"""JSON and CSV codecs for matrices, reports and sampled spectra.

Complex numbers are written as [re, im] pairs and matrices as row-major lists of rows,
so a complex p x q matrix is a p x q x 2 nested list. Plain real matrices (p x q lists of
numbers) and plain numbers are accepted on input as well.
"""
from pathlib import Path
from typing import Any, Optional, TextIO, Union
import csv
import json
import sys

import numpy as np

from .numerics import MatrixFunctionSamples

PathLike = Union[str, Path]


class MatrixFormatError(ValueError):
    """A JSON value does not describe a matrix."""

    pass


def encode_matrix(X: Any) -> list:
    X = np.asarray(X, dtype=complex)
    return np.stack([X.real, X.imag], axis=-1).tolist()


def decode_matrix(obj: Any) -> np.ndarray:
    """Inverse of encode_matrix. A number gives a 1 x 1 matrix, a flat list of numbers a
    vector (left to the caller to interpret)."""
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as e:
        raise MatrixFormatError(f"Not a numeric matrix: {obj!r}") from e
    if arr.ndim == 0:
        return arr.reshape(1, 1).astype(complex)
    if arr.ndim in (1, 2):
        return arr.astype(complex)
    if arr.ndim == 3 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    raise MatrixFormatError(
        f"Matrices are lists of rows of numbers or [re, im] pairs, got shape {arr.shape}."
    )


def encode_value(obj: Any) -> Any:
    """Turn reports holding numpy values into JSON-compatible objects."""
    if isinstance(obj, dict):
        return {str(k): encode_value(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode_value(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return encode_matrix(obj)
        return obj.tolist()
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def load_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def dump_json(obj: Any, path: Optional[PathLike] = None) -> str:
    """Write obj as JSON to path, or to STDOUT when no path is given."""
    text = json.dumps(encode_value(obj), indent=2, sort_keys=True)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def write_spectrum_csv(samples: MatrixFunctionSamples, stream: TextIO) -> None:
    """One row per grid angle: theta, then Re and Im of every entry (i, j) with i <= j.

    Indices in the header are one-based, e.g. re_12 and im_12 for the entry (1, 2).
    """
    p = samples.shape[0]
    entries = [(i, j) for i in range(p) for j in range(i, p)]
    header = ["theta"]
    for i, j in entries:
        header.extend([f"re_{i + 1}{j + 1}", f"im_{i + 1}{j + 1}"])
    writer = csv.writer(stream)
    writer.writerow(header)
    for theta, value in zip(samples.grid.angles, samples.values):
        row = [repr(float(theta))]
        for i, j in entries:
            row.extend([repr(float(value[i, j].real)), repr(float(value[i, j].imag))])
        writer.writerow(row)
