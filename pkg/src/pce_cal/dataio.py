"""Bit-exact file I/O for logits, features and labels, plus the split model.

The interchange format is NPY v1.0 (magic ``\\x93NUMPY``, little-endian
payloads) because every deep-learning stack emits it natively; CSV is the
lowest-common-denominator fallback. The writer lays the header out exactly
per the public v1.0 rules (space-padded to a 64-byte multiple, newline
terminated) so third-party tools can read our outputs byte-for-byte.

Only what the toolkit needs is supported: little-endian float32/float64/int64
payloads of rank 1 or 2, C order. Everything else fails with a parse error
carrying the byte offset.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CsvParseError, InvalidInputError, NpyParseError
from .tensor import as_labels, as_matrix

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_SUPPORTED_DESCRS = {"<f8": np.float64, "<f4": np.float32, "<i8": np.int64}


class SplitRole(Enum):
    VALIDATION = "validation"  # grouping training split
    HOLDOUT = "holdout"        # per-group calibrator refit split
    TEST = "test"              # evaluation split; labels optional


# ---------------------------------------------------------------------------
# NPY v1.0
# ---------------------------------------------------------------------------

def _format_header(descr: str, shape: tuple) -> bytes:
    if len(shape) == 1:
        shape_str = f"({shape[0]},)"
    else:
        shape_str = f"({shape[0]}, {shape[1]})"
    text = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        shape_str,
    )
    unpadded = len(_MAGIC) + len(_VERSION) + 2 + len(text) + 1
    text += " " * ((64 - unpadded % 64) % 64) + "\n"
    return text.encode("latin1")


def _write_npy(path, arr: np.ndarray, descr: str) -> None:
    header = _format_header(descr, arr.shape)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype=descr).tobytes(order="C"))


def save_npy(matrix, path) -> None:
    """Write a matrix as NPY v1.0, dtype ``<f8``, C order."""
    _write_npy(path, as_matrix(matrix), "<f8")


def save_labels_npy(labels, path) -> None:
    """Write a label vector as rank-1 NPY v1.0, dtype ``<i8``."""
    _write_npy(path, as_labels(labels), "<i8")


def _read_npy_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:6] != _MAGIC:
        raise NpyParseError("not an NPY file (bad magic)", 0)
    if data[6:8] != _VERSION:
        raise NpyParseError(
            f"unsupported NPY version {data[6]}.{data[7]}, only 1.0 is handled", 6
        )
    if len(data) < 10:
        raise NpyParseError("truncated before header length field", 8)
    (header_len,) = struct.unpack_from("<H", data, 8)
    payload_start = 10 + header_len
    if len(data) < payload_start:
        raise NpyParseError("truncated inside header", len(data))
    try:
        meta = ast.literal_eval(data[10:payload_start].decode("latin1").strip())
        descr = meta["descr"]
        fortran = meta["fortran_order"]
        shape = tuple(meta["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise NpyParseError(f"unparseable header dictionary: {exc}", 10) from exc
    if fortran:
        raise NpyParseError("fortran_order payloads are not supported", 10)
    if descr not in _SUPPORTED_DESCRS:
        raise NpyParseError(f"unsupported dtype {descr!r}", 10)
    if len(shape) not in (1, 2) or any(int(d) < 0 for d in shape):
        raise NpyParseError(f"unsupported shape {shape!r}", 10)
    count = int(np.prod(shape, dtype=np.int64)) if shape else 0
    expected = count * np.dtype(_SUPPORTED_DESCRS[descr]).itemsize
    actual = len(data) - payload_start
    if actual != expected:
        raise NpyParseError(
            f"payload has {actual} bytes, expected {expected}", payload_start
        )
    arr = np.frombuffer(data[payload_start:], dtype=descr).reshape(shape)
    return arr


def load_npy(path) -> np.ndarray:
    """Read an NPY v1.0 file into a 2-D float64 matrix.

    float32/int64 payloads are widened; rank-1 arrays become single-column
    matrices.
    """
    return as_matrix(_read_npy_raw(path), name=str(path))


# ---------------------------------------------------------------------------
# CSV (RFC-4180 subset: numeric fields, no quoting)
# ---------------------------------------------------------------------------

def load_csv(path, has_header: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV into a 2-D float64 matrix."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and has_header:
                continue
            line = line.rstrip("\r\n")
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise CsvParseError(
                    f"ragged row: {len(cells)} cells, expected {width}", lineno
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise CsvParseError("non-numeric cell", lineno) from None
    if not rows:
        raise CsvParseError("no data rows", 1)
    return as_matrix(np.array(rows, dtype=np.float64), name=str(path))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _load_matrix(path) -> np.ndarray:
    if str(path).endswith(".csv"):
        return load_csv(path)
    return load_npy(path)


def load_labels(path, num_classes=None) -> np.ndarray:
    """Read labels from an int64 NPY or a single-column CSV.

    Floats with zero fractional part are converted, anything else rejected.
    """
    raw = _load_matrix(path)
    if raw.shape[1] != 1:
        raise InvalidInputError(
            f"label file {path} must hold a vector, got shape {raw.shape}"
        )
    return as_labels(raw[:, 0], num_classes, name=str(path))


@dataclass(frozen=True)
class Dataset:
    """Aligned features/logits/labels with the role they play in training."""

    features: np.ndarray  # N x d_z float64
    logits: np.ndarray    # N x M float64
    labels: np.ndarray | None  # length N int64; may be None for TEST
    role: SplitRole

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def make_dataset(features, logits, labels, role: SplitRole) -> Dataset:
    """Validate in-memory arrays into a :class:`Dataset`."""
    features = as_matrix(features, "features")
    logits = as_matrix(logits, "logits")
    if labels is None:
        if role is not SplitRole.TEST:
            raise InvalidInputError(f"labels are required for the {role.value} split")
    else:
        labels = as_labels(labels, logits.shape[1])
    counts = [features.shape[0], logits.shape[0]]
    if labels is not None:
        counts.append(labels.shape[0])
    if len(set(counts)) != 1:
        raise InvalidInputError(
            "row counts disagree: features=%d logits=%d labels=%s"
            % (
                features.shape[0],
                logits.shape[0],
                "absent" if labels is None else labels.shape[0],
            )
        )
    if logits.shape[1] < 2:
        raise InvalidInputError("need at least 2 classes")
    if features.shape[1] < 1:
        raise InvalidInputError("need at least 1 feature dimension")
    return Dataset(features, logits, labels, role)


def assemble_dataset(features_path, logits_path, labels_path, role: SplitRole) -> Dataset:
    """Load and validate one split from disk.

    ``labels_path`` may be None for the test role only.
    """
    features = _load_matrix(features_path)
    logits = _load_matrix(logits_path)
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path, num_classes=logits.shape[1])
    return make_dataset(features, logits, labels, role)
