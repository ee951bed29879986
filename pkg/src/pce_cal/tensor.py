"""Dense float64 kernels used by every other module.

Matrices are plain 2-D C-order float64 numpy arrays and label vectors are
1-D int64 arrays; the coercion helpers below normalize user input into that
representation (32-bit inputs are widened on load). The softmax family is
computed with max-subtraction so gigantic logits never overflow.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce ``values`` to a 2-D C-order float64 array.

    Rank-1 input becomes a single-column matrix. Anything of higher rank is
    rejected.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(
            f"{name} must have rank 1 or 2, got rank {arr.ndim}"
        )
    return np.ascontiguousarray(arr)


def as_labels(values, num_classes=None, name: str = "labels") -> np.ndarray:
    """Coerce ``values`` to a 1-D int64 label vector.

    Floats are accepted only when every entry has zero fractional part
    (exporters disagree on label dtype). Labels must be nonnegative and,
    when ``num_classes`` is given, strictly below it.
    """
    arr = np.asarray(values)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector, got rank {arr.ndim}")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64, copy=True)
        if not np.array_equal(cast, arr):
            raise InvalidInputError(f"{name} contains non-integral values")
        arr = cast
    arr = arr.astype(np.int64, copy=False)
    if arr.size and int(arr.min()) < 0:
        raise InvalidInputError(f"{name} contains negative class indices")
    if num_classes is not None and arr.size and int(arr.max()) >= num_classes:
        raise InvalidInputError(
            f"{name} contains index {int(arr.max())} but only "
            f"{num_classes} classes exist"
        )
    return arr


def require_finite(m: np.ndarray, name: str = "matrix") -> None:
    """Raise :class:`InvalidInputError` naming the first non-finite row."""
    finite = np.isfinite(m)
    if finite.all():
        return
    if m.ndim == 2:
        bad = int(np.flatnonzero(~finite.all(axis=1))[0])
        raise InvalidInputError(f"{name} has a non-finite entry in row {bad}")
    bad = int(np.flatnonzero(~finite)[0])
    raise InvalidInputError(f"{name} has a non-finite entry at index {bad}")


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax. Each output row sums to 1 and keeps its argmax."""
    o = as_matrix(logits, "logits")
    require_finite(o, "logits")
    out = o - o.max(axis=1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


def log_softmax_rows(logits) -> np.ndarray:
    """Row-wise log-softmax via the shifted log-sum-exp."""
    o = as_matrix(logits, "logits")
    require_finite(o, "logits")
    shifted = o - o.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def log_sum_exp_rows(logits) -> np.ndarray:
    """Per-row log(sum(exp(o))) with max-subtraction for overflow safety."""
    o = as_matrix(logits, "logits")
    require_finite(o, "logits")
    mx = o.max(axis=1)
    return mx + np.log(np.exp(o - mx[:, None]).sum(axis=1))


def argmax_rows(m) -> np.ndarray:
    """Per-row index of the maximum entry; ties go to the lowest index."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError("argmax_rows needs a nonempty 2-D input")
    return np.argmax(arr, axis=1)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Expand integer labels to an N x M one-hot float64 matrix."""
    y = as_labels(labels, num_classes)
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out
