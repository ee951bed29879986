"""Calibration metrics built on one idea: partition, compare, aggregate.

The partitioned calibration error takes one or more disjoint groupings of
the rows, compares a statistic of the predictions against the same statistic
of the labels inside every group, and size-weights the gaps:

    error = sum_P w(P) * sum_G (|G| / N) * loss(label_stat(G), pred_stat(G))

The familiar binning metrics drop out as special cases: top-label ECE uses a
single partition by max-confidence bin with the accuracy/confidence gap;
classwise ECE uses one partition per class, binned on that class's
probability; a bijective partition recovers the mean pointwise loss and the
constant partition recovers the gap between the mean prediction and the
empirical marginal. ``pce`` is the general estimator; the dedicated metric
functions are independent implementations kept for cross-checking.

Full-vector ECE is realized as per-class binning aggregated with uniform
per-class weights, with the whole-vector L1 gap inside each group (binning
on a continuous M-vector directly is ill-defined for M > 2); it equals
``pce`` over the per-class partitions with the mean-vector statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .tensor import (
    argmax_rows,
    as_labels,
    as_matrix,
    log_sum_exp_rows,
    one_hot,
)

DEFAULT_NUM_BINS = 15


@dataclass(frozen=True)
class BinningScheme:
    """How scores in [0, 1] are split into bins.

    ``width`` slices [0, 1] evenly with a right-closed final bin; ``mass``
    cuts the sorted scores into equal-count chunks, keeping ties together.
    """

    num_bins: int = DEFAULT_NUM_BINS
    mode: str = "width"  # "width" | "mass"

    def __post_init__(self):
        if self.num_bins < 1:
            raise InvalidInputError("num_bins must be >= 1")
        if self.mode not in ("width", "mass"):
            raise InvalidInputError(f"unknown bin mode {self.mode!r}")


@dataclass(frozen=True)
class Partition:
    """Disjoint grouping of dataset rows: one group id per row."""

    group_ids: np.ndarray
    num_groups: int

    def __post_init__(self):
        ids = as_labels(self.group_ids, self.num_groups, name="group_ids")
        object.__setattr__(self, "group_ids", ids)

    @property
    def n(self) -> int:
        return self.group_ids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.group_ids, minlength=self.num_groups)

    def empty_groups(self) -> list:
        """Empty groups are representable but worth surfacing."""
        return [int(g) for g in np.flatnonzero(self.sizes() == 0)]


@dataclass
class GroupRecord:
    partition: int
    group: int
    size: int
    prediction_stat: object  # float or per-class list
    label_stat: object
    gap: float


@dataclass
class MetricReport:
    """A scalar metric plus the per-group breakdown it aggregates."""

    metric: str
    value: float
    groups: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "groups": [
                {
                    "partition": g.partition,
                    "group": g.group,
                    "size": g.size,
                    "prediction_stat": g.prediction_stat,
                    "label_stat": g.label_stat,
                    "gap": g.gap,
                }
                for g in self.groups
            ],
        }


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

def partition_from_bins(scores, scheme: BinningScheme) -> Partition:
    """Assign each score in [0, 1] to a bin id under ``scheme``.

    Equal-width bin i covers [i/B, (i+1)/B) with the last bin right-closed.
    Equal-mass bins are cut at value level so tied scores share a bin.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        bad = int(np.flatnonzero((s < 0.0) | (s > 1.0))[0])
        raise InvalidInputError(
            f"scores must lie in [0, 1]; entry {bad} is {s[bad]!r}"
        )
    b = scheme.num_bins
    if scheme.mode == "width":
        ids = np.minimum((s * b).astype(np.int64), b - 1)
        return Partition(ids, b)
    # equal mass: walk unique values, closing a bin once its share is reached
    order = np.argsort(s, kind="stable")
    ids = np.empty(s.size, dtype=np.int64)
    values, counts = np.unique(s, return_counts=True)
    bounds = {}
    seen = 0
    current = 0
    for v, c in zip(values, counts):
        bounds[v] = current
        seen += c
        while current < b - 1 and seen >= (current + 1) * s.size / b:
            current += 1
    for i in order:
        ids[i] = bounds[s[i]]
    return Partition(ids, b)


def bin_edges(scores, scheme: BinningScheme) -> np.ndarray:
    """Edges (length B+1) matching ``partition_from_bins`` on this data."""
    b = scheme.num_bins
    if scheme.mode == "width":
        return np.linspace(0.0, 1.0, b + 1)
    part = partition_from_bins(scores, scheme)
    s = np.asarray(scores, dtype=np.float64).ravel()
    edges = np.empty(b + 1)
    edges[0], edges[b] = 0.0, 1.0
    prev = 0.0
    for i in range(1, b):
        in_bin = s[part.group_ids == i - 1]
        prev = float(in_bin.max()) if in_bin.size else prev
        edges[i] = prev
    return edges


# ---------------------------------------------------------------------------
# The general estimator
# ---------------------------------------------------------------------------

def _pointwise_loss(a: np.ndarray, b: np.ndarray, loss: str) -> float:
    diff = np.atleast_1d(np.asarray(a, dtype=np.float64) - b)
    if loss == "l1":
        return float(np.abs(diff).sum())
    if loss == "l2":
        return float((diff * diff).sum())
    raise InvalidInputError(f"unknown loss {loss!r}")


def pce(
    probs,
    labels,
    partitions,
    partition_weights=None,
    statistic: str = "mean-vector",
    loss: str = "l1",
) -> MetricReport:
    """Partitioned calibration error over one or more row partitions.

    ``statistic="mean-vector"`` averages full probability vectors against
    one-hot labels with the loss applied per class and summed;
    ``statistic="top-label"`` compares in-group accuracy against in-group
    mean max-confidence. Group probabilities are empirical (|G| / N) and
    empty groups contribute zero weight.
    """
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    if statistic not in ("mean-vector", "top-label"):
        raise InvalidInputError(f"unknown statistic {statistic!r}")
    partitions = list(partitions)
    if not partitions:
        raise InvalidInputError("need at least one partition")
    if partition_weights is None:
        weights = np.full(len(partitions), 1.0 / len(partitions))
    else:
        weights = np.asarray(partition_weights, dtype=np.float64).ravel()
        if weights.size != len(partitions):
            raise InvalidInputError(
                f"{weights.size} weights for {len(partitions)} partitions"
            )
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise InvalidInputError("partition weights must sum to 1")
    n = p.shape[0]
    if y.size != n:
        raise InvalidInputError("probs and labels row counts disagree")

    if statistic == "top-label":
        preds = argmax_rows(p)
        conf = p[np.arange(n), preds]
        correct = (preds == y).astype(np.float64)
    else:
        onehot = one_hot(y, p.shape[1])

    total = 0.0
    records = []
    for pi, (part, w) in enumerate(zip(partitions, weights)):
        if part.n != n:
            raise InvalidInputError(
                f"partition {pi} covers {part.n} rows, data has {n}"
            )
        for g in range(part.num_groups):
            mask = part.group_ids == g
            size = int(mask.sum())
            if size == 0:
                continue
            if statistic == "top-label":
                pred_stat = float(conf[mask].mean())
                label_stat = float(correct[mask].mean())
            else:
                pred_stat = p[mask].mean(axis=0)
                label_stat = onehot[mask].mean(axis=0)
            gap = _pointwise_loss(label_stat, pred_stat, loss)
            total += float(w) * (size / n) * gap
            records.append(
                GroupRecord(
                    partition=pi,
                    group=g,
                    size=size,
                    prediction_stat=(
                        pred_stat if isinstance(pred_stat, float) else pred_stat.tolist()
                    ),
                    label_stat=(
                        label_stat if isinstance(label_stat, float) else label_stat.tolist()
                    ),
                    gap=gap,
                )
            )
    return MetricReport("pce", total, records)


# ---------------------------------------------------------------------------
# Concrete metrics
# ---------------------------------------------------------------------------

def _require_normalized_rows(p: np.ndarray) -> None:
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-6)
    if bad.size:
        raise InvalidInputError(
            f"probability row {int(bad[0])} sums to {sums[bad[0]]!r}, not 1"
        )


def ece(probs, labels, scheme: BinningScheme | None = None, variant: str = "top-label") -> MetricReport:
    """Expected calibration error under confidence binning.

    ``top-label`` bins rows by max-class confidence and gaps accuracy
    against mean confidence. ``full-vector`` bins per class and gaps the
    mean probability vector against the mean one-hot vector (L1), averaged
    over the per-class partitions.
    """
    scheme = scheme or BinningScheme()
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    _require_normalized_rows(p)
    n = p.shape[0]

    if variant == "top-label":
        preds = argmax_rows(p)
        conf = p[np.arange(n), preds]
        correct = (preds == y).astype(np.float64)
        part = partition_from_bins(conf, scheme)
        total = 0.0
        records = []
        for g in range(part.num_groups):
            mask = part.group_ids == g
            size = int(mask.sum())
            if size == 0:
                continue
            mean_conf = float(conf[mask].mean())
            acc = float(correct[mask].mean())
            gap = abs(acc - mean_conf)
            total += (size / n) * gap
            records.append(GroupRecord(0, g, size, mean_conf, acc, gap))
        return MetricReport("ece", total, records)

    if variant == "full-vector":
        onehot = one_hot(y, p.shape[1])
        m = p.shape[1]
        total = 0.0
        records = []
        for u in range(m):
            part = partition_from_bins(p[:, u], scheme)
            for g in range(part.num_groups):
                mask = part.group_ids == g
                size = int(mask.sum())
                if size == 0:
                    continue
                mean_p = p[mask].mean(axis=0)
                mean_y = onehot[mask].mean(axis=0)
                gap = float(np.abs(mean_p - mean_y).sum())
                total += (size / n) * gap / m
                records.append(
                    GroupRecord(u, g, size, mean_p.tolist(), mean_y.tolist(), gap)
                )
        return MetricReport("ece-full-vector", total, records)

    raise InvalidInputError(f"unknown ece variant {variant!r}")


def classwise_ece(probs, labels, scheme: BinningScheme | None = None) -> MetricReport:
    """Per-class binning of each class's probability, averaged over classes.

    For class u the rows are binned on f(x)_u and the gap inside a bin is
    |mean f(x)_u - mean 1[y=u]|; the scalar is the class-average of the
    size-weighted gaps.
    """
    scheme = scheme or BinningScheme()
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    _require_normalized_rows(p)
    n, m = p.shape
    total = 0.0
    records = []
    for u in range(m):
        is_u = (y == u).astype(np.float64)
        part = partition_from_bins(p[:, u], scheme)
        for g in range(part.num_groups):
            mask = part.group_ids == g
            size = int(mask.sum())
            if size == 0:
                continue
            mean_p = float(p[mask, u].mean())
            mean_y = float(is_u[mask].mean())
            gap = abs(mean_p - mean_y)
            total += (size / n) * gap / m
            records.append(GroupRecord(u, g, size, mean_p, mean_y, gap))
    return MetricReport("classwise-ece", total, records)


def nll(logits, labels) -> float:
    """Mean negative log-likelihood computed stably from logits."""
    o = as_matrix(logits, "logits")
    y = as_labels(labels, o.shape[1])
    if y.size != o.shape[0]:
        raise InvalidInputError("logits and labels row counts disagree")
    return float(np.mean(log_sum_exp_rows(o) - o[np.arange(o.shape[0]), y]))


def nll_from_probs(probs, labels) -> float:
    """Mean negative log probability of the true class (probs clipped away
    from zero); used when only calibrated probabilities exist."""
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    picked = np.clip(p[np.arange(p.shape[0]), y], 1e-300, None)
    return float(-np.mean(np.log(picked)))


def brier(probs, labels) -> float:
    """Mean squared L2 distance between probability rows and one-hot labels."""
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    if y.size != p.shape[0]:
        raise InvalidInputError("probs and labels row counts disagree")
    diff = p - one_hot(y, p.shape[1])
    return float(np.mean((diff * diff).sum(axis=1)))


def accuracy(probs, labels) -> float:
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    return float(np.mean(argmax_rows(p) == y))
