"""Base calibration maps fitted per group: TS, ETS and histogram binning.

Temperature scaling divides logits by a scalar tau > 0 fitted by NLL
minimization; ensemble temperature scaling mixes the tempered softmax, the
raw softmax and the uniform distribution with simplex weights. Both preserve
every row's argmax, which is what lets the group-calibration wrapper stay
accuracy-preserving. Histogram binning replaces the top-label confidence
with per-bin empirical accuracy and is kept only for comparison tables; it
does not preserve accuracy.

tau is optimized as log(tau) clamped to [1e-2, 1e2]: the paper of record for
this family gives no search range, the box guarantees positivity and bounds
flat-objective pathologies. A completely flat objective (constant logit
rows) keeps the identity tau = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .metrics import BinningScheme, bin_edges, partition_from_bins
from .optim import OptimizerConfig, minimize
from .tensor import argmax_rows, as_labels, as_matrix, log_softmax_rows, softmax_rows

LOG_TAU_MIN = float(np.log(1e-2))
LOG_TAU_MAX = float(np.log(1e2))


def clamp_log_tau(values):
    return np.clip(values, LOG_TAU_MIN, LOG_TAU_MAX)


@dataclass
class TemperatureScaling:
    log_tau: float = 0.0
    tag = "ts"
    accuracy_preserving = True

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    def to_dict(self) -> dict:
        return {"kind": self.tag, "log_tau": self.log_tau}


@dataclass
class EnsembleTemperatureScaling:
    log_tau: float = 0.0
    weights: tuple = (1.0, 0.0, 0.0)  # (tempered, raw, uniform)
    tag = "ets"
    accuracy_preserving = True

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    def to_dict(self) -> dict:
        return {"kind": self.tag, "log_tau": self.log_tau, "weights": list(self.weights)}


@dataclass
class HistogramBinning:
    scheme: BinningScheme
    edges: np.ndarray   # length num_bins + 1, frozen from the fitting scores
    values: np.ndarray  # per-bin replacement confidence in [0, 1]
    tag = "hb"
    accuracy_preserving = False

    def to_dict(self) -> dict:
        return {
            "kind": self.tag,
            "num_bins": self.scheme.num_bins,
            "mode": self.scheme.mode,
            "edges": [float(e) for e in self.edges],
            "values": [float(v) for v in self.values],
        }


def calibrator_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind == "ts":
        return TemperatureScaling(log_tau=float(payload["log_tau"]))
    if kind == "ets":
        w = tuple(float(x) for x in payload["weights"])
        return EnsembleTemperatureScaling(log_tau=float(payload["log_tau"]), weights=w)
    if kind == "hb":
        return HistogramBinning(
            scheme=BinningScheme(int(payload["num_bins"]), payload["mode"]),
            edges=np.asarray(payload["edges"], dtype=np.float64),
            values=np.asarray(payload["values"], dtype=np.float64),
        )
    raise InvalidInputError(f"unknown calibrator kind {kind!r}")


# ---------------------------------------------------------------------------
# Temperature scaling
# ---------------------------------------------------------------------------

def _nll_at_log_tau(logits, labels_idx, log_tau):
    """(nll, d nll / d log_tau) at the clamped temperature."""
    lt = float(clamp_log_tau(log_tau))
    tau = np.exp(lt)
    scaled = logits / tau
    mx = scaled.max(axis=1, keepdims=True)
    ex = np.exp(scaled - mx)
    lse = mx[:, 0] + np.log(ex.sum(axis=1))
    picked = scaled[np.arange(scaled.shape[0]), labels_idx]
    value = float(np.mean(lse - picked))
    p = ex / ex.sum(axis=1, keepdims=True)
    expected = (p * logits).sum(axis=1)
    observed = logits[np.arange(logits.shape[0]), labels_idx]
    grad = float(np.mean(observed - expected) / tau)
    return value, grad


def fit_temperature(logits, labels, optimizer: OptimizerConfig | None = None) -> TemperatureScaling:
    """Fit tau by minimizing the NLL of softmax(o / tau) over log tau."""
    o = as_matrix(logits, "logits")
    y = as_labels(labels, o.shape[1])
    if o.shape[0] == 0:
        raise InvalidInputError("cannot fit a temperature on an empty dataset")
    if y.size != o.shape[0]:
        raise InvalidInputError("logits and labels row counts disagree")

    def objective(x):
        value, grad = _nll_at_log_tau(o, y, x[0])
        inside = LOG_TAU_MIN <= x[0] <= LOG_TAU_MAX
        return value, np.array([grad if inside else 0.0])

    result = minimize(objective, np.zeros(1), optimizer)
    return TemperatureScaling(log_tau=float(clamp_log_tau(result.x[0])))


def apply_temperature(logits, calibrator: TemperatureScaling) -> np.ndarray:
    """softmax(o / tau); positive scaling keeps every row's argmax."""
    tau = calibrator.tau
    if tau <= 0:
        raise InvalidInputError("temperature must be positive")
    return softmax_rows(as_matrix(logits, "logits") / tau)


# ---------------------------------------------------------------------------
# Ensemble temperature scaling
# ---------------------------------------------------------------------------

def _simplex(free: np.ndarray) -> np.ndarray:
    shifted = free - free.max()
    w = np.exp(shifted)
    return w / w.sum()


def fit_ets(logits, labels, optimizer: OptimizerConfig | None = None) -> EnsembleTemperatureScaling:
    """Fit tau as in TS, then simplex weights over the three components.

    Weights are parameterized through a softmax of three free reals, which
    keeps the simplex constraint exact. Because the TS solution sits on a
    vertex the softmax can only approach, the fit falls back to pure TS
    weights whenever they score better.
    """
    o = as_matrix(logits, "logits")
    y = as_labels(labels, o.shape[1])
    if o.shape[0] == 0:
        raise InvalidInputError("cannot fit ETS on an empty dataset")
    ts = fit_temperature(o, y, optimizer)
    n, m = o.shape
    rows = np.arange(n)
    components = np.stack(
        [
            apply_temperature(o, ts)[rows, y],
            softmax_rows(o)[rows, y],
            np.full(n, 1.0 / m),
        ],
        axis=1,
    )  # N x 3, true-class probability under each component

    def objective(free):
        w = _simplex(free)
        mix = np.clip(components @ w, 1e-300, None)
        value = float(-np.mean(np.log(mix)))
        dw = -np.mean(components / mix[:, None], axis=0)
        grad = w * (dw - float(w @ dw))
        return value, grad

    result = minimize(objective, np.zeros(3), optimizer)
    weights = _simplex(result.x)
    nll_fit = float(-np.mean(np.log(np.clip(components @ weights, 1e-300, None))))
    nll_ts = float(-np.mean(np.log(np.clip(components[:, 0], 1e-300, None))))
    if nll_ts < nll_fit:
        weights = np.array([1.0, 0.0, 0.0])
    return EnsembleTemperatureScaling(
        log_tau=ts.log_tau, weights=tuple(float(w) for w in weights)
    )


def apply_ets(logits, calibrator: EnsembleTemperatureScaling) -> np.ndarray:
    """Convex combination of tempered softmax, raw softmax and uniform."""
    o = as_matrix(logits, "logits")
    w1, w2, w3 = calibrator.weights
    if min(w1, w2, w3) < -1e-12 or abs(w1 + w2 + w3 - 1.0) > 1e-9:
        raise InvalidInputError("ETS weights must lie on the simplex")
    tempered = apply_temperature(o, TemperatureScaling(calibrator.log_tau))
    return w1 * tempered + w2 * softmax_rows(o) + w3 / o.shape[1]


# ---------------------------------------------------------------------------
# Histogram binning (top-label)
# ---------------------------------------------------------------------------

def fit_histogram_binning(probs, labels, scheme: BinningScheme | None = None) -> HistogramBinning:
    """Per-bin replacement = empirical accuracy of the rows in that bin.

    Empty bins inherit the bin midpoint (i + 0.5) / B.
    """
    scheme = scheme or BinningScheme()
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    if p.shape[0] == 0:
        raise InvalidInputError("cannot fit histogram binning on an empty dataset")
    preds = argmax_rows(p)
    conf = p[np.arange(p.shape[0]), preds]
    correct = (preds == y).astype(np.float64)
    part = partition_from_bins(conf, scheme)
    b = scheme.num_bins
    values = np.array(
        [
            correct[part.group_ids == i].mean()
            if np.any(part.group_ids == i)
            else (i + 0.5) / b
            for i in range(b)
        ]
    )
    return HistogramBinning(scheme=scheme, edges=bin_edges(conf, scheme), values=values)


def apply_histogram_binning(probs, calibrator: HistogramBinning) -> np.ndarray:
    """Replace top-label confidence with the bin value, rescaling the rest.

    The non-top probabilities share the leftover mass in proportion to their
    original values (uniformly when the top label held all the mass), so
    rows stay on the simplex.
    """
    p = as_matrix(probs, "probs").copy()
    n, m = p.shape
    preds = argmax_rows(p)
    rows = np.arange(n)
    conf = p[rows, preds]
    inner = calibrator.edges[1:-1]
    if calibrator.scheme.mode == "width":
        idx = np.searchsorted(inner, conf, side="right")
    else:
        idx = np.searchsorted(inner, conf, side="left")
    replacement = calibrator.values[idx]
    rest = 1.0 - conf
    for i in range(n):
        r = float(replacement[i])
        if rest[i] > 1e-12:
            scale = (1.0 - r) / rest[i]
            p[i] *= scale
        else:
            p[i] = (1.0 - r) / max(m - 1, 1)
        p[i, preds[i]] = r
    return p


# ---------------------------------------------------------------------------
# Dispatch used by the partition ensemble
# ---------------------------------------------------------------------------

def fit_base(tag: str, logits, labels, optimizer: OptimizerConfig | None = None):
    if tag == "ts":
        return fit_temperature(logits, labels, optimizer)
    if tag == "ets":
        return fit_ets(logits, labels, optimizer)
    raise InvalidInputError(f"unsupported base calibrator {tag!r}")


def apply_calibrator(calibrator, logits) -> np.ndarray:
    if isinstance(calibrator, TemperatureScaling):
        return apply_temperature(logits, calibrator)
    if isinstance(calibrator, EnsembleTemperatureScaling):
        return apply_ets(logits, calibrator)
    if isinstance(calibrator, HistogramBinning):
        return apply_histogram_binning(softmax_rows(logits), calibrator)
    raise InvalidInputError(f"unknown calibrator type {type(calibrator).__name__}")
