"""Soft feature-space grouping trained jointly with per-group temperatures.

The grouping function is a linear layer over (standardized) deep features
followed by a softmax: group weights g(x) = softmax(z(x) W + b) with
W in R^{d_z x K}, b in R^K. Training minimizes the negated log-likelihood of
the per-sample mixture of tempered softmaxes

    loss = -1/N * sum_n log sum_i g(x_n)_i * softmax(o(x_n) / tau_i)_{y_n}
           + l2_penalty * ||W||_F^2

over the flattened (W, b, log tau) vector, with hand-derived gradients (no
autodiff here). The mixture is evaluated in log space so near-zero group
responsibilities cannot underflow. With K = 1 the loss reduces to the plain
per-group temperature-scaling NLL plus the regularizer.

Features are standardized to zero mean / unit variance on the fitting split
before the linear map; raw deep features have wildly varying scales and a
fixed penalty weight is only meaningful on a normalized one. The scale gets
a 1e-8 floor to survive constant features. Initial weights are drawn i.i.d.
Normal(0, init_scale^2), small enough that the initial soft assignment is
near-uniform and the temperatures differentiate groups before the partition
hardens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibrators import LOG_TAU_MAX, LOG_TAU_MIN, clamp_log_tau
from .dataio import Dataset, SplitRole
from .errors import InvalidInputError, NumericError
from .metrics import Partition
from .optim import OptimizerConfig, minimize
from .tensor import argmax_rows, as_labels, as_matrix, log_softmax_rows


@dataclass
class GroupingModel:
    weights: np.ndarray        # d_z x K
    bias: np.ndarray           # K
    feature_mean: np.ndarray   # d_z, frozen from the fitting split
    feature_scale: np.ndarray  # d_z, strictly positive

    @property
    def num_groups(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_scale": [float(v) for v in self.feature_scale],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GroupingModel":
        return cls(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=np.asarray(payload["bias"], dtype=np.float64),
            feature_mean=np.asarray(payload["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(payload["feature_scale"], dtype=np.float64),
        )


@dataclass
class GroupTemperatures:
    log_taus: np.ndarray

    @property
    def taus(self) -> np.ndarray:
        return np.exp(clamp_log_tau(self.log_taus))


@dataclass
class GcTrainConfig:
    num_groups: int = 2
    l2_penalty: float = 0.1
    seed: int = 0
    init_scale: float = 0.01
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def validate(self):
        if self.num_groups < 1:
            raise InvalidInputError("num_groups must be >= 1")
        if self.l2_penalty < 0:
            raise InvalidInputError("l2_penalty must be >= 0")
        if self.init_scale <= 0:
            raise InvalidInputError("init_scale must be > 0")


def standardize_features(features):
    """(mean, scale) of the fitting split; scale floored at 1e-8."""
    z = as_matrix(features, "features")
    mean = z.mean(axis=0)
    scale = np.maximum(z.std(axis=0), 1e-8)
    return mean, scale


def soft_assign(model: GroupingModel, features) -> np.ndarray:
    """N x K group weights on the simplex."""
    z = as_matrix(features, "features")
    if z.shape[1] != model.feature_dim:
        raise InvalidInputError(
            f"features have dim {z.shape[1]}, grouping expects {model.feature_dim}"
        )
    standardized = (z - model.feature_mean) / model.feature_scale
    logits = standardized @ model.weights + model.bias
    return np.exp(log_softmax_rows(logits))


def hard_assign(model: GroupingModel, features) -> Partition:
    """Group id = argmax of the soft assignment, ties to the lowest index."""
    return Partition(argmax_rows(soft_assign(model, features)), model.num_groups)


# ---------------------------------------------------------------------------
# Joint loss
# ---------------------------------------------------------------------------

def pack_params(weights, bias, log_taus) -> np.ndarray:
    return np.concatenate(
        [np.ravel(weights), np.ravel(bias), np.ravel(log_taus)]
    ).astype(np.float64)


def unpack_params(params, feature_dim: int, num_groups: int):
    expected = feature_dim * num_groups + 2 * num_groups
    params = np.asarray(params, dtype=np.float64).ravel()
    if params.size != expected:
        raise InvalidInputError(
            f"parameter vector has length {params.size}, expected {expected}"
        )
    w_end = feature_dim * num_groups
    weights = params[:w_end].reshape(feature_dim, num_groups)
    bias = params[w_end : w_end + num_groups]
    log_taus = params[w_end + num_groups :]
    return weights, bias, log_taus


def gc_ts_loss(params, features, logits, labels, num_groups: int, l2_penalty: float):
    """(loss, gradient) of the joint grouping + temperature objective.

    ``features`` are used as given; the training entry point standardizes
    them first. The gradient covers the flattened (W, b, log tau) vector;
    log-tau coordinates outside the clamp box get zero gradient so the
    unconstrained optimizer settles on the boundary value.
    """
    z = as_matrix(features, "features")
    o = as_matrix(logits, "logits")
    y = as_labels(labels, o.shape[1])
    n, d = z.shape
    if o.shape[0] != n or y.size != n:
        raise InvalidInputError("features, logits and labels row counts disagree")
    weights, bias, raw_lt = unpack_params(params, d, num_groups)
    lt = clamp_log_tau(raw_lt)
    taus = np.exp(lt)
    rows = np.arange(n)

    log_g = log_softmax_rows(z @ weights + bias)  # N x K

    log_q = np.empty((n, num_groups))
    expected_logit = np.empty((n, num_groups))
    for i in range(num_groups):
        scaled = o / taus[i]
        shifted = scaled - scaled.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        denom = ex.sum(axis=1)
        log_q[:, i] = shifted[rows, y] - np.log(denom)
        p = ex / denom[:, None]
        expected_logit[:, i] = (p * o).sum(axis=1)

    joint = log_g + log_q
    joint_max = joint.max(axis=1, keepdims=True)
    log_mix = joint_max[:, 0] + np.log(np.exp(joint - joint_max).sum(axis=1))
    if not np.isfinite(log_mix).all():
        bad = int(np.flatnonzero(~np.isfinite(log_mix))[0])
        raise NumericError(f"non-finite mixture likelihood at sample {bad}")
    loss = float(-np.mean(log_mix) + l2_penalty * np.sum(weights * weights))

    # responsibilities r_ni = g_ni q_ni / mix_n, rows sum to 1
    resp = np.exp(joint - log_mix[:, None])
    d_group_logits = (np.exp(log_g) - resp) / n
    grad_w = z.T @ d_group_logits + 2.0 * l2_penalty * weights
    grad_b = d_group_logits.sum(axis=0)
    observed = o[rows, y]
    grad_lt = -np.mean(resp * (expected_logit - observed[:, None]), axis=0) / taus
    grad_lt[(raw_lt < LOG_TAU_MIN) | (raw_lt > LOG_TAU_MAX)] = 0.0
    return loss, pack_params(grad_w, grad_b, grad_lt)


def train_grouping(dataset_val: Dataset, cfg: GcTrainConfig):
    """Fit the grouping and joint temperatures on the validation split.

    Returns (GroupingModel, GroupTemperatures, final_loss). Deterministic
    given the config seed.
    """
    cfg.validate()
    if dataset_val.role is not SplitRole.VALIDATION:
        raise InvalidInputError(
            f"grouping trains on the validation split, got {dataset_val.role.value}"
        )
    if dataset_val.labels is None:
        raise InvalidInputError("grouping training needs labels")
    mean, scale = standardize_features(dataset_val.features)
    z = (dataset_val.features - mean) / scale
    d, k = dataset_val.feature_dim, cfg.num_groups

    rng = np.random.default_rng(cfg.seed)
    w0 = rng.normal(0.0, cfg.init_scale, size=(d, k))
    b0 = rng.normal(0.0, cfg.init_scale, size=k)
    x0 = pack_params(w0, b0, np.zeros(k))

    def objective(params):
        return gc_ts_loss(
            params, z, dataset_val.logits, dataset_val.labels, k, cfg.l2_penalty
        )

    try:
        result = minimize(objective, x0, cfg.optimizer)
    except NumericError as exc:
        raise NumericError(
            f"grouping training failed for seed {cfg.seed}: {exc}"
        ) from exc
    weights, bias, lt = unpack_params(result.x, d, k)
    model = GroupingModel(
        weights=weights, bias=bias, feature_mean=mean, feature_scale=scale
    )
    return model, GroupTemperatures(clamp_log_tau(lt)), result.loss
