"""End-to-end group calibration: train U partitions, refit per group, ensemble.

Training runs the two-phase procedure per partition member u:

1. the grouping function and joint temperatures are trained on the
   validation split with seed ``seed + u``;
2. each group's calibrator is refit on that group's holdout rows (hard
   membership); groups with fewer than ``min_group_size`` holdout rows get a
   fallback calibrator fitted once on the whole holdout split.

Prediction hard-assigns every test row per member, applies that group's
calibrator to its logits, and averages the U probability matrices with
equal weights. With an accuracy-preserving base (TS or ETS) the averaged
output keeps every row's argmax: disjoint groups preserve it member-wise and
the mean of matrices sharing an argmax shares it too.

The synthetic generator is the desk-scale stand-in for a real model export:
rows get a latent group, features come from group-dependent Gaussian
clusters (so features predict the group), labels are sampled from the
softmax of true logits, and the observed logits are the true logits times a
per-group distortion factor (> 1 overconfident, < 1 underconfident). The
optimal per-group temperature therefore equals the distortion factor.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from . import metrics as metrics_mod
from .calibrators import apply_calibrator, calibrator_from_dict, fit_base
from .dataio import Dataset, SplitRole, make_dataset
from .errors import InvalidInputError
from .grouping import GcTrainConfig, GroupingModel, hard_assign, train_grouping
from .metrics import BinningScheme, MetricReport, Partition
from .tensor import argmax_rows, as_matrix, softmax_rows

MODEL_SCHEMA = "pce-cal/1"
DEFAULT_MIN_GROUP_SIZE = 10


@dataclass
class EnsembleMember:
    grouping: GroupingModel
    calibrators: list  # one per group
    fallback: object
    train_loss: float = float("nan")  # phase-1 joint objective at the optimum


@dataclass
class PartitionEnsemble:
    members: list
    base: str  # "ts" | "ets"
    num_groups: int
    l2_penalty: float
    seed: int
    num_classes: int
    feature_dim: int
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE

    @property
    def num_partitions(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "base": self.base,
            "num_groups": self.num_groups,
            "num_partitions": self.num_partitions,
            "l2_penalty": self.l2_penalty,
            "seed": self.seed,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "min_group_size": self.min_group_size,
            "members": [
                {
                    "grouping": m.grouping.to_dict(),
                    "calibrators": [c.to_dict() for c in m.calibrators],
                    "fallback": m.fallback.to_dict(),
                    "train_loss": m.train_loss,
                }
                for m in self.members
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def from_dict(cls, payload: dict) -> "PartitionEnsemble":
        if payload.get("schema") != MODEL_SCHEMA:
            raise InvalidInputError(
                f"model schema {payload.get('schema')!r} is not {MODEL_SCHEMA!r}"
            )
        members = [
            EnsembleMember(
                grouping=GroupingModel.from_dict(m["grouping"]),
                calibrators=[calibrator_from_dict(c) for c in m["calibrators"]],
                fallback=calibrator_from_dict(m["fallback"]),
                train_loss=float(m.get("train_loss", float("nan"))),
            )
            for m in payload["members"]
        ]
        return cls(
            members=members,
            base=payload["base"],
            num_groups=int(payload["num_groups"]),
            l2_penalty=float(payload["l2_penalty"]),
            seed=int(payload["seed"]),
            num_classes=int(payload["num_classes"]),
            feature_dim=int(payload["feature_dim"]),
            min_group_size=int(payload["min_group_size"]),
        )

    @classmethod
    def load(cls, path) -> "PartitionEnsemble":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"model file {path} is not valid JSON: {exc}")
        return cls.from_dict(payload)


# ---------------------------------------------------------------------------
# Fitting and prediction
# ---------------------------------------------------------------------------

def _fit_member(u, d_val, d_ho, cfg, base, fallback, min_group_size):
    member_cfg = GcTrainConfig(
        num_groups=cfg.num_groups,
        l2_penalty=cfg.l2_penalty,
        seed=cfg.seed + u,
        init_scale=cfg.init_scale,
        optimizer=cfg.optimizer,
    )
    model, _, train_loss = train_grouping(d_val, member_cfg)
    partition = hard_assign(model, d_ho.features)
    calibrators = []
    for g in range(cfg.num_groups):
        mask = partition.group_ids == g
        if int(mask.sum()) >= min_group_size:
            calibrators.append(
                fit_base(base, d_ho.logits[mask], d_ho.labels[mask], cfg.optimizer)
            )
        else:
            calibrators.append(fallback)
    return EnsembleMember(
        grouping=model,
        calibrators=calibrators,
        fallback=fallback,
        train_loss=float(train_loss),
    )


def fit_ensemble(
    d_val: Dataset,
    d_ho: Dataset,
    cfg: GcTrainConfig,
    num_partitions: int,
    base: str = "ts",
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE,
    jobs: int = 1,
) -> PartitionEnsemble:
    """Train ``num_partitions`` independent members; deterministic in seed.

    Member u draws its initialization from seed + u, so results do not
    depend on how many workers run the members.
    """
    cfg.validate()
    if base not in ("ts", "ets"):
        raise InvalidInputError(f"base must be 'ts' or 'ets', got {base!r}")
    if num_partitions < 1:
        raise InvalidInputError("num_partitions must be >= 1")
    if d_ho.n == 0:
        raise InvalidInputError("holdout split is empty")
    if d_ho.labels is None or d_val.labels is None:
        raise InvalidInputError("fitting needs labels on both splits")
    if d_val.num_classes != d_ho.num_classes or d_val.feature_dim != d_ho.feature_dim:
        raise InvalidInputError("validation and holdout shapes disagree")

    fallback = fit_base(base, d_ho.logits, d_ho.labels, cfg.optimizer)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            members = list(
                pool.map(
                    lambda u: _fit_member(
                        u, d_val, d_ho, cfg, base, fallback, min_group_size
                    ),
                    range(num_partitions),
                )
            )
    else:
        members = [
            _fit_member(u, d_val, d_ho, cfg, base, fallback, min_group_size)
            for u in range(num_partitions)
        ]
    return PartitionEnsemble(
        members=members,
        base=base,
        num_groups=cfg.num_groups,
        l2_penalty=cfg.l2_penalty,
        seed=cfg.seed,
        num_classes=d_val.num_classes,
        feature_dim=d_val.feature_dim,
        min_group_size=min_group_size,
    )


def calibrate(ensemble: PartitionEnsemble, d_test: Dataset) -> np.ndarray:
    """Calibrated N x M probabilities: equal-weight average over members."""
    if d_test.num_classes != ensemble.num_classes:
        raise InvalidInputError(
            f"test data has {d_test.num_classes} classes, model expects "
            f"{ensemble.num_classes}"
        )
    if d_test.feature_dim != ensemble.feature_dim:
        raise InvalidInputError(
            f"test features have dim {d_test.feature_dim}, model expects "
            f"{ensemble.feature_dim}"
        )
    out = np.zeros((d_test.n, d_test.num_classes))
    for member in ensemble.members:
        partition = hard_assign(member.grouping, d_test.features)
        member_probs = np.empty_like(out)
        for g in range(ensemble.num_groups):
            mask = partition.group_ids == g
            if not np.any(mask):
                continue
            member_probs[mask] = apply_calibrator(
                member.calibrators[g], d_test.logits[mask]
            )
        out += member_probs
    out /= ensemble.num_partitions
    return out


def learned_partitions(ensemble: PartitionEnsemble, features) -> list:
    """Hard test-time partition of every member, in member order."""
    return [hard_assign(m.grouping, features) for m in ensemble.members]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

KNOWN_METRICS = ("ece", "ece-full-vector", "classwise-ece", "nll", "brier", "pce")


def evaluate(
    subject,
    d_test: Dataset,
    metric_names=("ece", "nll", "brier"),
    scheme: BinningScheme | None = None,
) -> list:
    """Metric reports before and after calibration, plus accuracy bookkeeping.

    ``subject`` is either a fitted :class:`PartitionEnsemble` or an already
    calibrated probability matrix. The ``pce`` metric needs the ensemble
    (it evaluates on the learned partitions) and is skipped otherwise.
    """
    if d_test.labels is None:
        raise InvalidInputError("evaluation needs a labeled test split")
    scheme = scheme or BinningScheme()
    before = softmax_rows(d_test.logits)
    ensemble = subject if isinstance(subject, PartitionEnsemble) else None
    after = calibrate(ensemble, d_test) if ensemble is not None else as_matrix(subject)
    if after.shape != before.shape:
        raise InvalidInputError(
            f"probabilities have shape {after.shape}, expected {before.shape}"
        )
    y = d_test.labels

    reports = []
    for name in metric_names:
        if name not in KNOWN_METRICS:
            raise InvalidInputError(f"unknown metric {name!r}")
        for stage, probs in (("before", before), ("after", after)):
            if name == "ece":
                rep = metrics_mod.ece(probs, y, scheme, "top-label")
            elif name == "ece-full-vector":
                rep = metrics_mod.ece(probs, y, scheme, "full-vector")
            elif name == "classwise-ece":
                rep = metrics_mod.classwise_ece(probs, y, scheme)
            elif name == "nll":
                value = (
                    metrics_mod.nll(d_test.logits, y)
                    if stage == "before"
                    else metrics_mod.nll_from_probs(probs, y)
                )
                rep = MetricReport("nll", value)
            elif name == "brier":
                rep = MetricReport("brier", metrics_mod.brier(probs, y))
            elif name == "pce":
                if ensemble is None:
                    continue
                parts = learned_partitions(ensemble, d_test.features)
                rep = metrics_mod.pce(
                    probs, y, parts, statistic="top-label", loss="l1"
                )
            rep.metric = f"{rep.metric}.{stage}"
            reports.append(rep)
    if metric_names:
        raw_pred = argmax_rows(d_test.logits)
        cal_pred = argmax_rows(after)
        reports.append(
            MetricReport("accuracy.before", float(np.mean(raw_pred == y)))
        )
        reports.append(
            MetricReport("accuracy.after", float(np.mean(cal_pred == y)))
        )
        reports.append(
            MetricReport("argmax-changes", float(np.sum(raw_pred != cal_pred)))
        )
    return reports


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_val: int = 5000
    n_ho: int = 5000
    n_test: int = 10000
    num_classes: int = 5
    feature_dim: int = 10
    distortions: tuple = (2.0, 0.5)  # one positive factor per latent group
    cluster_sep: float = 8.0  # features must identify the latent group cleanly
    logit_scale: float = 2.0
    seed: int = 0

    @property
    def num_latent_groups(self) -> int:
        return len(self.distortions)

    def validate(self):
        if min(self.n_val, self.n_ho, self.n_test) < 1:
            raise InvalidInputError("split sizes must be positive")
        if self.num_classes < 2:
            raise InvalidInputError("need at least 2 classes")
        if self.feature_dim < 1:
            raise InvalidInputError("need at least 1 feature dimension")
        if self.num_latent_groups < 2:
            raise InvalidInputError("need at least 2 latent groups")
        if any(f <= 0 for f in self.distortions):
            raise InvalidInputError("distortion factors must be positive")
        if self.cluster_sep < 0 or self.logit_scale <= 0:
            raise InvalidInputError("cluster_sep must be >= 0, logit_scale > 0")


def _sample_split(rng, spec, cluster_means, n, role):
    factors = np.asarray(spec.distortions, dtype=np.float64)
    gids = rng.integers(0, spec.num_latent_groups, size=n)
    features = cluster_means[gids] + rng.normal(size=(n, spec.feature_dim))
    true_logits = spec.logit_scale * rng.normal(size=(n, spec.num_classes))
    cdf = np.cumsum(softmax_rows(true_logits), axis=1)
    draws = rng.random(n)
    labels = np.minimum(
        (draws[:, None] >= cdf).sum(axis=1), spec.num_classes - 1
    ).astype(np.int64)
    observed = true_logits * factors[gids][:, None]
    return (
        make_dataset(features, observed, labels, role),
        Partition(gids, spec.num_latent_groups),
    )


def generate_synthetic(spec: SyntheticSpec):
    """(d_val, d_ho, d_test, latent test Partition), bit-reproducible in seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cluster_means = rng.normal(
        size=(spec.num_latent_groups, spec.feature_dim)
    ) * (spec.cluster_sep / np.sqrt(spec.feature_dim))
    d_val, _ = _sample_split(rng, spec, cluster_means, spec.n_val, SplitRole.VALIDATION)
    d_ho, _ = _sample_split(rng, spec, cluster_means, spec.n_ho, SplitRole.HOLDOUT)
    d_test, latent = _sample_split(rng, spec, cluster_means, spec.n_test, SplitRole.TEST)
    return d_val, d_ho, d_test, latent


# ---------------------------------------------------------------------------
# Repeated-trial comparison
# ---------------------------------------------------------------------------

@dataclass
class PairedTrialResult:
    metric: str
    trials: int
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    mean_diff: float
    std_diff: float
    t_statistic: float | None
    p_value: float | None
    degenerate: bool

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def paired_t(diffs) -> tuple:
    """(t, p, degenerate) for mean(d) / (std(d) / sqrt(T)), two-sided.

    Zero-variance differences are flagged degenerate instead of producing an
    infinite statistic.
    """
    d = np.asarray(diffs, dtype=np.float64).ravel()
    if d.size < 2:
        raise InvalidInputError("paired t-test needs at least 2 trials")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return None, None, True
    t = float(d.mean() / (sd / np.sqrt(d.size)))
    p = float(2.0 * scipy_stats.t.sf(abs(t), df=d.size - 1))
    return t, p, False


def repeated_trials(
    probs_a,
    probs_b,
    d_test: Dataset,
    trials: int,
    fraction: float = 0.5,
    seed: int = 0,
    metric: str = "ece",
    scheme: BinningScheme | None = None,
) -> PairedTrialResult:
    """Paired comparison of two calibrated outputs over resampled test subsets.

    Each trial takes a without-replacement subsample of ``fraction`` of the
    test rows and evaluates the metric for both methods on it.
    """
    if trials < 2:
        raise InvalidInputError("need at least 2 trials")
    if not 0 < fraction <= 1:
        raise InvalidInputError("fraction must be in (0, 1]")
    if d_test.labels is None:
        raise InvalidInputError("repeated trials need a labeled test split")
    scheme = scheme or BinningScheme()
    a = as_matrix(probs_a, "probs_a")
    b = as_matrix(probs_b, "probs_b")
    y = d_test.labels
    size = max(1, int(round(fraction * d_test.n)))
    rng = np.random.default_rng(seed)

    def score(p, idx):
        if metric == "ece":
            return metrics_mod.ece(p[idx], y[idx], scheme, "top-label").value
        if metric == "classwise-ece":
            return metrics_mod.classwise_ece(p[idx], y[idx], scheme).value
        if metric == "nll":
            return metrics_mod.nll_from_probs(p[idx], y[idx])
        if metric == "brier":
            return metrics_mod.brier(p[idx], y[idx])
        raise InvalidInputError(f"unsupported trial metric {metric!r}")

    scores_a = np.empty(trials)
    scores_b = np.empty(trials)
    for t in range(trials):
        idx = rng.choice(d_test.n, size=size, replace=False)
        scores_a[t] = score(a, idx)
        scores_b[t] = score(b, idx)
    diffs = scores_a - scores_b
    t_stat, p_value, degenerate = paired_t(diffs)
    return PairedTrialResult(
        metric=metric,
        trials=trials,
        mean_a=float(scores_a.mean()),
        std_a=float(scores_a.std(ddof=1)),
        mean_b=float(scores_b.mean()),
        std_b=float(scores_b.std(ddof=1)),
        mean_diff=float(diffs.mean()),
        std_diff=float(diffs.std(ddof=1)),
        t_statistic=t_stat,
        p_value=p_value,
        degenerate=degenerate,
    )
