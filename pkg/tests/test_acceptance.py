"""Acceptance criteria, one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines.
Thresholds are fixed here and nowhere else; the heavier experiments reuse
session fixtures so the whole module stays inside its runtime budgets.
"""

import time

import numpy as np
import pytest

from pce_cal.calibrators import apply_temperature, fit_temperature
from pce_cal.dataio import load_npy, save_npy
from pce_cal.grouping import GcTrainConfig, gc_ts_loss, hard_assign
from pce_cal.metrics import BinningScheme, Partition, classwise_ece, ece, partition_from_bins, pce
from pce_cal.optim import check_gradient, minimize
from pce_cal.pipeline import (
    PartitionEnsemble,
    SyntheticSpec,
    calibrate,
    fit_ensemble,
    generate_synthetic,
    paired_t,
)
from pce_cal.tensor import argmax_rows, one_hot, softmax_rows

SCHEME = BinningScheme(15, "width")


def verdict(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name} failed: {detail}"


# ---------------------------------------------------------------------------
# Shared heavy computations
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def headline_runs():
    """20-seed comparison of GC+TS (K=2, U=5) against plain TS."""
    ts_ece, gc_ece = [], []
    start = time.time()
    for seed in range(20):
        d_val, d_ho, d_test, _ = generate_synthetic(SyntheticSpec(seed=seed))
        ts = fit_temperature(d_ho.logits, d_ho.labels)
        ts_ece.append(
            ece(apply_temperature(d_test.logits, ts), d_test.labels, SCHEME).value
        )
        cfg = GcTrainConfig(num_groups=2, l2_penalty=0.1, seed=seed)
        ens = fit_ensemble(d_val, d_ho, cfg, num_partitions=5, base="ts")
        gc_ece.append(ece(calibrate(ens, d_test), d_test.labels, SCHEME).value)
    return np.array(ts_ece), np.array(gc_ece), time.time() - start


def _sub_ensemble(ensemble, count):
    return PartitionEnsemble(
        members=ensemble.members[:count],
        base=ensemble.base,
        num_groups=ensemble.num_groups,
        l2_penalty=ensemble.l2_penalty,
        seed=ensemble.seed,
        num_classes=ensemble.num_classes,
        feature_dim=ensemble.feature_dim,
        min_group_size=ensemble.min_group_size,
    )


@pytest.fixture(scope="module")
def ablation_runs():
    """Per-seed ECE across U in {1, 5, 20} and lambda in {1e-3, 0.1, 1e3}.

    Member u always trains from seed + u, so the U=20 fit contains the U=1
    and U=5 ensembles as prefixes; sub-ensembles are bitwise identical to
    separately fitted ones.
    """
    u_values = (1, 5, 20)
    lam_values = (1e-3, 0.1, 1e3)
    u_ece = {u: [] for u in u_values}
    lam_ece = {lam: [] for lam in lam_values}
    for seed in range(100, 108):
        d_val, d_ho, d_test, _ = generate_synthetic(SyntheticSpec(seed=seed))
        full = fit_ensemble(
            d_val, d_ho,
            GcTrainConfig(num_groups=2, l2_penalty=0.1, seed=seed),
            num_partitions=20, base="ts",
        )
        for u in u_values:
            probs = calibrate(_sub_ensemble(full, u), d_test)
            value = ece(probs, d_test.labels, SCHEME).value
            u_ece[u].append(value)
            if u == 5:
                lam_ece[0.1].append(value)
        for lam in (1e-3, 1e3):
            ens = fit_ensemble(
                d_val, d_ho,
                GcTrainConfig(num_groups=2, l2_penalty=lam, seed=seed),
                num_partitions=5, base="ts",
            )
            lam_ece[lam].append(
                ece(calibrate(ens, d_test), d_test.labels, SCHEME).value
            )
    return u_ece, lam_ece


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_theorem1_accuracy_preservation():
    start = time.time()
    rng = np.random.default_rng(2024)
    checked = 0
    for i in range(50):
        m = (2, 5, 10)[i % 3]
        spec = SyntheticSpec(
            n_val=500, n_ho=500, n_test=500,
            num_classes=m,
            distortions=(float(rng.uniform(1.2, 3.0)), float(rng.uniform(0.3, 0.9))),
            seed=9000 + i,
        )
        d_val, d_ho, d_test, _ = generate_synthetic(spec)
        raw = argmax_rows(d_test.logits)
        for base in ("ts", "ets"):
            cfg = GcTrainConfig(num_groups=2, l2_penalty=0.1, seed=i)
            ens = fit_ensemble(d_val, d_ho, cfg, num_partitions=2, base=base)
            probs = calibrate(ens, d_test)
            assert np.array_equal(argmax_rows(probs), raw), (i, base)
            checked += 1
    elapsed = time.time() - start
    verdict(
        "theorem1-accuracy-preservation",
        checked == 100 and elapsed < 60.0,
        f"({checked} dataset/base pairs, {elapsed:.1f}s)",
    )


def test_estimator_unification():
    rng = np.random.default_rng(7)
    worst_ece = 0.0
    worst_cw = 0.0
    for i in range(100):
        n = int(rng.integers(20, 80))
        m = int(rng.integers(2, 6))
        probs = softmax_rows(rng.normal(scale=2.0, size=(n, m)))
        labels = rng.integers(0, m, size=n)
        scheme = BinningScheme(int(rng.integers(2, 20)), "width")
        conf = probs.max(axis=1)
        via_pce = pce(
            probs, labels, [partition_from_bins(conf, scheme)],
            statistic="top-label", loss="l1",
        ).value
        dedicated = ece(probs, labels, scheme).value
        worst_ece = max(worst_ece, abs(via_pce - dedicated))

        # brute-force per-class loop oracle
        b = scheme.num_bins
        total = 0.0
        for u in range(m):
            for bin_id in range(b):
                lo, hi = bin_id / b, (bin_id + 1) / b
                idx = [
                    j for j in range(n)
                    if (lo <= probs[j, u] < hi)
                    or (bin_id == b - 1 and probs[j, u] == 1.0)
                ]
                if not idx:
                    continue
                mean_p = sum(probs[j, u] for j in idx) / len(idx)
                mean_y = sum(1.0 for j in idx if labels[j] == u) / len(idx)
                total += (len(idx) / n) * abs(mean_p - mean_y) / m
        worst_cw = max(worst_cw, abs(classwise_ece(probs, labels, scheme).value - total))
    verdict(
        "estimator-unification",
        worst_ece < 1e-12 and worst_cw < 1e-12,
        f"(max ece gap {worst_ece:.2e}, max classwise gap {worst_cw:.2e})",
    )


def test_limit_cases():
    rng = np.random.default_rng(13)
    ok = True
    details = []
    for _ in range(20):
        n, m = int(rng.integers(10, 60)), int(rng.integers(2, 5))
        probs = softmax_rows(rng.normal(scale=2.0, size=(n, m)))
        labels = rng.integers(0, m, size=n)
        bij = Partition(np.arange(n), n)
        got = pce(probs, labels, [bij], statistic="mean-vector", loss="l1").value
        want = np.abs(probs - one_hot(labels, m)).sum(axis=1).mean()
        ok &= abs(got - want) < 1e-12

        const = Partition(np.zeros(n, dtype=int), 1)
        got = pce(probs, labels, [const], statistic="mean-vector", loss="l1").value
        want = np.abs(probs.mean(axis=0) - one_hot(labels, m).mean(axis=0)).sum()
        ok &= abs(got - want) < 1e-12

        marginal = one_hot(labels, m).mean(axis=0)
        if labels.tolist().count(int(np.argmax(marginal))) > 0:
            const_probs = np.tile(marginal, (n, 1))
            ok &= ece(const_probs, labels, SCHEME).value < 1e-12
    verdict("limit-cases", ok)


def test_gradient_suite():
    start = time.time()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(20, 51))
        d = int(rng.integers(2, 9))
        m = int(rng.integers(2, 5))
        k = int(rng.integers(1, 4))
        z = rng.normal(size=(n, d))
        o = rng.normal(scale=2.0, size=(n, m))
        y = rng.integers(0, m, size=n)
        params = rng.normal(scale=0.6, size=d * k + 2 * k)
        lam = float(rng.uniform(0.0, 0.3))
        err = check_gradient(
            lambda p: gc_ts_loss(p, z, o, y, k, lam), params, step=1e-4
        )
        worst = max(worst, err)
    elapsed = time.time() - start
    verdict(
        "gradient-suite",
        worst < 1e-5 and elapsed < 10.0,
        f"(max rel err {worst:.2e}, {elapsed:.1f}s)",
    )


def test_reduction_suite():
    spec = SyntheticSpec(n_val=2000, n_ho=2000, n_test=2000, seed=0)
    d_val, d_ho, d_test, _ = generate_synthetic(spec)
    ts = fit_temperature(d_ho.logits, d_ho.labels)
    plain = apply_temperature(d_test.logits, ts)

    cfg = GcTrainConfig(num_groups=1, l2_penalty=0.1, seed=0)
    ens = fit_ensemble(d_val, d_ho, cfg, num_partitions=1, base="ts")
    gap_identity = float(np.abs(calibrate(ens, d_test) - plain).max())

    cfg = GcTrainConfig(num_groups=2, l2_penalty=1e6, seed=0)
    collapsed = fit_ensemble(d_val, d_ho, cfg, num_partitions=1, base="ts")
    nonempty = [
        g for g in range(2)
        if np.any(hard_assign(collapsed.members[0].grouping, d_val.features).group_ids == g)
    ]
    gap_collapse = float(np.abs(calibrate(collapsed, d_test) - plain).max())

    verdict(
        "reduction-suite",
        gap_identity < 1e-12 and len(nonempty) == 1 and gap_collapse < 1e-3,
        f"(identity gap {gap_identity:.2e}, nonempty groups {len(nonempty)}, "
        f"collapse gap {gap_collapse:.2e})",
    )


def test_headline_synthetic_experiment(headline_runs):
    ts_ece, gc_ece, elapsed = headline_runs
    ratio = gc_ece.mean() / ts_ece.mean()
    t_stat, p_value, degenerate = paired_t(ts_ece - gc_ece)
    ok = (
        ratio <= 0.6
        and gc_ece.mean() < 0.02
        and not degenerate
        and p_value < 0.01
        and elapsed < 300.0
    )
    verdict(
        "headline-synthetic",
        ok,
        f"(ts {ts_ece.mean():.4f}, gc {gc_ece.mean():.4f}, ratio {ratio:.3f}, "
        f"p {p_value:.1e}, {elapsed:.0f}s)",
    )


def test_ablation_trends(ablation_runs):
    u_ece, lam_ece = ablation_runs
    means = {u: float(np.mean(v)) for u, v in u_ece.items()}
    stds = {u: float(np.std(v, ddof=1)) for u, v in u_ece.items()}
    u_ok = (
        means[5] <= means[1] + stds[1]
        and means[20] <= means[5] + stds[5]
    )
    lam_means = {lam: float(np.mean(v)) for lam, v in lam_ece.items()}
    lam_ok = (
        lam_means[1e-3] > lam_means[0.1] and lam_means[1e3] > lam_means[0.1]
    )
    verdict(
        "ablation-trends",
        u_ok and lam_ok,
        f"(U {means[1]:.4f}/{means[5]:.4f}/{means[20]:.4f}, "
        f"lambda {lam_means[1e-3]:.4f}/{lam_means[0.1]:.4f}/{lam_means[1e3]:.4f})",
    )


def test_optimizer_benchmark():
    def rosenbrock(x):
        f = (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
        g = np.array(
            [
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
                200.0 * (x[1] - x[0] ** 2),
            ]
        )
        return f, g

    res = minimize(rosenbrock, np.array([-1.2, 1.0]))
    verdict(
        "optimizer-benchmark",
        res.loss < 1e-8 and res.iterations <= 200,
        f"(f {res.loss:.2e} in {res.iterations} iterations)",
    )


def test_io_round_trip(tmp_path):
    rng = np.random.default_rng(31337)
    ok = True
    for i in range(100):
        rows = 0 if i % 10 == 0 else int(rng.integers(1, 40))
        cols = int(rng.integers(1, 15))
        m = rng.normal(size=(rows, cols)) * 10.0 ** rng.integers(-8, 8)
        path = tmp_path / "m.npy"
        save_npy(m, path)
        back = load_npy(path)
        ok &= back.shape == m.shape and np.array_equal(back, m)
    verdict("io-round-trip", ok, "(100 matrices, bitwise)")
