"""Metric implementations vs independent brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abaffinity.errors import ContractError, UndefinedMetricError
from abaffinity.metrics import (
    average_ranks,
    binarize_targets,
    mae,
    pearson,
    r2,
    rmse,
    roc_auc,
    spearman,
)

# ---------------------------------------------------------------------------
# independent oracles (plain-python, no shared code with the implementations)
# ---------------------------------------------------------------------------

def oracle_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def oracle_ranks(values):
    pos_by_value = {}
    for i, v in enumerate(sorted(values)):
        pos_by_value.setdefault(v, []).append(i + 1)
    return [sum(pos_by_value[v]) / len(pos_by_value[v]) for v in values]


def oracle_spearman(x, y):
    return oracle_pearson(oracle_ranks(list(x)), oracle_ranks(list(y)))


def oracle_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def oracle_r2(pred, target):
    mean_t = sum(target) / len(target)
    ss_res = sum((t - p) ** 2 for p, t in zip(pred, target))
    ss_tot = sum((t - mean_t) ** 2 for t in target)
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# trivial cases
# ---------------------------------------------------------------------------

def test_perfect_prediction():
    t = np.array([1.0, 2.0, 3.0])
    assert rmse(t, t) == 0.0
    assert mae(t, t) == 0.0
    assert r2(t, t) == 1.0


def test_constant_mean_prediction_r2_zero():
    target = np.array([1.0, 2.0, 3.0, 6.0])
    pred = np.full(4, target.mean())
    assert r2(pred, target) == pytest.approx(0.0, abs=1e-12)


def test_r2_constant_target_undefined():
    with pytest.raises(UndefinedMetricError):
        r2([1.0, 2.0], [3.0, 3.0])


def test_pearson_perfect_linear():
    x = np.linspace(-2, 5, 40)
    assert pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_constant_undefined():
    with pytest.raises(UndefinedMetricError):
        pearson([1.0, 1.0], [2.0, 3.0])


def test_spearman_monotone_transform_is_one():
    x = np.linspace(-1, 1, 25)
    assert spearman(x, np.exp(x)) == pytest.approx(1.0, abs=1e-12)


def test_average_ranks_tie_convention():
    np.testing.assert_array_equal(average_ranks([1.0, 2.0, 2.0, 3.0]),
                                  [1.0, 2.5, 2.5, 4.0])


def test_spearman_all_tied_undefined():
    with pytest.raises(UndefinedMetricError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_auc_perfect_separation():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_all_tied_scores_is_half():
    assert roc_auc([3.0, 3.0, 3.0, 3.0], [0, 1, 0, 1]) == 0.5


def test_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])


def test_binarize_median():
    labels, threshold = binarize_targets([1.0, 2.0, 3.0, 4.0], "median")
    np.testing.assert_array_equal(labels, [0, 0, 1, 1])
    assert threshold == 2.5


def test_binarize_fixed():
    labels, threshold = binarize_targets([8.0, 10.0], "fixed:9.0")
    np.testing.assert_array_equal(labels, [0, 1])
    assert threshold == 9.0


def test_binarize_degenerate():
    with pytest.raises(UndefinedMetricError):
        binarize_targets([7.0, 7.0, 7.0], "median")
    with pytest.raises(ContractError):
        binarize_targets([1.0, 2.0], "nonsense")


# ---------------------------------------------------------------------------
# oracle equivalence on random instances
# ---------------------------------------------------------------------------

def test_pearson_matches_oracle_100_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = rng.integers(100, 201)
        x = rng.standard_normal(n)
        y = rng.standard_normal(n) + 0.5 * x
        assert pearson(x, y) == pytest.approx(oracle_pearson(list(x), list(y)),
                                              abs=1e-12)


def test_spearman_matches_oracle_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(100, 201))
        # quantize to force ties
        x = np.round(rng.standard_normal(n), 1)
        y = np.round(rng.standard_normal(n) + 0.3 * x, 1)
        if np.unique(x).size < 2 or np.unique(y).size < 2:
            continue
        assert spearman(x, y) == pytest.approx(oracle_spearman(x, y), abs=1e-12)


def test_auc_matches_quadratic_oracle_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(100, 201))
        scores = np.round(rng.standard_normal(n), 1)
        labels = (rng.random(n) < 0.4).astype(int)
        if labels.min() == labels.max():
            continue
        assert roc_auc(scores, labels) == pytest.approx(
            oracle_auc(list(scores), list(labels)), abs=1e-12)


def test_r2_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(100, 201))
        t = rng.standard_normal(n)
        p = t + 0.5 * rng.standard_normal(n)
        assert r2(p, t) == pytest.approx(oracle_r2(list(p), list(t)), abs=1e-12)


def test_correlations_match_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(4)
    x = np.round(rng.standard_normal(150), 1)
    y = np.round(0.7 * x + rng.standard_normal(150), 1)
    assert pearson(x, y) == pytest.approx(scipy_stats.pearsonr(x, y)[0],
                                          abs=1e-12)
    assert spearman(x, y) == pytest.approx(scipy_stats.spearmanr(x, y)[0],
                                           abs=1e-12)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

def test_rmse_sqrt_one_minus_r2_on_standardized_targets():
    rng = np.random.default_rng(5)
    t = rng.standard_normal(500)
    t = (t - t.mean()) / t.std()  # unit population variance
    for noise in (0.1, 0.5, 2.0):
        p = 0.8 * t + noise * rng.standard_normal(500)
        assert rmse(p, t) == pytest.approx(math.sqrt(1.0 - r2(p, t)), abs=1e-6)


@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=40, unique=True),
       st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_spearman_invariant_under_strictly_increasing_map(xs, seed):
    rng = np.random.default_rng(seed)
    ys = rng.standard_normal(len(xs))
    if np.unique(ys).size < 2:
        return
    x = np.array(xs, dtype=np.float64)
    # well-separated inputs keep the map strictly increasing in floats too
    fx = np.exp(x / 100.0) + 3.0
    assert spearman(x, ys) == spearman(fx, ys)


def test_auc_antisymmetric_for_tie_free_scores():
    rng = np.random.default_rng(6)
    scores = rng.permutation(np.linspace(0, 1, 80))  # distinct
    labels = (rng.random(80) < 0.5).astype(int)
    assert roc_auc(scores, labels) == pytest.approx(
        1.0 - roc_auc(-scores, labels), abs=1e-12)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(7)
    p = rng.standard_normal(60)
    t = rng.standard_normal(60)
    labels = (rng.random(60) < 0.5).astype(int)
    perm = rng.permutation(60)
    assert rmse(p, t) == rmse(p[perm], t[perm])
    assert mae(p, t) == mae(p[perm], t[perm])
    assert pearson(p, t) == pearson(p[perm], t[perm])
    assert spearman(p, t) == spearman(p[perm], t[perm])
    assert roc_auc(p, labels) == roc_auc(p[perm], labels[perm])


def test_affine_fit_r2_at_least_constant_fit():
    rng = np.random.default_rng(8)
    t = rng.standard_normal(100)
    x = t + rng.standard_normal(100)
    slope, intercept = np.polyfit(x, t, 1)
    affine_pred = slope * x + intercept
    const_pred = np.full_like(t, t.mean())
    assert r2(affine_pred, t) >= r2(const_pred, t) - 1e-12
