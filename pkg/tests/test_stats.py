import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

import oracles
from pumpad.errors import BadSize, ConstantSample, Empty, TooFew, ZeroMad
from pumpad.stats import (
    COMPARISON_COLUMNS,
    ci95_mean,
    cohens_d_mad,
    compare_groups,
    format_table,
    mann_whitney_u,
    shapiro_wilk,
)

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=12)


# ------------------------------------------------------------------ shapiro


def normal_quantiles(n):
    return sps.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))


def test_shapiro_normal_quantiles():
    w, p = shapiro_wilk(normal_quantiles(20))
    assert w > 0.99 and 0.0 <= p <= 1.0


def test_shapiro_skewed():
    _, p = shapiro_wilk(np.exp(normal_quantiles(50)))
    assert p < 0.01


def test_shapiro_errors():
    with pytest.raises(ConstantSample):
        shapiro_wilk([2.0] * 10)
    with pytest.raises(BadSize):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(BadSize):
        shapiro_wilk(np.arange(5001.0))


@pytest.mark.parametrize("n", [3, 4, 5, 11, 12, 30, 100, 800, 5000])
def test_shapiro_matches_reference(n):
    x = np.random.default_rng(n).gamma(3.0, size=n)
    w, p = shapiro_wilk(x)
    ref = sps.shapiro(x)
    assert abs(w - ref.statistic) < 1e-4
    assert abs(p - ref.pvalue) < 1e-3 + 0.02 * ref.pvalue


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(3, 200),
    a=st.floats(1e-3, 1e3),
    b=st.floats(-1e3, 1e3),
    seed=st.integers(0, 2**16),
)
def test_shapiro_affine_invariance(n, a, b, seed):
    x = np.random.default_rng(seed).normal(size=n)
    w0, p0 = shapiro_wilk(x)
    w1, p1 = shapiro_wilk(a * x + b)
    assert abs(w0 - w1) <= 1e-10
    assert 0 < w0 <= 1 and 0 <= p0 <= 1


# ------------------------------------------------------------- mann-whitney


def test_u_examples():
    assert mann_whitney_u([1, 2], [3, 4])[0] == 0
    assert mann_whitney_u([3, 4], [1, 2])[0] == 4
    x = [0.3, 0.1, 0.7, 0.7]
    assert mann_whitney_u(x, list(reversed(x)))[0] == 8


def test_u_empty():
    with pytest.raises(Empty):
        mann_whitney_u([], [1.0])


@settings(max_examples=200, deadline=None)
@given(x=samples, y=samples)
def test_u_brute_force_and_complement(x, y):
    u, p = mann_whitney_u(x, y)
    assert u == oracles.u_pairs(x, y)
    assert u + mann_whitney_u(y, x)[0] == len(x) * len(y)
    assert 0.0 <= p <= 1.0


def exact_p(x, y):
    """Two-sided p by enumerating every split of the pooled sample."""
    pooled = list(x) + list(y)
    n = len(x)
    u_obs = oracles.u_pairs(x, y)
    us = []
    for idx in itertools.combinations(range(len(pooled)), n):
        chosen = set(idx)
        a = [pooled[i] for i in idx]
        b = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        us.append(oracles.u_pairs(a, b))
    us = np.array(us)
    lower, upper = np.mean(us <= u_obs), np.mean(us >= u_obs)
    return min(1.0, 2 * min(lower, upper))


@pytest.mark.parametrize("n,m,seed", [(3, 4, 0), (5, 5, 1), (2, 7, 2), (6, 4, 3), (1, 5, 4)])
def test_exact_p_by_enumeration(n, m, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n).tolist(), (rng.normal(size=m) + 0.5).tolist()
    assert math.isclose(mann_whitney_u(x, y)[1], exact_p(x, y), rel_tol=1e-12)


def test_exact_p_matches_scipy():
    rng = np.random.default_rng(5)
    for n, m in [(8, 12), (20, 20), (3, 30)]:
        x, y = rng.normal(size=n), rng.normal(size=m) + 0.4
        ref = sps.mannwhitneyu(x, y, alternative="two-sided", method="exact")
        u, p = mann_whitney_u(x, y)
        assert u == ref.statistic and math.isclose(p, ref.pvalue, rel_tol=1e-9)


def test_asymptotic_matches_scipy_with_ties():
    rng = np.random.default_rng(6)
    x, y = rng.integers(0, 6, size=40).astype(float), rng.integers(1, 7, size=35).astype(float)
    ref = sps.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    u, p = mann_whitney_u(x, y)
    assert u == ref.statistic and math.isclose(p, ref.pvalue, rel_tol=1e-9)


# ------------------------------------------------------------------ cohen d


def test_cohens_d_examples():
    y = np.array([0.1, 0.4, 0.2, 0.9])
    assert cohens_d_mad(y, y) == 0.0
    mad = np.mean(np.abs(y - y.mean()))
    assert math.isclose(cohens_d_mad(y + 0.3, y), 0.3 / mad, rel_tol=1e-12)
    assert cohens_d_mad([5.0, 6.0], [1.0, 2.0]) > 0


def test_cohens_d_pooling_weights_by_size():
    x, y = np.array([0.0, 2.0]), np.array([10.0, 10.0, 10.0, 12.0])
    pooled = (2 * 1.0 + 4 * 0.75) / 6
    assert math.isclose(cohens_d_mad(x, y), (1.0 - 10.5) / pooled, rel_tol=1e-12)


def test_cohens_d_zero_mad():
    with pytest.raises(ZeroMad):
        cohens_d_mad([1.0, 1.0], [1.0])


@settings(max_examples=100, deadline=None)
@given(x=samples, y=samples)
def test_cohens_d_antisymmetric(x, y):
    try:
        d = cohens_d_mad(x, y)
    except ZeroMad:
        return
    assert cohens_d_mad(y, x) == -d


# ----------------------------------------------------------------------- ci


def test_ci_brackets_constant():
    e = 1e-6 * np.random.default_rng(7).normal(size=250)
    x = 0.7 + np.concatenate([e, -e])
    lo, hi = ci95_mean(x)
    assert lo < 0.7 < hi and hi - lo < 1e-6


def test_ci_shrinks_by_root_two():
    x = np.random.default_rng(8).normal(size=400)
    x2 = np.concatenate([x, x])
    # rescale so both samples share the same ddof=1 standard deviation
    x2 = x2.mean() + (x2 - x2.mean()) * x.std(ddof=1) / x2.std(ddof=1)
    w1 = np.diff(ci95_mean(x))[0]
    w2 = np.diff(ci95_mean(x2))[0]
    assert abs(w1 / w2 - math.sqrt(2)) < 0.01


def test_ci_formula():
    x = np.array([0.2, 0.4, 0.9])
    half = sps.t.ppf(0.975, 2) * x.std(ddof=1) / math.sqrt(3)
    np.testing.assert_allclose(ci95_mean(x), (x.mean() - half, x.mean() + half), rtol=1e-14)
    with pytest.raises(TooFew):
        ci95_mean([1.0])


@settings(max_examples=100, deadline=None)
@given(
    x=st.lists(st.integers(-1000, 1000), min_size=2, max_size=30),
    c=st.integers(-1000, 1000),
)
def test_ci_shift_equivariance(x, c):
    # dyadic values keep every sum exact, so the shift is exact too
    x = np.asarray(x, float) / 8
    lo, hi = ci95_mean(x)
    lo2, hi2 = ci95_mean(x + c)
    assert math.isclose(lo2, lo + c, rel_tol=0, abs_tol=1e-9) and math.isclose(hi2, hi + c, rel_tol=0, abs_tol=1e-9)
    assert lo <= x.mean() <= hi


# ------------------------------------------------------------------ compare


def test_compare_identical_groups():
    a = [0.81, 0.84, 0.9, 0.77, 0.88]
    row = compare_groups(a, a, group_a="impeller", group_b="bearing")
    assert row.effect_size == 0.0 and row.u == len(a) ** 2 / 2
    assert row.ci_a == row.ci_b
    assert set(row.to_dict()) == set(COMPARISON_COLUMNS)


def test_compare_needs_three():
    with pytest.raises(TooFew):
        compare_groups([0.1, 0.2], [0.3, 0.4, 0.5])


def test_format_table_layout():
    rng = np.random.default_rng(9)
    rows = [
        compare_groups(rng.uniform(0.8, 0.9, 12), rng.uniform(0.5, 0.7, 12), name=name)
        for name in ("All Models", "IForest")
    ]
    text = format_table(rows)
    lines = text.splitlines()
    assert len(lines) == 2 + 2 * len(rows)
    assert lines[2].startswith("All Models") and lines[4].startswith("IForest")
    for row, line in zip(rows, lines[2::2]):
        assert f"{row.ci_a[0]:.3f}-{row.ci_a[1]:.3f}" in line
