"""Two-group comparison of per-configuration AUC-ROC populations:
Shapiro-Wilk normality, Mann-Whitney U, MAD-normalized Cohen's d and a
Student-t confidence interval for the mean.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata, t as student_t

from .errors import BadSize, ConstantSample, Empty, TooFew, ZeroMad


def _poly(coef, x):
    return sum(c * x**i for i, c in enumerate(coef))


# Royston (1995) polynomial approximations
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_G = (-2.273, 0.459)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)


@lru_cache(maxsize=64)
def shapiro_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weights ``a`` for ascending order statistics."""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    i = np.arange(1, n + 1)
    m = ndtri((i - 0.375) / (n + 0.25))
    mm = float(m @ m)
    u = 1.0 / math.sqrt(n)
    an = _poly(_C1, u) + m[-1] / math.sqrt(mm)
    if n > 5:
        an1 = _poly(_C2, u) + m[-2] / math.sqrt(mm)
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
        a = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


def shapiro_wilk(x) -> tuple[float, float]:
    """W statistic and p-value with Royston's normalizing transformation.

    p-values that underflow are reported as 0.
    """
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    n = len(x)
    if not 3 <= n <= 5000:
        raise BadSize(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    if x[-1] - x[0] <= 1e-12 * max(abs(x[0]), abs(x[-1]), 1e-300):
        raise ConstantSample("Shapiro-Wilk is undefined for a constant sample")
    xc = (x - x.mean()) / (x[-1] - x[0])
    a = shapiro_coefficients(n)
    w = float((a @ xc) ** 2 / (xc @ xc))
    w = min(w, 1.0)
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    y = math.log1p(-w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return w, 0.0
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    if y == -math.inf:
        return w, 1.0
    return w, float(ndtr(-(y - mu) / sigma))


@lru_cache(maxsize=256)
def _u_distribution(n: int, m: int) -> np.ndarray:
    """Exact null counts of U for sample sizes n, m (no ties)."""
    # f[i][j] = counts for sizes (i, j); recurrence f(i,j,u) = f(i-1,j,u-j) + f(i,j-1,u)
    prev = [np.ones(1, dtype=np.float64) for _ in range(m + 1)]  # i = 0
    for i in range(1, n + 1):
        cur = [np.ones(1, dtype=np.float64)]  # j = 0
        for j in range(1, m + 1):
            size = i * j + 1
            out = np.zeros(size)
            a = prev[j]
            out[j : j + len(a)] += a
            b = cur[j - 1]
            out[: len(b)] += b
            cur.append(out)
        prev = cur
    return prev[m]


def mann_whitney_u(x, y) -> tuple[float, float]:
    """U for sample ``x`` (pairs x > y plus half the ties) and two-sided p.

    Exact null distribution when ``n*m <= 400`` and there are no ties,
    otherwise the normal approximation with tie and continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise Empty("Mann-Whitney U needs two non-empty samples")
    allv = np.concatenate([x, y])
    ranks = rankdata(allv)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    _, counts = np.unique(allv, return_counts=True)
    ties = bool(np.any(counts > 1))
    if n * m <= 400 and not ties:
        dist = _u_distribution(n, m)
        total = dist.sum()
        k = int(round(u))
        lower = dist[: k + 1].sum() / total
        upper = dist[k:].sum() / total
        return u, float(min(1.0, 2.0 * min(lower, upper)))
    N = n + m
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts)) / (N * (N - 1))
    var = n * m / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    z = (abs(u - n * m / 2.0) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    return u, float(min(1.0, 2.0 * ndtr(-z)))


def mean_abs_deviation(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(np.abs(x - x.mean())))


def cohens_d_mad(x, y) -> float:
    """Mean difference over the size-weighted pooled mean absolute deviation."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) == 0 or len(y) == 0:
        raise Empty("effect size needs two non-empty samples")
    n, m = len(x), len(y)
    pooled = (n * mean_abs_deviation(x) + m * mean_abs_deviation(y)) / (n + m)
    if not pooled > 0:
        raise ZeroMad("pooled mean absolute deviation is zero")
    return float((x.mean() - y.mean()) / pooled)


def ci95_mean(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64).ravel()
    n = len(x)
    if n < 2:
        raise TooFew(f"a confidence interval needs n >= 2, got {n}")
    half = student_t.ppf(0.975, n - 1) * x.std(ddof=1) / math.sqrt(n)
    mu = x.mean()
    return float(mu - half), float(mu + half)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    shapiro_p_a: float
    shapiro_p_b: float
    u: float
    p: float
    ci_a: tuple[float, float]
    ci_b: tuple[float, float]
    effect_size: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci_a_lo"], d["ci_a_hi"] = d.pop("ci_a")
        d["ci_b_lo"], d["ci_b_hi"] = d.pop("ci_b")
        return d


COMPARISON_COLUMNS = (
    "name", "group_a", "group_b", "n_a", "n_b", "mean_a", "std_a", "mean_b", "std_b",
    "shapiro_p_a", "shapiro_p_b", "u", "p", "ci_a_lo", "ci_a_hi", "ci_b_lo", "ci_b_hi", "effect_size",
)


def compare_groups(a, b, name: str = "All Models", group_a: str = "a", group_b: str = "b") -> ComparisonRow:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) < 3 or len(b) < 3:
        raise TooFew(f"each group needs at least 3 values, got {len(a)} and {len(b)}")
    u, p = mann_whitney_u(a, b)
    return ComparisonRow(
        name=name,
        group_a=group_a,
        group_b=group_b,
        n_a=len(a),
        n_b=len(b),
        mean_a=float(a.mean()),
        std_a=float(a.std(ddof=1)),
        mean_b=float(b.mean()),
        std_b=float(b.std(ddof=1)),
        shapiro_p_a=shapiro_wilk(a)[1],
        shapiro_p_b=shapiro_wilk(b)[1],
        u=u,
        p=p,
        ci_a=ci95_mean(a),
        ci_b=ci95_mean(b),
        effect_size=cohens_d_mad(a, b),
    )


def format_table(rows: list[ComparisonRow]) -> str:
    """Plain-text table, two lines per comparison (group a marked with *)."""
    head = f"{'Comparison':<16}{'mu':>8}{'sigma':>8}{'Shapiro p':>11}{'Mann-Whitney U':>26}{'95% CI':>17}{'Effect':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        mw = f"U={r.u:g} p={r.p:.3g}"
        lines.append(
            f"{r.name:<16}{r.mean_a:>7.3f}*{r.std_a:>8.3f}{r.shapiro_p_a:>11.3g}{mw:>26}"
            f"{r.ci_a[0]:>9.3f}-{r.ci_a[1]:.3f}{r.effect_size:>9.3f}"
        )
        lines.append(
            f"{'':<16}{r.mean_b:>8.3f}{r.std_b:>8.3f}{r.shapiro_p_b:>11.3g}{'':>26}"
            f"{r.ci_b[0]:>9.3f}-{r.ci_b[1]:.3f}"
        )
    return "\n".join(lines) + "\n"
