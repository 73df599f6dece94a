"""Paired statistics for fold-level model comparison.

Two-sided p-values throughout. The t-distribution CDF is evaluated here via
the continued-fraction regularized incomplete beta function (accurate to
about 1e-10), so no stats library is needed at runtime; the Wilcoxon
signed-rank test enumerates the exact null distribution, which at five
folds bottoms out at p = 0.0625.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["TestResult", "paired_t_test", "wilcoxon_signed_rank_exact",
           "cohens_d_paired", "t_two_sided_p"]


@dataclass
class TestResult:
    statistic: float | None
    p_value: float | None
    degenerate: bool = False
    detail: str = ""

    def as_tuple(self):
        return self.statistic, self.p_value


# -- regularized incomplete beta (Lentz continued fraction) ---------------------

def _betacf(a, b, x):
    MAXIT, EPS, FPMIN = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise RuntimeError("incomplete beta did not converge")


def _lgamma(x):
    # Lanczos approximation, |error| < 1e-13 for x > 0
    g = 7.0
    coeffs = [0.99999999999980993, 676.5203681218851, -1259.1392167224028,
              771.32342877765313, -176.61502916214059, 12.507343278686905,
              -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7]
    if x < 0.5:
        return np.log(np.pi / np.sin(np.pi * x)) - _lgamma(1.0 - x)
    x -= 1.0
    acc = coeffs[0]
    t = x + g + 0.5
    for i, c in enumerate(coeffs[1:], 1):
        acc += c / (x + i)
    return 0.5 * np.log(2 * np.pi) + (x + 0.5) * np.log(t) - t + np.log(acc)


def betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (_lgamma(a + b) - _lgamma(a) - _lgamma(b)
                + a * np.log(x) + b * np.log1p(-x))
    front = np.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, dof):
    """Two-sided p-value of Student's t with `dof` degrees of freedom."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    x = dof / (dof + t * t)
    return betainc_reg(dof / 2.0, 0.5, x)


# -- the paired tests ------------------------------------------------------------

def paired_t_test(a, b):
    """t = mean(d) / (sd(d)/sqrt(n)) with the n-1 sample sd; two-sided p."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length 1-D samples with n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        return TestResult(None, None, degenerate=True,
                          detail="all paired differences identical")
    n = d.size
    t = d.mean() / (sd / np.sqrt(n))
    return TestResult(float(t), float(t_two_sided_p(t, n - 1)))


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank_exact(a, b):
    """Exact two-sided signed-rank test; zero differences are dropped,
    tied magnitudes get average ranks, W = min(W+, W-).

    The null distribution is enumerated over all 2^n sign assignments
    (as an exact subset-sum count), so n is capped at 25.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-D samples")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return TestResult(None, None, degenerate=True, detail="all differences zero")
    if not 2 <= n <= 25:
        raise ValueError(f"exact enumeration supports 2 <= n <= 25, got {n}")
    ranks = _average_ranks(np.abs(d))
    scaled = np.rint(ranks * 2.0).astype(np.int64)   # average ranks are k or k+0.5
    total = int(scaled.sum())
    w_plus = int(scaled[d > 0].sum())
    w_obs = min(w_plus, total - w_plus)
    # exact count of sign assignments by subset-sum convolution
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in scaled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    sums = np.arange(total + 1)
    extreme = np.minimum(sums, total - sums) <= w_obs
    p = counts[extreme].sum() / (2.0 ** n)
    return TestResult(w_obs / 2.0, float(min(1.0, p)))


def cohens_d_paired(a, b):
    """Paired effect size: mean(differences) / sample sd(differences)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length 1-D samples with n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        return TestResult(None, None, degenerate=True,
                          detail="zero variance of differences")
    return TestResult(float(d.mean() / sd), None)
