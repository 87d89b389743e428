"""Repeated-measures ANOVA, Bonferroni pairwise t-tests and Welch's t-test.

Tail probabilities come from the regularized incomplete beta and gamma
functions evaluated here by continued fractions, so no statistics library
is needed at run time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateDataError, ParameterError

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 10_000


# ------------------------------------------------------- special functions


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ParameterError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ParameterError("gammainc_upper needs a > 0")
    if x <= 0:
        return 1.0
    log_front = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(_MAX_ITER):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                return 1.0 - total * math.exp(log_front)
        raise ArithmeticError("incomplete gamma series did not converge")
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = b + an / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(log_front) * h
    raise ArithmeticError("incomplete gamma fraction did not converge")


def f_sf(f: float, df1: float, df2: float) -> float:
    """P(F > f) for the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def t_sf2(t: float, df: float) -> float:
    """Two-sided P(|T| > |t|) for Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def chi2_sf(x: float, df: float) -> float:
    return gammainc_upper(df / 2.0, x / 2.0)


# ------------------------------------------------------------------ ANOVA


@dataclass(frozen=True)
class RmAnovaResult:
    F: float
    df1: float  # as used for p (corrected when sphericity is rejected)
    df2: float
    epsilon: float  # Greenhouse-Geisser
    p: float
    sphericity_assumed: bool
    p_uncorrected: float
    p_corrected: float
    mauchly_w: float
    mauchly_p: float
    n: int
    k: int


def _check_matrix(scores) -> np.ndarray:
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError("scores must be an n x k matrix")
    n, k = x.shape
    if n < 2 or k < 2:
        raise ParameterError(f"need at least 2 subjects and 2 conditions, got {n}x{k}")
    if not np.isfinite(x).all():
        raise ParameterError("scores contain missing or non-finite cells")
    return x


def double_centered_covariance(x: np.ndarray) -> np.ndarray:
    s = np.cov(x, rowvar=False)
    return s - s.mean(axis=0) - s.mean(axis=1)[:, None] + s.mean()


def gg_epsilon(x: np.ndarray) -> float:
    k = x.shape[1]
    if k == 2:
        return 1.0
    d = double_centered_covariance(x)
    denom = (k - 1) * np.sum(d * d)
    if denom <= 0:
        return 1.0
    eps = float(np.trace(d) ** 2 / denom)
    return min(max(eps, 1.0 / (k - 1)), 1.0)


def helmert_contrasts(k: int) -> np.ndarray:
    """k x (k-1) orthonormal contrasts (columns orthogonal to the ones vector)."""
    c = np.zeros((k, k - 1))
    for j in range(1, k):
        c[:j, j - 1] = 1.0
        c[j, j - 1] = -j
        c[:, j - 1] /= math.sqrt(j * (j + 1))
    return c


def mauchly(x: np.ndarray) -> tuple[float, float]:
    """Mauchly's W and its chi-square p-value."""
    n, k = x.shape
    p = k - 1
    if p < 2:
        return 1.0, 1.0
    c = helmert_contrasts(k)
    m = c.T @ np.cov(x, rowvar=False) @ c
    tr = np.trace(m)
    if tr <= 0:
        return 1.0, 1.0
    w = float(np.linalg.det(m) / (tr / p) ** p)
    if w <= 0:
        return max(w, 0.0), 0.0
    f = 1.0 - (2 * p * p + p + 2) / (6.0 * p * (n - 1))
    chi = -(n - 1) * f * math.log(w)
    df = p * (p + 1) / 2 - 1
    return w, chi2_sf(max(chi, 0.0), df)


def rm_anova(scores, alpha: float = 0.05) -> RmAnovaResult:
    """One-way repeated-measures ANOVA (rows = subjects, columns = conditions).

    Mauchly's test at ``alpha`` decides whether the Greenhouse-Geisser
    corrected degrees of freedom are used for ``p``.
    """
    x = _check_matrix(scores)
    n, k = x.shape
    xc = x - x.mean()
    col = xc.mean(axis=0)
    row = xc.mean(axis=1)
    ss_cond = n * np.sum(col**2)
    # residuals directly rather than by subtraction, which loses digits
    ss_err = np.sum((xc - row[:, None] - col[None, :]) ** 2)
    df1, df2 = k - 1, (k - 1) * (n - 1)
    # residuals below ~1e-12 of the data's magnitude are rounding noise
    if ss_err <= 1e-24 * x.size * max(float(np.max(np.abs(x))) ** 2, _TINY):
        raise DegenerateDataError("zero error variance: the condition x subject residual vanishes")
    f = (ss_cond / df1) / (ss_err / df2)
    eps = gg_epsilon(x)
    p_unc = f_sf(f, df1, df2)
    p_gg = f_sf(f, eps * df1, eps * df2)
    w, p_w = mauchly(x)
    spherical = p_w >= alpha
    return RmAnovaResult(
        F=float(f),
        df1=float(df1 if spherical else eps * df1),
        df2=float(df2 if spherical else eps * df2),
        epsilon=eps,
        p=p_unc if spherical else p_gg,
        sphericity_assumed=spherical,
        p_uncorrected=p_unc,
        p_corrected=p_gg,
        mauchly_w=w,
        mauchly_p=p_w,
        n=n,
        k=k,
    )


# ---------------------------------------------------------------- t-tests


@dataclass(frozen=True)
class PairedResult:
    a: int
    b: int
    t: float
    df: int
    p_raw: float
    p_corrected: float
    degenerate: bool = False


def paired_t(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Paired t statistic and two-sided p; identical columns give (0, 1)."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    n = len(d)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        raise DegenerateDataError("constant non-zero paired difference")
    t = mean / (sd / math.sqrt(n))
    return float(t), t_sf2(t, n - 1)


def bonferroni_pairwise(scores) -> list[PairedResult]:
    """Paired t-tests for every condition pair, p multiplied by the pair count."""
    x = _check_matrix(scores)
    n, k = x.shape
    pairs = list(combinations(range(k), 2))
    m = len(pairs)
    out = []
    for a, b in pairs:
        try:
            t, p = paired_t(x[:, a], x[:, b])
        except DegenerateDataError:
            out.append(PairedResult(a, b, math.nan, n - 1, math.nan, math.nan, degenerate=True))
            continue
        out.append(PairedResult(a, b, t, n - 1, p, min(1.0, p * m)))
    return out


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_ttest(a, b) -> WelchResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ParameterError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va == 0 and vb == 0:
        raise DegenerateDataError("both samples have zero variance")
    se2 = va + vb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return WelchResult(float(t), float(df), t_sf2(t, df))
