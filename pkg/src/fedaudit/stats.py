"""Shared decision primitives: cohort z-score test and two-sample t-test.

Every detector routes its flagging decision through these two functions so
the arithmetic is identical everywhere. The Student-t tail probability is
computed locally via the regularized incomplete beta (continued fraction),
keeping the package dependency-free and bit-stable across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIDEDNESS = ("high", "low", "two_sided")


@dataclass(frozen=True)
class ZVerdict:
    z: float
    flag: bool
    sidedness: str


@dataclass(frozen=True)
class TVerdict:
    t: float
    df: int
    p: float
    flag: bool  # True when the two means are statistically indistinguishable


def z_test(scores, tau: float, sidedness: str = "two_sided") -> list[ZVerdict]:
    """Flag cohort outliers whose z-score exceeds tau on the given side(s).

    z_n = (s_n - mean) / std with the population std over the cohort. A
    zero-spread cohort carries no outlier evidence: all flags come back
    False.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) < 3:
        raise ValueError("z_test needs a flat vector of at least 3 scores")
    if sidedness not in SIDEDNESS:
        raise ValueError(f"sidedness must be one of {SIDEDNESS}")
    std = float(np.std(s))
    if std == 0.0:
        return [ZVerdict(0.0, False, sidedness) for _ in s]
    z = (s - s.mean()) / std
    if sidedness == "high":
        flags = z > tau
    elif sidedness == "low":
        flags = z < -tau
    else:
        flags = np.abs(z) > tau
    return [ZVerdict(float(zi), bool(fi), sidedness) for zi, fi in zip(z, flags)]


def t_test(a, b, alpha: float = 0.05) -> TVerdict:
    """Two-sample pooled-variance Student t-test, two-sided.

    The verdict flags when p >= alpha, i.e. when the group means cannot be
    told apart. Two constant, equal groups give p = 1 by definition; zero
    pooled variance with distinct means gives p = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise ValueError("t_test needs two flat vectors with at least 2 entries each")
    na, nb = len(a), len(b)
    df = na + nb - 2
    diff = float(a.mean() - b.mean())
    ss = float(((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum())
    pooled = ss / df
    if pooled == 0.0:
        if diff == 0.0:
            return TVerdict(0.0, df, 1.0, 1.0 >= alpha)
        t = math.copysign(math.inf, diff)
        return TVerdict(t, df, 0.0, 0.0 >= alpha)
    t = diff / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    p = student_t_two_sided_p(t, df)
    return TVerdict(t, df, p, p >= alpha)


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via the regularized incomplete beta."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), accurate to ~1e-14 absolute for the df range used here."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # The continued fraction converges fast only for x below the split point;
    # otherwise evaluate the mirrored series.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        ratio = d * c
        h *= ratio
        if abs(ratio - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")
