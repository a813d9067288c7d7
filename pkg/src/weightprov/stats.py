"""Log-space statistical primitives.

Every p-value in this package is carried as a natural logarithm so that
magnitudes far below the float64 underflow threshold stay meaningful: a
rank correlation over a few thousand hidden units routinely produces
p-values around 1e-500, which a plain float collapses to zero.  Display
output clamps at ``DISPLAY_FLOOR`` (the smallest normal float64), while the
log value itself is exact.

The Student-t survival function is evaluated through the regularized
incomplete beta function, computed with a Lentz continued fraction whose
prefactor is assembled directly in log space; the even-dof chi-square
survival function uses the exact finite series, summed with log-sum-exp.
Neither path leaves log space until the caller asks for a display value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

# Smallest positive normal float64; p-values are *displayed* no lower than
# this, matching how saturated results are conventionally reported.
DISPLAY_FLOOR = 2.2e-308

# ln of the smallest positive (subnormal) float64.  Used as the finite
# surrogate for "p is exactly zero" so saturated values still aggregate.
LN_SMALLEST = math.log(5e-324)

_LN_HALF = math.log(0.5)
_FPMIN = 1e-300


@dataclass(frozen=True)
class LogPValue:
    """A p-value stored as its natural log.

    ``saturated`` marks results that are exactly zero analytically (perfect
    rank correlation); their ``ln_p`` holds the finite surrogate
    ``LN_SMALLEST`` so downstream aggregation stays well-defined.
    """

    ln_p: float
    saturated: bool = False

    def __post_init__(self):
        if math.isnan(self.ln_p):
            raise ValidationError("log p-value is NaN")
        if self.ln_p > 0.0:
            # tolerate tiny positive rounding, reject real violations
            if self.ln_p > 1e-9:
                raise ValidationError(f"log p-value {self.ln_p} is positive")
            object.__setattr__(self, "ln_p", 0.0)

    @property
    def log10_p(self) -> float:
        return self.ln_p / math.log(10.0)

    @property
    def display_p(self) -> float:
        """exp(ln_p) clamped into (0, 1] with the underflow floor."""
        p = math.exp(self.ln_p)
        return min(1.0, max(p, DISPLAY_FLOOR))

    def to_json(self) -> dict:
        return {
            "ln_p": self.ln_p,
            "log10_p": self.log10_p,
            "display_p": self.display_p,
            "saturated": self.saturated,
        }

    @staticmethod
    def exact_max() -> "LogPValue":
        """The saturated value reported for analytically-zero p."""
        return LogPValue(LN_SMALLEST, saturated=True)


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the continued fraction in the incomplete beta.

    Converges for x < (a+1)/(a+b+2); callers guarantee that.  The value is
    O(1), so it is safe to compute in linear space and take its log.
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def log_reg_inc_beta(a: float, b: float, x: float) -> float:
    """ln I_x(a, b), the log of the regularized incomplete beta function.

    Accurate deep into the lower tail because the x^a (1-x)^b prefactor is
    assembled in log space; only the O(1) continued fraction is evaluated
    in linear space.
    """
    if a <= 0 or b <= 0:
        raise DomainError("incomplete beta requires a > 0 and b > 0")
    if x <= 0.0:
        return -math.inf
    if x >= 1.0:
        return 0.0
    if x <= (a + 1.0) / (a + b + 2.0):
        ln_front = (
            a * math.log(x) + b * math.log1p(-x) - math.log(a) - _log_beta(a, b)
        )
        return ln_front + math.log(_beta_continued_fraction(a, b, x))
    # mirror branch: I_x(a,b) = 1 - I_{1-x}(b,a); the mirrored term is not
    # tiny here, so the subtraction is well-conditioned
    other = math.exp(log_reg_inc_beta(b, a, 1.0 - x))
    return math.log1p(-other)


def student_t_log_sf(t: float, dof: int) -> float:
    """ln P(T_dof > t), the one-sided upper tail of Student's t.

    t = +/-inf are handled as limits (-inf and 0 respectively).
    """
    if dof < 1:
        raise DomainError(f"t distribution needs dof >= 1, got {dof}")
    if math.isnan(t):
        raise DomainError("t statistic is NaN")
    if t == 0.0:
        return _LN_HALF
    if math.isinf(t):
        return -math.inf if t > 0 else 0.0
    x = dof / (dof + t * t)
    a = 0.5 * dof
    if t > 0:
        return _LN_HALF + log_reg_inc_beta(a, 0.5, x)
    half_tail = math.exp(_LN_HALF + log_reg_inc_beta(a, 0.5, x))
    return math.log1p(-half_tail)


def chi2_even_log_sf(x: float, dof: int) -> float:
    """ln P(chi2_dof > x) for even dof, via the exact finite series.

    With dof = 2L the survival function is e^{-x/2} * sum_{k<L} (x/2)^k / k!,
    which log-sum-exp evaluates exactly (to rounding) for any x.
    """
    if dof < 2 or dof % 2 != 0:
        raise DomainError(f"closed-form chi-square tail needs even dof >= 2, got {dof}")
    if math.isnan(x) or x < 0:
        raise DomainError(f"chi-square statistic must be >= 0, got {x}")
    if x == 0.0:
        return 0.0
    half = dof // 2
    ln_half_x = math.log(0.5 * x)
    terms = [k * ln_half_x - math.lgamma(k + 1) for k in range(half)]
    peak = max(terms)
    total = sum(math.exp(v - peak) for v in terms)
    return -0.5 * x + peak + math.log(total)


def fisher_aggregate(ps: Sequence[LogPValue]) -> LogPValue:
    """Combine independent p-values: -2 * sum(ln p) against chi2 with 2L dof.

    Operates entirely on the stored logs, so inputs like ln p = -1200
    aggregate without underflow.  A saturated input marks the aggregate as
    saturated too.
    """
    ps = list(ps)
    if not ps:
        raise DomainError("cannot aggregate an empty list of p-values")
    xi = sum(p.ln_p for p in ps)
    ln_sf = chi2_even_log_sf(-2.0 * xi, 2 * len(ps))
    saturated = any(p.saturated for p in ps)
    if saturated:
        ln_sf = min(ln_sf, LN_SMALLEST)
    return LogPValue(min(ln_sf, 0.0), saturated=saturated)


def _as_permutation(arr, name: str) -> np.ndarray:
    perm = np.asarray(arr)
    if perm.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    perm = perm.astype(np.int64, copy=False)
    n = perm.shape[0]
    seen = np.zeros(n, dtype=bool)
    if n and (perm.min() < 0 or perm.max() >= n):
        raise ValidationError(f"{name} has entries outside [0, {n})")
    seen[perm] = True
    if not seen.all():
        raise ValidationError(f"{name} is not a permutation (repeated entries)")
    return perm


def spearman_pvalue(pi1, pi2) -> LogPValue:
    """One-sided Spearman rank test between two permutations of [0, h).

    r = 1 - 6 * sum d^2 / (h (h^2 - 1)) and the p-value is the upper t tail
    P(T_{h-2} > r sqrt((h-2)/(1-r^2))): strong positive correlation gives a
    small p.  The r = +/-1 singularities are treated as limits: r = 1 maps
    to the saturated value, r = -1 to p = 1.
    """
    pi1 = _as_permutation(pi1, "pi1")
    pi2 = _as_permutation(pi2, "pi2")
    if pi1.shape[0] != pi2.shape[0]:
        raise ValidationError("permutations must have the same size")
    h = int(pi1.shape[0])
    if h < 3:
        raise DomainError(f"Spearman test needs h >= 3, got {h}")
    d = pi1 - pi2
    d2 = int(np.dot(d, d))
    denom = h * (h * h - 1)  # exact in Python ints
    if d2 == 0:
        return LogPValue.exact_max()
    if 3 * d2 == denom:  # r = -1, attained exactly by the reversal
        return LogPValue(0.0)
    one_minus_r = 6.0 * d2 / denom
    one_plus_r = 2.0 - one_minus_r
    r = 1.0 - one_minus_r
    t = r * math.sqrt((h - 2) / (one_minus_r * one_plus_r))
    return LogPValue(min(student_t_log_sf(t, h - 2), 0.0))


def rank_order(values) -> np.ndarray:
    """Ranks (0-based) of a sequence of distinct values.

    Used to turn an injective assignment into a permutation before the
    Spearman test when two models have different hidden widths.
    """
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(len(values))
    return ranks


def ks_statistic_uniform(samples: Iterable[float]) -> float:
    """Two-sided Kolmogorov-Smirnov distance to Uniform(0, 1]."""
    xs = np.sort(np.asarray(list(samples), dtype=np.float64))
    n = xs.shape[0]
    if n == 0:
        raise DomainError("KS statistic needs at least one sample")
    grid = np.arange(1, n + 1) / n
    return float(np.max(np.maximum(np.abs(grid - xs), np.abs(grid - 1.0 / n - xs))))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sided KS critical value sqrt(-ln(alpha/2) / (2n))."""
    if n < 1:
        raise DomainError("KS critical value needs n >= 1")
    return math.sqrt(-math.log(alpha / 2.0) / (2.0 * n))


def chi2_uniformity_statistic(samples, n_bins: int) -> float:
    """Pearson chi-square statistic for uniformity over equal-count bins.

    Samples are expected on the lattice {1/n_bins, ..., 1}; each lattice
    point is its own bin.
    """
    samples = np.asarray(list(samples), dtype=np.float64)
    n = samples.shape[0]
    if n == 0:
        raise DomainError("chi-square uniformity needs at least one sample")
    idx = np.rint(samples * n_bins).astype(np.int64) - 1
    if idx.min() < 0 or idx.max() >= n_bins:
        raise ValidationError("samples are not on the expected lattice")
    counts = np.bincount(idx, minlength=n_bins)
    expected = n / n_bins
    return float(((counts - expected) ** 2 / expected).sum())
