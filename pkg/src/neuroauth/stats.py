"""Normality and two-sample tests on per-user performance figures."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .errors import DataError

ALPHA = 0.05
LILLIEFORS_NOTE = (
    "mean and standard deviation were estimated from the sample; the Kolmogorov "
    "p-value does not correct for this (Lilliefors bias) and is conservative"
)


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    p_value: float
    sizes: tuple
    df: float | None = None
    alpha: float = ALPHA
    notes: tuple = field(default_factory=tuple)

    @property
    def reject_null(self) -> bool:
        return self.p_value < self.alpha

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sizes"] = list(self.sizes)
        out["notes"] = list(self.notes)
        out["reject_null"] = self.reject_null
        return out


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the limiting Kolmogorov distribution."""
    if lam <= 0.0:
        return 1.0
    if lam < 1.18:
        # Jacobi theta form converges quickly for small arguments.
        s = 0.0
        c = math.pi**2 / (8.0 * lam * lam)
        for k in range(1, 50):
            term = math.exp(-((2 * k - 1) ** 2) * c)
            s += term
            if term < 1e-17:
                break
        cdf = math.sqrt(2.0 * math.pi) / lam * s
        return min(1.0, max(0.0, 1.0 - cdf))
    s = 0.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * s))


def _mean_var(xs: Sequence[float], ddof: int) -> tuple[float, float]:
    n = len(xs)
    m = math.fsum(xs) / n
    return m, math.fsum((x - m) ** 2 for x in xs) / (n - ddof)


def ks_normality_test(sample: Sequence[float], ddof: int = 1) -> TestResult:
    """One-sample KS distance to a normal with the sample's own mean and std."""
    xs = sorted(float(x) for x in sample)
    n = len(xs)
    if n < 3:
        raise DataError("KS normality test needs at least 3 values")
    mu, var = _mean_var(xs, ddof)
    if var <= 0.0:
        raise DataError("KS normality test is undefined for a constant sample")
    sd = math.sqrt(var)
    d = 0.0
    for i, x in enumerate(xs):
        f = normal_cdf((x - mu) / sd)
        d = max(d, (i + 1) / n - f, f - i / n)
    return TestResult("kolmogorov-smirnov normality", d, kolmogorov_sf(math.sqrt(n) * d),
                      (n,), notes=(LILLIEFORS_NOTE,))


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def t_test_independent(a: Sequence[float], b: Sequence[float], equal_var: bool = True) -> TestResult:
    """Two-sided two-sample t-test (pooled variance unless ``equal_var=False``)."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DataError("t-test needs at least 2 values per sample")
    ma, va = _mean_var(a, 1)
    mb, vb = _mean_var(b, 1)
    if equal_var:
        df = na + nb - 2.0
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
        name = "student t (pooled variance)"
    else:
        ra, rb = va / na, vb / nb
        se = math.sqrt(ra + rb)
        df = (ra + rb) ** 2 / (ra * ra / (na - 1) + rb * rb / (nb - 1)) if se > 0 else na + nb - 2.0
        name = "welch t"
    diff = ma - mb
    if se == 0.0:
        if diff == 0.0:
            return TestResult(name, 0.0, 1.0, (na, nb), df,
                              notes=("both samples constant and equal; t undefined",))
        return TestResult(name, math.copysign(math.inf, diff), 0.0, (na, nb), df)
    t = diff / se
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return TestResult(name, t, min(1.0, max(0.0, p)), (na, nb), df)


def hypothesis_block(per_family: dict, metrics: Sequence[str] = ("test_accuracy", "test_f1"),
                     pair: tuple[str, str] = ("lsvm", "nlsvm"), equal_var: bool = True) -> dict:
    """KS normality per (family, metric) and a t-test per metric between ``pair``.

    ``per_family`` maps family name -> {metric -> list of per-user values}.
    """
    block: dict = {"ks": [], "t_tests": [], "alpha": ALPHA}
    for fam in sorted(per_family):
        for metric in metrics:
            values = per_family[fam].get(metric, [])
            entry = {"family": fam, "metric": metric}
            try:
                entry.update(ks_normality_test(values).to_dict())
            except DataError as exc:
                entry["error"] = str(exc)
            block["ks"].append(entry)
    left, right = pair
    if left in per_family and right in per_family:
        for metric in metrics:
            entry = {"a": left, "b": right, "metric": metric}
            try:
                entry.update(t_test_independent(per_family[left][metric],
                                                per_family[right][metric],
                                                equal_var=equal_var).to_dict())
            except DataError as exc:
                entry["error"] = str(exc)
            block["t_tests"].append(entry)
    return block
