"""Smoothed classifier: noise sampling, smoothed prediction, certification.

The smoothed classifier of a base net f at scale sigma predicts
argmax_c P(f(x + delta) = c) for delta ~ N(0, sigma^2 I). CERTIFY estimates
that probability by Monte Carlo: n0 draws select the top class, n fresh draws
give a one-sided Clopper-Pearson lower bound p_lower at failure probability
alpha_cert, and the certified l2 radius is sigma * Phi^{-1}(p_lower) when
p_lower > 1/2 (otherwise the procedure abstains).

Numeric implementations are self-contained and documented:

- Phi^{-1} uses the Acklam rational approximation (central region plus two
  tail branches) refined by Newton steps on an erfc-based Phi, giving
  |Phi(result) - p| < 1e-12 across (0, 1).
- The Clopper-Pearson lower limit solves sum_{j=k}^n C(n,j) p^j (1-p)^{n-j}
  = alpha by bisection on the exact binomial tail (log-space summation),
  absolute tolerance 1e-10; k=0 maps to 0 and k=n to the closed form
  alpha^(1/n).

Noisy inputs are never clipped to any data range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import ModelParams, forward, softmax
from .rng import StreamId

__all__ = [
    "ABSTAIN",
    "SmoothingConfig",
    "NoiseBatch",
    "CertifyOutcome",
    "NotCertifiable",
    "sample_noise",
    "soft_smoothed_predict",
    "hard_class_counts",
    "std_normal_cdf",
    "std_normal_quantile",
    "clopper_pearson_lower",
    "certified_radius",
    "certify",
    "CERT_CSV_COLUMNS",
    "write_certification_csv",
    "read_certification_csv",
]

ABSTAIN = -1

# Draws per forward batch inside hard_class_counts. Fixed constant: chunking
# with one sequential generator is draw-for-draw identical to a single batch,
# so results do not depend on it, but it is part of the documented procedure.
COUNT_CHUNK = 10_000


@dataclass(frozen=True)
class SmoothingConfig:
    """Certification parameters: noise scale and CERTIFY sample sizes."""

    sigma: float
    n0: int = 100
    n: int = 1000
    alpha_cert: float = 0.001

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not (self.n >= self.n0 >= 1):
            raise ValueError("need n >= n0 >= 1")
        if not (0.0 < self.alpha_cert < 1.0):
            raise ValueError("alpha_cert must lie in (0,1)")


@dataclass(frozen=True)
class NoiseBatch:
    """m i.i.d. draws of N(0, sigma^2 I) with recorded stream provenance."""

    deltas: np.ndarray  # (m, d)
    sigma: float
    stream: StreamId

    def __post_init__(self):
        if self.deltas.ndim != 2 or self.deltas.shape[0] < 1:
            raise ValueError("deltas must be a nonempty (m, d) array")

    @property
    def m(self) -> int:
        return self.deltas.shape[0]

    @property
    def dim(self) -> int:
        return self.deltas.shape[1]


def sample_noise(sigma: float, dim: int, m: int, stream: StreamId) -> NoiseBatch:
    """Draw a NoiseBatch of m vectors in R^dim; bit-reproducible from stream."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if m < 1 or dim < 1:
        raise ValueError("need m >= 1 and dim >= 1")
    deltas = stream.generator().standard_normal((m, dim)) * sigma
    return NoiseBatch(deltas=deltas, sigma=sigma, stream=stream)


def soft_smoothed_predict(params: ModelParams, x: np.ndarray,
                          noise: NoiseBatch) -> np.ndarray:
    """Monte Carlo soft-smoothed prediction: (1/m) sum_i softmax(f(x + delta_i))."""
    x = np.asarray(x, dtype=np.float64)
    logits = forward(params, x[None, :] + noise.deltas)
    return softmax(logits).mean(axis=0)


def hard_class_counts(params: ModelParams, x: np.ndarray, count: int,
                      sigma: float, stream: StreamId) -> np.ndarray:
    """Counts of argmax f(x + delta) over `count` fresh draws of N(0, sigma^2 I).

    Argmax ties within a single forward break toward the lowest class index.
    Draws are evaluated in fixed-size chunks from one sequential generator.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    gen = stream.generator()
    counts = np.zeros(params.class_count, dtype=np.int64)
    remaining = count
    while remaining > 0:
        m = min(remaining, COUNT_CHUNK)
        noisy = x[None, :] + gen.standard_normal((m, x.shape[0])) * sigma
        preds = np.argmax(forward(params, noisy), axis=1)
        counts += np.bincount(preds, minlength=params.class_count)
        remaining -= m
    return counts


def std_normal_cdf(x: float) -> float:
    """Phi(x) via erfc; accurate in both tails."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Acklam's rational approximation coefficients for the inverse normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def std_normal_quantile(p: float) -> float:
    """Phi^{-1}(p) for p in (0,1): Acklam start, then Newton on erfc-based Phi.

    For p > 1/2 the computation runs on 1-p (exact in float64 for p >= 1/2)
    and negates, so both tails get the no-cancellation erfc branch. Accuracy
    target |Phi(result) - p| < 1e-12.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly inside (0,1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -std_normal_quantile(1.0 - p)
    x = _acklam(p)
    for _ in range(3):
        f = std_normal_cdf(x) - p
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if pdf <= 0.0:
            break
        step = f / pdf
        x -= step
        if abs(step) < 1e-15 * max(1.0, abs(x)):
            break
    return x


@lru_cache(maxsize=64)
def _log_factorials(n: int) -> np.ndarray:
    return np.array([math.lgamma(j + 1.0) for j in range(n + 1)])


def _binom_upper_tail(k: int, n: int, p: float) -> float:
    """Exact P(Binomial(n, p) >= k), summed in log space. Assumes 1 <= k <= n."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    lf = _log_factorials(n)
    j = np.arange(k, n + 1)
    log_terms = (lf[n] - lf[j] - lf[n - j]
                 + j * math.log(p) + (n - j) * math.log1p(-p))
    top = log_terms.max()
    if top < -745.0:  # every term underflows float64
        return 0.0
    return float(np.exp(top) * np.exp(log_terms - top).sum())


def clopper_pearson_lower(k: int, n: int, alpha_cert: float) -> float:
    """One-sided Clopper-Pearson lower confidence limit for a binomial proportion.

    p_lower solves P(Binomial(n, p) >= k) = alpha_cert for 0 < k <= n (by
    bisection on the exact tail, absolute tolerance 1e-10), is 0 for k = 0,
    and is alpha^(1/n) in closed form for k = n.
    """
    if not (0 <= k <= n) or n < 1:
        raise ValueError(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    if not (0.0 < alpha_cert < 1.0):
        raise ValueError("alpha_cert must lie in (0,1)")
    if k == 0:
        return 0.0
    if k == n:
        return math.exp(math.log(alpha_cert) / n)
    lo, hi = 0.0, 1.0  # tail(lo) = 0 < alpha, tail(hi) = 1 > alpha
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if _binom_upper_tail(k, n, mid) < alpha_cert:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class NotCertifiable(Exception):
    """Signal that p_lower <= 1/2, i.e. no positive radius can be certified."""


def certified_radius(p_lower: float, sigma: float) -> float:
    """sigma * Phi^{-1}(p_lower); raises NotCertifiable when p_lower <= 1/2."""
    if not (0.0 < p_lower < 1.0):
        raise ValueError("p_lower must lie in (0,1)")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if p_lower <= 0.5:
        raise NotCertifiable(f"p_lower={p_lower} is not above 1/2")
    return sigma * std_normal_quantile(p_lower)


@dataclass(frozen=True)
class CertifyOutcome:
    """CERTIFY result. certified=False means abstain: predicted_class is the

    ABSTAIN sentinel (-1) and radius is 0. p_lower always records the
    Clopper-Pearson bound computed in the estimation round (diagnostic on
    abstain rows; the certified radius equals sigma * Phi^{-1}(p_lower) only
    when certified).
    """

    certified: bool
    predicted_class: int
    radius: float
    p_lower: float

    def __post_init__(self):
        if self.certified:
            if not (self.p_lower > 0.5):
                raise ValueError("certified outcome requires p_lower > 1/2")
            if self.radius < 0:
                raise ValueError("certified radius must be nonnegative")
        else:
            if self.predicted_class != ABSTAIN or self.radius != 0.0:
                raise ValueError("abstain carries no prediction and zero radius")


def certify(params: ModelParams, x: np.ndarray, cfg: SmoothingConfig,
            stream: StreamId) -> CertifyOutcome:
    """CERTIFY at x: select top class from n0 draws, bound its probability

    from n fresh draws, certify sigma * Phi^{-1}(p_lower) or abstain. The
    selection and estimation rounds use independent substreams, so outcomes
    are identical regardless of scheduling.
    """
    counts0 = hard_class_counts(params, x, cfg.n0, cfg.sigma,
                                stream.child("selection"))
    top = int(np.argmax(counts0))  # ties break toward the lowest class index
    counts = hard_class_counts(params, x, cfg.n, cfg.sigma,
                               stream.child("estimation"))
    p_lower = clopper_pearson_lower(int(counts[top]), cfg.n, cfg.alpha_cert)
    try:
        radius = certified_radius(p_lower, cfg.sigma)
    except (NotCertifiable, ValueError):
        return CertifyOutcome(certified=False, predicted_class=ABSTAIN,
                              radius=0.0, p_lower=p_lower)
    return CertifyOutcome(certified=True, predicted_class=top,
                          radius=radius, p_lower=p_lower)


CERT_CSV_COLUMNS = ["idx", "label", "predicted", "radius", "p_lower",
                    "correct", "abstain", "seconds"]


def write_certification_csv(path, rows) -> None:
    """Write certification rows; each row is a dict with CERT_CSV_COLUMNS keys.

    radius is formatted with 6 decimals. The seconds column is measured wall
    time and is the single non-reproducible field in this file.
    """
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(CERT_CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                int(r["idx"]), int(r["label"]), int(r["predicted"]),
                f"{float(r['radius']):.6f}", f"{float(r['p_lower']):.12g}",
                int(r["correct"]), int(r["abstain"]), f"{float(r['seconds']):.4f}",
            ])


def read_certification_csv(path) -> list:
    """Read rows written by write_certification_csv back into typed dicts."""
    out = []
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CERT_CSV_COLUMNS:
            raise ValueError(f"unexpected certification CSV header: {reader.fieldnames}")
        for r in reader:
            out.append({
                "idx": int(r["idx"]), "label": int(r["label"]),
                "predicted": int(r["predicted"]), "radius": float(r["radius"]),
                "p_lower": float(r["p_lower"]), "correct": int(r["correct"]),
                "abstain": int(r["abstain"]), "seconds": float(r["seconds"]),
            })
    return out
