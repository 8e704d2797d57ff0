"""Monte Carlo check of the dimension-decay bound for scale-varying noise.

The bound under test: when a smoothing scheme keeps the noise scale near
sigma with probability p (over the interval [sigma^2 - k, sigma^2 + k] of the
per-sample squared scale), the probability that a tau-scaled sample lands in
the same interval after an epsilon-size shift decays like C/d with an
explicit constant C. The infimum over classifiers is never searched: the
chi-square-interval event simulated here upper-bounds it, so verifying
estimate <= C/d (+ Monte Carlo slack) checks the bound. Do not read the
estimate as the exact worst case.

Noise families are unit-variance, zero-mean, finite fourth moment;
eta_kurt := sqrt(E[r^4] - 1) enters the constant. rademacher is degenerate
(|delta|^2 = d exactly, k = 0) and is excluded from default runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .rng import StreamId

__all__ = [
    "NOISE_FAMILIES",
    "FAMILY_FOURTH_MOMENT",
    "TheorySimConfig",
    "ProbEstimate",
    "DecayRow",
    "DecayReport",
    "interval_halfwidth_k",
    "worst_case_prob",
    "lemma_constant_C",
    "d_threshold",
    "chebyshev_k_bound",
    "verify_decay",
    "THEORY_CSV_COLUMNS",
    "write_theory_csv",
]

# E[r^4] for each unit-variance family. uniform_pm is U([-sqrt(3), sqrt(3)]).
FAMILY_FOURTH_MOMENT = {"gaussian": 3.0, "rademacher": 1.0, "uniform_pm": 1.8}
NOISE_FAMILIES = tuple(sorted(FAMILY_FOURTH_MOMENT))

_SQRT3 = math.sqrt(3.0)
# Rows per sampling chunk are capped so chunk matrices stay ~256 MB. Chunks
# are drawn sequentially from ONE generator, so results do not depend on the
# chunk size.
_CHUNK_ELEMENTS = 1 << 25


@dataclass(frozen=True)
class TheorySimConfig:
    """Parameters of the decay bound hypotheses plus the simulation budget."""

    d: int
    sigma: float
    tau: float
    epsilon: float
    p: float
    noise_family: str = "gaussian"
    trials: int = 1_000_000
    kurtosis_e4: float | None = None

    def __post_init__(self):
        if self.noise_family not in FAMILY_FOURTH_MOMENT:
            raise ValueError(f"unknown noise family {self.noise_family!r}")
        if not (isinstance(self.d, int) and self.d >= 1):
            raise ValueError("d must be a positive integer")
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("sigma and tau must be positive")
        if self.sigma == self.tau:
            raise ValueError("sigma must differ from tau")
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError("epsilon must be in (0, 1/2]")
        if not 0.5 < self.p < 1.0:
            raise ValueError("p must be in (0.5, 1)")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            raise ValueError("trials must be a positive integer")
        e4 = FAMILY_FOURTH_MOMENT[self.noise_family]
        if self.kurtosis_e4 is None:
            object.__setattr__(self, "kurtosis_e4", e4)
        elif self.kurtosis_e4 != e4:
            raise ValueError(
                f"kurtosis_e4={self.kurtosis_e4} does not match "
                f"{self.noise_family} (E[r^4]={e4})")

    @property
    def eta_kurt(self) -> float:
        """sqrt(E[r^4] - 1); the fourth-moment spread entering the constant."""
        return math.sqrt(self.kurtosis_e4 - 1.0)


def _draw_rows(gen: np.random.Generator, family: str, rows: int,
               d: int) -> np.ndarray:
    if family == "gaussian":
        return gen.standard_normal((rows, d))
    if family == "rademacher":
        return gen.integers(0, 2, size=(rows, d)).astype(np.float64) * 2.0 - 1.0
    return gen.uniform(-_SQRT3, _SQRT3, size=(rows, d))


def _chunk_rows(d: int) -> int:
    return max(1, _CHUNK_ELEMENTS // d)


def interval_halfwidth_k(cfg: TheorySimConfig, trials: int,
                         stream: StreamId) -> float:
    """Empirical p-quantile of |sigma^2 |delta|^2 / d - sigma^2|.

    This is the half-width k of the tightest symmetric interval around
    sigma^2 that the per-sample squared scale hits with probability ~p.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gen = stream.generator()
    s2 = cfg.sigma ** 2
    devs = np.empty(trials)
    done = 0
    step = _chunk_rows(cfg.d)
    while done < trials:
        rows = min(step, trials - done)
        delta = _draw_rows(gen, cfg.noise_family, rows, cfg.d)
        sq = np.einsum("ij,ij->i", delta, delta)
        devs[done:done + rows] = np.abs(s2 * sq / cfg.d - s2)
        done += rows
    return float(np.quantile(devs, cfg.p))


@dataclass(frozen=True)
class ProbEstimate:
    """Binomial frequency with its standard error."""

    estimate: float
    std_error: float
    trials: int


def worst_case_prob(cfg: TheorySimConfig, k: float,
                    z_direction: np.ndarray | None,
                    stream: StreamId) -> ProbEstimate:
    """P(|tau*delta + z|^2 / d in [sigma^2 - k, sigma^2 + k]) by Monte Carlo.

    z = epsilon * unit(z_direction); default direction is the first
    coordinate axis (configurable for families that are not rotation
    invariant).
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    d = cfg.d
    if z_direction is None:
        z = np.zeros(d)
        z[0] = cfg.epsilon
    else:
        z_direction = np.asarray(z_direction, dtype=np.float64)
        if z_direction.shape != (d,):
            raise ValueError(f"z_direction must have shape ({d},)")
        norm = float(np.linalg.norm(z_direction))
        if norm == 0.0:
            raise ValueError("z_direction must be nonzero")
        z = (cfg.epsilon / norm) * z_direction
    lo, hi = cfg.sigma ** 2 - k, cfg.sigma ** 2 + k
    gen = stream.generator()
    tau = cfg.tau
    hits = 0
    done = 0
    step = _chunk_rows(d)
    while done < cfg.trials:
        rows = min(step, cfg.trials - done)
        delta = _draw_rows(gen, cfg.noise_family, rows, d)
        # |tau*delta + z|^2 = tau^2|delta|^2 + 2*tau*(delta.z) + |z|^2
        val = (tau * tau * np.einsum("ij,ij->i", delta, delta)
               + 2.0 * tau * (delta @ z) + float(z @ z)) / d
        hits += int(np.count_nonzero((val >= lo) & (val <= hi)))
        done += rows
    est = hits / cfg.trials
    se = math.sqrt(est * (1.0 - est) / cfg.trials)
    return ProbEstimate(est, se, cfg.trials)


def _constant_terms(cfg: TheorySimConfig) -> tuple[float, float, float]:
    eta2 = cfg.kurtosis_e4 - 1.0
    s2, t2, e2 = cfg.sigma ** 2, cfg.tau ** 2, cfg.epsilon ** 2
    term1 = 4.0 * s2 * s2 * eta2 / ((t2 - s2) ** 2 * (1.0 - cfg.p))
    term2 = 6.0 * e2 / (s2 + t2)
    term3 = (36.0 * t2 * t2 * eta2 + 144.0 * t2 * e2) / (s2 + t2) ** 2
    return term1, term2, term3


def lemma_constant_C(cfg: TheorySimConfig) -> float:
    """The explicit constant: max of the three closed-form terms."""
    return max(_constant_terms(cfg))


def d_threshold(cfg: TheorySimConfig) -> float:
    """Dimensions must be at least max of the first two constant terms."""
    term1, term2, _ = _constant_terms(cfg)
    return max(term1, term2)


def chebyshev_k_bound(cfg: TheorySimConfig) -> float:
    """Chebyshev upper bound sigma^2 * eta / sqrt(d (1-p)) on the quantile k."""
    return cfg.sigma ** 2 * cfg.eta_kurt / math.sqrt(cfg.d * (1.0 - cfg.p))


@dataclass(frozen=True)
class DecayRow:
    d: int
    k: float
    estimate: float
    std_error: float
    bound_c_over_d: float
    passed: bool


@dataclass(frozen=True)
class DecayReport:
    family: str
    constant_c: float
    rows: tuple
    passed: bool


def verify_decay(cfg: TheorySimConfig, dims, stream: StreamId) -> DecayReport:
    """Run the k-then-event simulation across dims; pass iff every estimate
    is at most C/d + 3*std_error. dims must be increasing and above the
    analytic d-threshold for the config."""
    dims = [int(d) for d in dims]
    if not dims or any(b <= a for a, b in zip(dims, dims[1:])):
        raise ValueError("dims must be a nonempty increasing sequence")
    thr = d_threshold(cfg)
    bad = [d for d in dims if d < thr]
    if bad:
        raise ValueError(
            f"dims {bad} below the d-threshold {thr:.4g} for this config")
    c = lemma_constant_C(cfg)
    rows = []
    for d in dims:
        cfg_d = replace(cfg, d=d)
        k = interval_halfwidth_k(cfg_d, cfg_d.trials, stream.child("k", d))
        est = worst_case_prob(cfg_d, k, None, stream.child("event", d))
        bound = c / d
        rows.append(DecayRow(d, k, est.estimate, est.std_error, bound,
                             est.estimate <= bound + 3.0 * est.std_error))
    return DecayReport(cfg.noise_family, c, tuple(rows),
                       all(r.passed for r in rows))


THEORY_CSV_COLUMNS = ["family", "d", "k", "estimate", "std_error",
                      "bound_C_over_d", "pass"]


def write_theory_csv(path, reports) -> None:
    """One row per (family, dimension) from a sequence of DecayReports."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(THEORY_CSV_COLUMNS)
        for rep in reports:
            for r in rep.rows:
                writer.writerow([rep.family, r.d, f"{r.k:.8g}",
                                 f"{r.estimate:.8g}", f"{r.std_error:.8g}",
                                 f"{r.bound_c_over_d:.8g}", int(r.passed)])
