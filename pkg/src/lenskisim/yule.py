"""Intraday growth: Yule-process size laws and the stopping times ending a day.

A Yule process of rate ``r`` started from one individual has a geometric
size on {1, 2, ...} with success probability ``exp(-r t)`` at time ``t``;
``n0`` founders give the ``n0``-fold convolution, i.e. ``n0`` plus a
negative binomial count of failures.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import ParameterError

# Summing geometrics is cheaper than a gamma-Poisson draw for few founders.
_GEOMETRIC_SUM_MAX_FOUNDERS = 64
_ROOT_RTOL = 1e-12
_NEWTON_MAX_ITER = 100
_NEWTON_ATOL = 1e-15


class RootFindingError(RuntimeError):
    """The day-length root finder failed; indicates an internal fault."""


class StoppingRule(enum.Enum):
    """How a day ends.

    EXPECTATION: at the deterministic time the expected total reaches gamma*N.
    HITTING: at the random time the realised total reaches ceil(gamma*N).
    """

    EXPECTATION = "expectation"
    HITTING = "hitting"


@dataclass(frozen=True)
class YuleLaw:
    founders: int
    rate: float
    time: float

    def __post_init__(self) -> None:
        _check_yule_args(self.founders, self.rate, self.time)

    @property
    def success_prob(self) -> float:
        return math.exp(-self.rate * self.time)

    @property
    def mean(self) -> float:
        return self.founders * math.exp(self.rate * self.time)

    @property
    def variance(self) -> float:
        g = math.exp(self.rate * self.time)
        return self.founders * g * (g - 1.0)

    def pmf(self, size):
        """P(size) on {founders, founders+1, ...}."""
        from scipy import stats

        size = np.asarray(size)
        return stats.nbinom.pmf(size - self.founders, self.founders, self.success_prob)


@dataclass(frozen=True)
class DayClock:
    sigma: float
    rule: StoppingRule = StoppingRule.EXPECTATION


def _check_yule_args(n0, rate, time) -> None:
    if int(n0) != n0 or n0 < 1:
        raise ParameterError(f"founders must be a positive integer, got {n0!r}")
    if not rate > 0.0:
        raise ParameterError(f"rate must be positive, got {rate!r}")
    if not time >= 0.0:
        raise ParameterError(f"time must be nonnegative, got {time!r}")


def sample_yule_size(law: YuleLaw, rng: np.random.Generator) -> int:
    """Draw the size at ``law.time`` of a Yule population with ``law.founders`` founders."""
    n0 = law.founders
    if law.time == 0.0:
        return n0
    p = law.success_prob
    if p <= 0.0:
        raise ParameterError("rate*time too large: success probability underflows to 0")
    if n0 <= _GEOMETRIC_SUM_MAX_FOUNDERS:
        return int(rng.geometric(p, size=n0).sum())
    return n0 + int(rng.negative_binomial(n0, p))


def sample_yule_sizes(founders, success_prob, rng: np.random.Generator) -> np.ndarray:
    """Vectorised Yule sizes: ``founders + NB(founders, success_prob)`` elementwise.

    Entries with zero founders stay zero.
    """
    founders = np.asarray(founders, dtype=np.int64)
    success_prob = np.broadcast_to(np.asarray(success_prob, dtype=float), founders.shape)
    out = founders.copy()
    live = founders > 0
    if np.any(live):
        out[live] += rng.negative_binomial(founders[live], success_prob[live])
    return out


def sample_hitting_time(founder_classes: Sequence[tuple[int, float]], threshold: int,
                        rng: np.random.Generator) -> tuple[float, list[int]]:
    """First time a multi-class pure-birth population reaches ``threshold``.

    ``founder_classes`` holds ``(count, rate)`` pairs. Returns the hitting
    time and the per-class sizes at that time (they sum to ``threshold``).

    Each class is an independent Yule process, so its birth epochs are
    partial sums of Exp((m + i) * rate) holding times; the superposition of
    the classes is exactly the multi-class chain. The hitting time is the
    ``threshold - total``-th smallest birth epoch over all classes, and no
    class can contribute more births than that.
    """
    counts = np.array([int(c) for c, _ in founder_classes], dtype=np.int64)
    rates = np.array([float(r) for _, r in founder_classes], dtype=float)
    if counts.size == 0 or np.any(counts < 0) or counts.sum() < 1:
        raise ParameterError("need at least one founder")
    if np.any(rates <= 0.0):
        raise ParameterError("rates must be positive")
    total = int(counts.sum())
    if int(threshold) != threshold or threshold <= total:
        raise ParameterError(f"threshold must exceed the founder total {total}, got {threshold!r}")
    births = int(threshold) - total

    live = np.flatnonzero(counts > 0)
    steps = np.arange(births, dtype=float)
    epochs = np.empty((live.size, births))
    for row, c in enumerate(live):
        holding = rng.standard_exponential(births) / ((counts[c] + steps) * rates[c])
        np.cumsum(holding, out=epochs[row])
    flat = epochs.ravel()
    kth = np.partition(flat, births - 1)[births - 1]
    sizes = counts.copy()
    sizes[live] += (epochs <= kth).sum(axis=1)
    return float(kth), [int(s) for s in sizes]


def day_length(counts, rates, gamma: float) -> float:
    """Deterministic day length: root of ``sum(count * exp(rate * s)) = gamma * sum(count)``."""
    counts = np.asarray(counts, dtype=float)
    rates = np.asarray(rates, dtype=float)
    live = counts > 0
    counts, rates = counts[live], rates[live]
    if counts.size == 0:
        raise ParameterError("empty population")
    if not gamma > 1.0:
        raise ParameterError(f"gamma must exceed 1, got {gamma!r}")
    log_gamma = math.log(gamma)
    r_min, r_max = float(rates.min()), float(rates.max())
    if r_min == r_max:
        return log_gamma / r_min
    logw = np.log(counts / counts.sum())
    lo, hi = log_gamma / r_max, log_gamma / r_min

    def phi(s):
        z = logw + rates * s
        zmax = z.max()
        w = np.exp(z - zmax)
        sw = w.sum()
        return zmax + math.log(sw) - log_gamma, float(np.dot(w, rates) / sw)

    s = hi
    for _ in range(_NEWTON_MAX_ITER):
        val, slope = phi(s)
        step = val / slope
        s_new = min(max(s - step, lo), hi)
        if abs(val) <= _NEWTON_ATOL or abs(s_new - s) <= 4e-16 * s:
            s = s_new
            break
        s = s_new
    else:
        raise RootFindingError("day length did not converge")
    resid = math.expm1(phi(s)[0])
    if abs(resid) > _ROOT_RTOL:
        raise RootFindingError(f"day length residual {resid:.3e} above tolerance")
    return s


def sigma_k(N: int, k, r: float, rho: float, gamma: float):
    """Day length with ``k`` mutants at rate ``r + rho`` among ``N`` individuals.

    Solves ``k exp((r+rho) s) + (N-k) exp(r s) = gamma N``. Accepts scalar or
    array ``k``; the result lies in ``[log(gamma)/(r+rho), log(gamma)/r]``.
    """
    if not (r > 0.0 and rho >= 0.0 and gamma > 1.0):
        raise ParameterError("need r > 0, rho >= 0, gamma > 1")
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0) or np.any(k_arr > N):
        raise ParameterError("k must lie in [0, N]")
    log_gamma = math.log(gamma)
    hi = log_gamma / r
    lo = log_gamma / (r + rho)
    x = k_arr / N
    s = np.full(k_arr.shape, hi)
    if rho > 0.0:
        s = np.where(x >= 1.0, lo, s)
        inner = (x > 0.0) & (x < 1.0)
        if np.any(inner):
            s[inner] = _sigma_inner(x[inner], r, rho, log_gamma, lo, hi)
    return float(s) if s.ndim == 0 else s


def _sigma_inner(x: np.ndarray, r: float, rho: float, log_gamma: float,
                 lo: float, hi: float) -> np.ndarray:
    # phi(s) = r s + log((1-x) + x e^{rho s}) - log(gamma) is convex increasing,
    # so Newton from the upper bracket decreases monotonically onto the root.
    log_x, log_1mx = np.log(x), np.log1p(-x)

    def phi(s):
        z = log_x + rho * s
        val = r * s + np.logaddexp(log_1mx, z) - log_gamma
        weight = 1.0 / (1.0 + np.exp(log_1mx - z))
        return val, r + rho * weight

    s = np.full(x.shape, hi)
    for _ in range(_NEWTON_MAX_ITER):
        val, slope = phi(s)
        s_new = np.clip(s - val / slope, lo, hi)
        # stop once the residual or the step is at rounding level
        done = np.all((np.abs(val) <= _NEWTON_ATOL) | (np.abs(s_new - s) <= 4e-16 * s))
        s = s_new
        if done:
            break
    else:
        raise RootFindingError("sigma_k did not converge")
    resid = np.expm1(phi(s)[0])
    if np.any(np.abs(resid) > _ROOT_RTOL):
        raise RootFindingError("sigma_k residual above tolerance")
    return s


def growth_factor(k, N: int, r: float, rho: float, gamma: float):
    """Mean one-day growth factor of a mutant, ``exp((r+rho) * sigma_k)``."""
    return np.exp((r + rho) * sigma_k(N, k, r, rho, gamma))
