"""Near-critical Galton-Watson tools for the mixed binomial offspring law.

An individual leaves Binomial(G, c) offspring where G is geometric on
{1, 2, ...} with success probability p: a Yule family grown for one day and
then thinned independently by the dilution step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import ParameterError
from .yule import sigma_k

POPULATION_CAP = 10**8


class ConvergenceError(RuntimeError):
    """The extinction fixed-point iteration hit its iteration limit."""


@dataclass(frozen=True)
class OffspringLaw:
    """Mixed binomial law: Binomial(Geometric(p) on {1, 2, ...}, c)."""

    geometric_param: float
    thinning_prob: float

    def __post_init__(self) -> None:
        if not 0.0 < self.geometric_param < 1.0:
            raise ParameterError(f"geometric_param must lie in (0, 1), got {self.geometric_param!r}")
        if not 0.0 < self.thinning_prob < 1.0:
            raise ParameterError(f"thinning_prob must lie in (0, 1), got {self.thinning_prob!r}")

    @property
    def mean(self) -> float:
        return self.thinning_prob / self.geometric_param

    @property
    def variance(self) -> float:
        p, c = self.geometric_param, self.thinning_prob
        return c * (1.0 - c) / p + c * c * (1.0 - p) / (p * p)

    def factorial_moment(self, k: int) -> float:
        """E[X (X-1) ... (X-k+1)] = k! c^k (1-p)^(k-1) / p^k."""
        p, c = self.geometric_param, self.thinning_prob
        if k == 0:
            return 1.0
        return math.factorial(k) * c**k * (1.0 - p) ** (k - 1) / p**k

    def third_moment(self) -> float:
        """Raw third moment, E[X^3] = E[(X)_3] + 3 E[(X)_2] + E[X]."""
        return self.factorial_moment(3) + 3.0 * self.factorial_moment(2) + self.factorial_moment(1)

    def asymptotics(self) -> "GWAsymptotics":
        return GWAsymptotics(beta=self.mean - 1.0, sigma2=self.variance)


@dataclass(frozen=True)
class GWAsymptotics:
    beta: float
    sigma2: float


@dataclass
class GWRun:
    """Generation sizes of one tree; ``extinct_at`` is None unless it died out."""

    sizes: list
    extinct_at: Optional[int]
    survived: bool
    capped: bool = False


@dataclass
class HittingTails:
    reach_frequency: float
    omega_tail: float
    upsilon_tail: float
    n_reached: int
    n_extinct: int
    n_unresolved: int
    threshold_generations: float


def upper_law(N: int, gamma: float, r: float, rho: float, alpha: float) -> OffspringLaw:
    """Offspring law of the upper bounding process: full day, thinning 1/gamma + N**-alpha."""
    sigma_0 = math.log(gamma) / r
    return OffspringLaw(math.exp(-(r + rho) * sigma_0), 1.0 / gamma + N ** (-alpha))


def lower_law(N: int, gamma: float, r: float, rho: float, alpha: float,
              epsilon: float) -> OffspringLaw:
    """Offspring law of the lower bounding process: day length at ceil(eps N) mutants."""
    s = float(sigma_k(N, math.ceil(epsilon * N), r, rho, gamma))
    return OffspringLaw(math.exp(-(r + rho) * s), 1.0 / gamma - N ** (-alpha))


def offspring_pgf(law: OffspringLaw, s):
    """f(s) = p (1 - c + c s) / (1 - (1 - p)(1 - c + c s))."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ParameterError("s must lie in [0, 1]")
    p, c = law.geometric_param, law.thinning_prob
    t = 1.0 - c + c * s_arr
    val = p * t / (1.0 - (1.0 - p) * t)
    return float(val) if val.ndim == 0 else val


def extinction_iterates(law: OffspringLaw, tol: float = 1e-12, max_iter: int = 10**7) -> np.ndarray:
    """Iterates q_{n+1} = f(q_n) from q_0 = 0 until the relative change is below ``tol``."""
    p, c = law.geometric_param, law.thinning_prob
    out = [0.0]
    q = 0.0
    for _ in range(max_iter):
        t = 1.0 - c + c * q
        q_new = p * t / (1.0 - (1.0 - p) * t)
        out.append(q_new)
        if abs(q_new - q) <= tol * q_new:
            return np.array(out)
        q = q_new
    raise ConvergenceError("extinction iteration did not converge")


def survival_probability_exact(law: OffspringLaw, tol: float = 1e-12) -> float:
    """One minus the smallest fixed point of the pgf; 0 when the mean is at most 1."""
    if law.mean <= 1.0:
        return 0.0
    return 1.0 - float(extinction_iterates(law, tol)[-1])


def survival_probability_asymptotic(asym: GWAsymptotics) -> float:
    """Near-critical survival probability 2 beta / sigma^2."""
    if asym.beta < 0.0:
        raise ParameterError("beta must be nonnegative")
    if not asym.sigma2 > 0.0:
        raise ParameterError("sigma2 must be positive")
    return 2.0 * asym.beta / asym.sigma2


def _next_generation(sizes: np.ndarray, law: OffspringLaw, rng: np.random.Generator) -> np.ndarray:
    # the sum of n geometrics on {1,...} is n + NB(n, p); thinning a sum is one binomial
    out = np.zeros_like(sizes)
    live = sizes > 0
    if np.any(live):
        n = sizes[live]
        grown = n + rng.negative_binomial(n, law.geometric_param)
        out[live] = rng.binomial(grown, law.thinning_prob)
    return out


def simulate_gw(law: OffspringLaw, max_generations: int, rng: np.random.Generator,
                cap: int = POPULATION_CAP) -> GWRun:
    """Generation sizes from one ancestor, stopping at extinction, the cap or the horizon."""
    size = np.array([1], dtype=np.int64)
    sizes = [1]
    for g in range(1, max_generations + 1):
        size = _next_generation(size, law, rng)
        n = int(size[0])
        sizes.append(n)
        if n == 0:
            return GWRun(sizes, extinct_at=g, survived=False)
        if n >= cap:
            return GWRun(sizes, extinct_at=None, survived=True, capped=True)
    return GWRun(sizes, extinct_at=None, survived=True)


def simulate_gw_batch(law: OffspringLaw, replicates: int, max_generations: int,
                      rng: np.random.Generator, stop_at: Optional[int] = None,
                      cap: int = POPULATION_CAP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run many independent trees side by side.

    Returns ``(extinct_at, reached_at, final_sizes)``; the first two hold the
    generation of extinction or of first reaching ``stop_at`` (-1 if it never
    happened). Trees reaching ``stop_at`` or ``cap`` are frozen there.
    """
    sizes = np.ones(replicates, dtype=np.int64)
    extinct_at = np.full(replicates, -1, dtype=np.int64)
    reached_at = np.full(replicates, -1, dtype=np.int64)
    limit = cap if stop_at is None else min(cap, stop_at)
    active = np.ones(replicates, dtype=bool)
    for g in range(1, max_generations + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sizes[idx] = _next_generation(sizes[idx], law, rng)
        died = idx[sizes[idx] == 0]
        extinct_at[died] = g
        hit = idx[sizes[idx] >= limit]
        if stop_at is not None:
            reached_at[hit[sizes[hit] >= stop_at]] = g
        active[died] = False
        active[hit] = False
    return extinct_at, reached_at, sizes


def hitting_time_tail(law: OffspringLaw, epsilon_n: int, delta: float, replicates: int,
                      rng: np.random.Generator,
                      max_generations: Optional[int] = None) -> HittingTails:
    """Tails of the time to reach ``epsilon_n`` and of the time to extinction.

    Estimates P(omega > beta^(-1-delta) | omega < inf) and
    P(upsilon > beta^(-1-delta) | upsilon < inf), where omega is the first
    generation with at least ``epsilon_n`` individuals and upsilon the
    extinction generation. Trees are stopped at ``epsilon_n``.
    """
    beta = law.mean - 1.0
    if beta <= 0.0:
        ext, _, _ = simulate_gw_batch(law, replicates, max_generations or 10**5, rng)
        n_ext = int(np.count_nonzero(ext >= 0))
        return HittingTails(0.0, 0.0, 0.0, 0, n_ext, replicates - n_ext, math.inf)
    threshold = beta ** (-1.0 - delta)
    if max_generations is None:
        max_generations = int(math.ceil(100.0 * threshold))
    ext, reach, _ = simulate_gw_batch(law, replicates, max_generations, rng, stop_at=epsilon_n)
    reached = reach >= 0
    extinct = ext >= 0
    n_reached = int(np.count_nonzero(reached))
    n_extinct = int(np.count_nonzero(extinct))
    omega_tail = float(np.mean(reach[reached] > threshold)) if n_reached else 0.0
    upsilon_tail = float(np.mean(ext[extinct] > threshold)) if n_extinct else 0.0
    return HittingTails(
        reach_frequency=n_reached / replicates,
        omega_tail=omega_tail,
        upsilon_tail=upsilon_tail,
        n_reached=n_reached,
        n_extinct=n_extinct,
        n_unresolved=replicates - n_reached - n_extinct,
        threshold_generations=threshold,
    )
