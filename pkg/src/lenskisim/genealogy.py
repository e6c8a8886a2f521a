"""Neutral genealogies: offspring vectors, coalescence probabilities, ancestral partitions.

In a neutral day every founder grows into a geometric(1/gamma) family, since
the day ends at log(gamma)/r; dilution then keeps N of the pooled
individuals uniformly at random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import ParameterError
from .yule import StoppingRule, sample_hitting_time

_BATCH = 10_000
Z95 = 1.959963984540054


@dataclass
class OffspringVector:
    """Offspring counts of one neutral day; ``family_sizes`` are the pre-dilution sizes."""

    nu: np.ndarray
    family_sizes: np.ndarray


@dataclass(frozen=True)
class Partition:
    """Blocks of sample labels {0, ..., n-1}."""

    blocks: tuple

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple(frozenset([i]) for i in range(n)))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def is_coarsening_of(self, other: "Partition") -> bool:
        """True if every block of ``other`` lies inside a block of this partition."""
        return all(any(b <= c for c in self.blocks) for b in other.blocks)

    def canonical(self) -> tuple:
        return tuple(sorted(tuple(sorted(b)) for b in self.blocks))


@dataclass
class CoalescenceEstimate:
    estimate: float
    ci_halfwidth: float
    replicates: int


def _check(N: int, gamma: float, r: float) -> None:
    if int(N) != N or N < 2:
        raise ParameterError("N must be an integer >= 2")
    if not gamma > 1.0:
        raise ParameterError("gamma must exceed 1")
    if not r > 0.0:
        raise ParameterError("r must be positive")


def _family_sizes(N: int, gamma: float, r: float, rng: np.random.Generator,
                  rule: StoppingRule, size: Optional[int] = None) -> np.ndarray:
    if rule is StoppingRule.HITTING:
        if size is not None:
            return np.stack([_family_sizes(N, gamma, r, rng, rule) for _ in range(size)])
        _, sizes = sample_hitting_time([(1, r)] * N, math.ceil(gamma * N), rng)
        return np.asarray(sizes, dtype=np.int64)
    # exp(-r * log(gamma)/r) = 1/gamma whatever r is
    shape = (N,) if size is None else (size, N)
    return rng.geometric(1.0 / gamma, size=shape)


def sample_offspring_vector(N: int, gamma: float, r: float, rng: np.random.Generator,
                            rule: StoppingRule = StoppingRule.EXPECTATION) -> OffspringVector:
    """One generation of neutral offspring counts (sums to N)."""
    _check(N, gamma, r)
    Y = _family_sizes(N, gamma, r, rng, rule)
    return OffspringVector(nu=rng.multivariate_hypergeometric(Y, N), family_sizes=Y)


def _merger_estimate(N: int, gamma: float, r: float, replicates: int,
                     rng: np.random.Generator, order: int,
                     rule: StoppingRule) -> CoalescenceEstimate:
    _check(N, gamma, r)
    if replicates < 1000:
        raise ParameterError("need at least 1000 replicates")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < replicates:
        b = min(_BATCH, replicates - done)
        Y = _family_sizes(N, gamma, r, rng, rule, size=b).astype(float)
        Z = Y.sum(axis=1)
        num = np.ones_like(Y)
        den = np.ones_like(Z)
        for j in range(order):
            num *= Y - j
            den *= Z - j
        ratio = num.sum(axis=1) / den
        total += ratio.sum()
        total_sq += np.dot(ratio, ratio)
        done += b
    mean = total / replicates
    var = max(total_sq / replicates - mean * mean, 0.0)
    return CoalescenceEstimate(mean, Z95 * math.sqrt(var / replicates), replicates)


def estimate_pair_coalescence(N: int, gamma: float, r: float, replicates: int,
                              rng: np.random.Generator,
                              rule: StoppingRule = StoppingRule.EXPECTATION) -> CoalescenceEstimate:
    """Monte Carlo estimate of c_N = E[sum_i C(Y_i, 2) / C(Z, 2)] from raw family sizes."""
    return _merger_estimate(N, gamma, r, replicates, rng, 2, rule)


def estimate_triple_coalescence(N: int, gamma: float, r: float, replicates: int,
                                rng: np.random.Generator,
                                rule: StoppingRule = StoppingRule.EXPECTATION) -> CoalescenceEstimate:
    """Monte Carlo estimate of d_N = E[sum_i C(Y_i, 3) / C(Z, 3)]."""
    return _merger_estimate(N, gamma, r, replicates, rng, 3, rule)


def pair_coalescence_limit(N: int, gamma: float) -> float:
    """Leading-order c_N, 2 (1 - 1/gamma) / N."""
    return 2.0 * (1.0 - 1.0 / gamma) / N


def _parents(lineages: int, N: int, gamma: float, r: float, rng: np.random.Generator,
             rule: StoppingRule) -> np.ndarray:
    """Parent families of ``lineages`` distinct individuals of the current day."""
    vec = sample_offspring_vector(N, gamma, r, rng, rule)
    slot_family = np.repeat(np.arange(N), vec.nu)
    return slot_family[rng.choice(N, size=lineages, replace=False)]


def ancestral_chain(N: int, n: int, generations: int, gamma: float, r: float,
                    rng: np.random.Generator,
                    rule: StoppingRule = StoppingRule.EXPECTATION) -> list:
    """Ancestral partitions of a sample of ``n`` individuals, going back ``generations`` days.

    Each step draws a fresh offspring vector, places the current ancestral
    lineages on distinct uniformly chosen slots of the day, and merges
    lineages whose slots came from the same family.
    """
    _check(N, gamma, r)
    if not 1 <= n <= N:
        raise ParameterError("need 1 <= n <= N")
    part = Partition.singletons(n)
    chain = [part]
    for _ in range(generations):
        if part.n_blocks > 1:
            parents = _parents(part.n_blocks, N, gamma, r, rng, rule)
            merged: dict[int, frozenset] = {}
            for blk, par in zip(part.blocks, parents.tolist()):
                merged[par] = merged.get(par, frozenset()) | blk
            part = Partition(tuple(merged.values()))
        chain.append(part)
    return chain


def pair_coalescence_times(N: int, gamma: float, r: float, samples: int,
                           rng: np.random.Generator, max_generations: int = 10**7) -> np.ndarray:
    """Generations back until two sampled lineages share an ancestor."""
    _check(N, gamma, r)
    out = np.empty(samples, dtype=np.int64)
    for i in range(samples):
        for g in range(1, max_generations + 1):
            a, b = _parents(2, N, gamma, r, rng, StoppingRule.EXPECTATION)
            if a == b:
                out[i] = g
                break
        else:
            raise RuntimeError("pair did not coalesce within max_generations")
    return out


def first_merger_sizes(N: int, n: int, gamma: float, r: float, samples: int,
                       rng: np.random.Generator, max_generations: int = 10**7) -> np.ndarray:
    """Number of lineages lost at the first merger of an ``n``-sample (1 for a binary merger)."""
    _check(N, gamma, r)
    out = np.empty(samples, dtype=np.int64)
    for i in range(samples):
        for _ in range(max_generations):
            parents = _parents(n, N, gamma, r, rng, StoppingRule.EXPECTATION)
            lost = n - np.unique(parents).size
            if lost:
                out[i] = lost
                break
        else:
            raise RuntimeError("no merger within max_generations")
    return out
