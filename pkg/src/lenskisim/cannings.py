"""One day of the interday dynamics: growth, then uniform dilution back to N.

Three equivalent descriptions of the mutant count are provided: the direct
negative-binomial/hypergeometric form, the sequential-sampling form in which
end-of-day mutants are accepted one by one, and a coupled triple that runs
the true count alongside two branching-process bounds on one shared forest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .params import ModelParams, ParameterError
from .yule import StoppingRule, day_length, sample_hitting_time, sample_yule_sizes, sigma_k

TRIPLE_MAX_FOUNDERS = 10_000


@dataclass
class PopulationState:
    """Start-of-day population aggregated into rate classes."""

    rates: np.ndarray
    counts: np.ndarray
    lineage_ids: np.ndarray

    def __post_init__(self) -> None:
        self.rates = np.asarray(self.rates, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.lineage_ids = np.asarray(self.lineage_ids, dtype=np.int64)
        if not (self.rates.shape == self.counts.shape == self.lineage_ids.shape):
            raise ParameterError("rates, counts and lineage_ids must have equal length")
        if self.counts.size == 0:
            raise ParameterError("a population needs at least one class")
        if np.any(self.rates <= 0.0):
            raise ParameterError("rates must be positive")
        if np.any(self.counts < 0):
            raise ParameterError("counts must be nonnegative")
        if np.unique(self.lineage_ids).size != self.lineage_ids.size:
            raise ParameterError("lineage ids must be unique per class")

    @classmethod
    def homogeneous(cls, N: int, rate: float, lineage_id: int = 0) -> "PopulationState":
        return cls(rates=[rate], counts=[N], lineage_ids=[lineage_id])

    @classmethod
    def two_type(cls, N: int, k: int, r: float, rho: float) -> "PopulationState":
        """Wild type (lineage 0, rate r) and k mutants (lineage 1, rate r + rho)."""
        return cls(rates=[r, r + rho], counts=[N - k, k], lineage_ids=[0, 1]).pruned()

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return int(self.counts.size)

    def is_homogeneous(self) -> bool:
        return bool(np.all(self.rates == self.rates[0]))

    def pruned(self) -> "PopulationState":
        keep = self.counts > 0
        if np.all(keep):
            return self
        return PopulationState(self.rates[keep], self.counts[keep], self.lineage_ids[keep])

    def count_of(self, lineage_id: int) -> int:
        return int(self.counts[self.lineage_ids == lineage_id].sum())


@dataclass
class DayOutcome:
    end_sizes: np.ndarray
    day_length: float
    post_sample: PopulationState


def run_day(state: PopulationState, gamma: float, rng: np.random.Generator,
            rule: StoppingRule = StoppingRule.EXPECTATION) -> DayOutcome:
    """Grow every class as an independent Yule process, then sample N uniformly."""
    N = state.N
    if rule is StoppingRule.EXPECTATION:
        s = day_length(state.counts, state.rates, gamma)
        end = sample_yule_sizes(state.counts, np.exp(-state.rates * s), rng)
    else:
        threshold = math.ceil(gamma * N)
        s, sizes = sample_hitting_time(list(zip(state.counts, state.rates)), threshold, rng)
        end = np.asarray(sizes, dtype=np.int64)
    if state.n_classes == 1:
        post = np.array([N], dtype=np.int64)
    else:
        post = rng.multivariate_hypergeometric(end, N)
    nxt = PopulationState(state.rates, post, state.lineage_ids).pruned()
    return DayOutcome(end_sizes=end, day_length=s, post_sample=nxt)


def day_transition_multitype(state: PopulationState, params: ModelParams,
                             rng: np.random.Generator,
                             rule: StoppingRule = StoppingRule.EXPECTATION) -> PopulationState:
    return run_day(state, params.gamma, rng, rule).post_sample


def _check_k(k, N) -> None:
    if int(k) != k or not 0 <= k <= N:
        raise ParameterError(f"k must be an integer in [0, {N}], got {k!r}")


def day_transition_two_type(k: int, params: ModelParams,
                            rng: np.random.Generator) -> tuple[int, DayOutcome]:
    """Mutant count after one day, starting from ``k`` mutants at rate ``r0 + rho``."""
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    _check_k(k, N)
    k = int(k)
    s = float(sigma_k(N, k, r, rho, gamma))
    if k == 0 or k == N:
        rate = r if k == 0 else r + rho
        end = np.array([N - k, k], dtype=np.int64)
        end = sample_yule_sizes(end, math.exp(-rate * s), rng)
        post = PopulationState.two_type(N, k, r, rho)
        return k, DayOutcome(end_sizes=end, day_length=s, post_sample=post)
    M = k + int(rng.negative_binomial(k, math.exp(-(r + rho) * s)))
    Z = (N - k) + int(rng.negative_binomial(N - k, math.exp(-r * s)))
    k_next = int(rng.hypergeometric(M, Z, N))
    post = PopulationState.two_type(N, k_next, r, rho)
    return k_next, DayOutcome(end_sizes=np.array([Z, M], dtype=np.int64), day_length=s,
                              post_sample=post)


def two_type_step(ks: np.ndarray, params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`day_transition_two_type` over an array of mutant counts."""
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    ks = np.asarray(ks, dtype=np.int64)
    out = ks.copy()
    live = (ks > 0) & (ks < N)
    if not np.any(live):
        return out
    k = ks[live]
    s = sigma_k(N, k, r, rho, gamma)
    M = k + rng.negative_binomial(k, np.exp(-(r + rho) * s))
    Z = (N - k) + rng.negative_binomial(N - k, np.exp(-r * s))
    out[live] = rng.hypergeometric(M, Z, N)
    return out


def expected_next_mutants(k, params: ModelParams):
    """``(k / gamma) * exp((r+rho) sigma_k)``, the one-day mean used for the logistic limit."""
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0) or np.any(k_arr > N):
        raise ParameterError("k must lie in [0, N]")
    if rho == 0.0:
        return k_arr if k_arr.ndim else float(k_arr)
    val = k_arr / gamma * np.exp((r + rho) * sigma_k(N, k_arr, r, rho, gamma))
    # exp((r+rho) sigma_N) = gamma up to rounding
    val = np.where(k_arr == N, float(N), val)
    return val if val.ndim else float(val)


def _sequential_accept(uniforms: np.ndarray, n_marked: int, total: int, N: int) -> int:
    """Accept the first ``n_marked`` of ``total`` individuals one at a time.

    Individual j (0-based) is kept when ``U_j < (N - kept) / (total - j)``,
    which reproduces uniform sampling of N out of ``total`` without replacement.
    """
    kept = 0
    u = uniforms.tolist()
    for j in range(n_marked):
        if kept == N:
            break
        if u[j] < (N - kept) / (total - j):
            kept += 1
    return kept


def sequential_sampling_transition(k: int, params: ModelParams, rng: np.random.Generator,
                                   uniforms: Optional[np.ndarray] = None) -> int:
    """Mutant count after one day via the sequential acceptance rule.

    Equal in law to :func:`day_transition_two_type`. ``uniforms`` may be
    supplied to share acceptance variables across coupled runs; it must hold
    at least as many entries as there are end-of-day mutants.
    """
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    _check_k(k, N)
    k = int(k)
    if k == 0 or k == N:
        return k
    s = float(sigma_k(N, k, r, rho, gamma))
    M = k + int(rng.negative_binomial(k, math.exp(-(r + rho) * s)))
    Z = (N - k) + int(rng.negative_binomial(N - k, math.exp(-r * s)))
    if uniforms is None:
        uniforms = rng.random(M)
    elif len(uniforms) < M:
        raise ParameterError(f"need {M} uniforms, got {len(uniforms)}")
    return _sequential_accept(np.asarray(uniforms), M, M + Z, N)


def sequential_sampling_batch(k: int, params: ModelParams, rng: np.random.Generator,
                              size: int) -> np.ndarray:
    """``size`` independent draws of :func:`sequential_sampling_transition`.

    The acceptance recursion is run over all replicates at once, one mutant
    index at a time.
    """
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    _check_k(k, N)
    if k == 0 or k == N:
        return np.full(size, k, dtype=np.int64)
    s = float(sigma_k(N, k, r, rho, gamma))
    M = k + rng.negative_binomial(k, math.exp(-(r + rho) * s), size=size)
    Z = (N - k) + rng.negative_binomial(N - k, math.exp(-r * s), size=size)
    total = (M + Z).astype(float)
    kept = np.zeros(size, dtype=np.int64)
    for j in range(int(M.max())):
        active = M > j
        u = rng.random(size)
        accept = active & (u < (N - kept) / (total - j))
        kept += accept
    return kept


@dataclass
class CoupledTripleState:
    """Lower bound, true count and upper bound of the mutant count."""

    k_lower: int
    k_mid: int
    k_upper: int
    alpha: float
    epsilon: float
    dominated: bool = field(default=True)

    def __post_init__(self) -> None:
        if min(self.k_lower, self.k_mid, self.k_upper) < 0:
            raise ParameterError("counts must be nonnegative")
        if not 0.0 < self.epsilon < 1.0:
            raise ParameterError("epsilon must lie in (0, 1)")


def _grow_forest(n_trees: int, rate: float, horizon: float, rng: np.random.Generator):
    """Birth epochs of ``n_trees`` independent Yule trees up to ``horizon``.

    Returns ``(tree_index, birth_time)`` arrays; founders carry time 0.
    """
    trees = [np.arange(n_trees)]
    times = [np.zeros(n_trees)]
    size = np.ones(n_trees)
    clock = np.zeros(n_trees)
    idx = np.arange(n_trees)
    while idx.size:
        clock = clock + rng.standard_exponential(idx.size) / (size * rate)
        alive = clock < horizon
        idx, clock, size = idx[alive], clock[alive], size[alive] + 1.0
        trees.append(idx)
        times.append(clock)
    return np.concatenate(trees), np.concatenate(times)


def coupled_triple_step(state: CoupledTripleState, params: ModelParams,
                        rng: np.random.Generator) -> CoupledTripleState:
    """One joint day for the lower bound, the true mutant count and the upper bound.

    All three read one forest of Yule trees grown at rate ``r + rho`` up to
    the neutral day length, and one uniform per individual. The lower bound
    keeps individuals of its first ``k_lower`` trees born before the day
    length at ``ceil(eps N)`` mutants, thinned independently with
    ``1/gamma - N**-alpha``; the upper bound keeps individuals of its first
    ``k_upper`` trees thinned with ``1/gamma + N**-alpha``; the true count
    applies the sequential acceptance rule to the first ``k_mid`` trees at
    their own day length. ``dominated`` records whether
    ``k_lower <= k_mid <= k_upper`` holds after the step.
    """
    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    kl, km, ku = state.k_lower, state.k_mid, state.k_upper
    if kl == km == ku == 0:
        return CoupledTripleState(0, 0, 0, state.alpha, state.epsilon, True)
    if km > N:
        raise ParameterError("k_mid exceeds N")
    n_trees = max(kl, km, ku)
    if n_trees > TRIPLE_MAX_FOUNDERS:
        raise ParameterError(f"coupled triple is capped at {TRIPLE_MAX_FOUNDERS} founders")

    sigma_0 = math.log(gamma) / r
    sigma_eps = float(sigma_k(N, math.ceil(state.epsilon * N), r, rho, gamma))
    sigma_mid = float(sigma_k(N, km, r, rho, gamma))
    tree, born = _grow_forest(n_trees, r + rho, sigma_0, rng)

    in_lower = (tree < kl) & (born < sigma_eps)
    in_mid = (tree < km) & (born < sigma_mid)
    in_upper = tree < ku
    # nested sets first, so the lower/true/upper selections compare prefix sums
    order = np.lexsort((~in_upper, ~in_mid, ~in_lower))
    in_lower, in_mid, in_upper = in_lower[order], in_mid[order], in_upper[order]
    u = rng.random(order.size)

    thin = N ** (-state.alpha)
    k_lower = int(np.count_nonzero(in_lower & (u < 1.0 / gamma - thin)))
    k_upper = int(np.count_nonzero(in_upper & (u < 1.0 / gamma + thin)))
    if km == 0:
        k_mid = 0
    elif km == N:
        k_mid = N
    else:
        M = int(np.count_nonzero(in_mid))
        Z = (N - km) + int(rng.negative_binomial(N - km, math.exp(-r * sigma_mid)))
        k_mid = _sequential_accept(u[in_mid], M, M + Z, N)
    dominated = k_lower <= k_mid <= k_upper
    return CoupledTripleState(k_lower, k_mid, k_upper, state.alpha, state.epsilon, dominated)


def exact_transition_matrix(params: ModelParams, quantile: float = 1.0 - 1e-12) -> np.ndarray:
    """Transition matrix of the two-type chain on {0, ..., N} for small N.

    The mutant and wild-type end-of-day sizes are enumerated up to their
    ``quantile`` points, mixed against the hypergeometric sampling law, and
    each row is renormalised to absorb the truncated mass.
    """
    from scipy import stats

    N, r, rho, gamma = params.N, params.r0, params.rho, params.gamma
    P = np.zeros((N + 1, N + 1))
    P[0, 0] = P[N, N] = 1.0
    kp = np.arange(N + 1)
    for k in range(1, N):
        s = float(sigma_k(N, k, r, rho, gamma))
        pm, pz = math.exp(-(r + rho) * s), math.exp(-r * s)
        m_fail = np.arange(int(stats.nbinom.ppf(quantile, k, pm)) + 1)
        z_fail = np.arange(int(stats.nbinom.ppf(quantile, N - k, pz)) + 1)
        wm = stats.nbinom.pmf(m_fail, k, pm)
        wz = stats.nbinom.pmf(z_fail, N - k, pz)
        M = (k + m_fail)[:, None]
        Z = ((N - k) + z_fail)[None, :]
        weight = wm[:, None] * wz[None, :]
        # hypergeom(total, marked, draws) evaluated for every k' at once
        pmf = stats.hypergeom.pmf(kp[:, None, None], (M + Z)[None], M[None], N)
        row = (pmf * weight[None]).sum(axis=(1, 2))
        P[k] = row / row.sum()
    return P
