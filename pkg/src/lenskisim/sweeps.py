"""Single-mutation experiments: fixation probability, sweep timing and stage structure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .cannings import exact_transition_matrix, two_type_step
from .curves import c_of_gamma
from .evolution import DEFAULT_EPSILON, Outcome, SweepRecord
from .params import ModelParams, ParameterError
from .yule import sigma_k

Z95 = 1.959963984540054


@dataclass
class FixationEstimate:
    p_hat: float
    ci_halfwidth: float
    replicates: int
    theoretical: float
    n_censored: int = 0


@dataclass
class StageSummary:
    """Stage durations of fixed runs and the share of each below ``rho**-1.1``."""

    stage1: np.ndarray
    stage2: np.ndarray
    stage3: np.ndarray
    threshold: float
    frac_stage1_fast: float
    frac_stage2_fast: float
    frac_stage3_fast: float
    ordered: bool


def theoretical_fixation(rho: float, r: float, gamma: float) -> float:
    """Asymptotic fixation probability rho C(gamma) / r."""
    if rho < 0.0 or not r > 0.0:
        raise ParameterError("need rho >= 0 and r > 0")
    return rho * c_of_gamma(gamma) / r


def default_censor_cap(params: ModelParams) -> int:
    """Hard cap on sweep length: 1e3 * rho**-1.5 days, or 1e3 * N days when neutral."""
    if params.rho > 0.0:
        return int(math.ceil(1e3 * params.rho ** -1.5))
    return int(1e3 * params.N)


def run_sweeps(params: ModelParams, replicates: int, rng: np.random.Generator,
               epsilon: float = DEFAULT_EPSILON, k0: int = 1,
               cap_days: Optional[int] = None) -> list[SweepRecord]:
    """Run independent two-type chains from ``k0`` mutants until absorption or the cap.

    All replicates advance together one day at a time.
    """
    N = params.N
    if cap_days is None:
        cap_days = default_censor_cap(params)
    k = np.full(replicates, k0, dtype=np.int64)
    T1 = np.where(k >= epsilon * N, 0, -1)
    T2 = np.where(k >= (1.0 - epsilon) * N, 0, -1)
    end = np.full(replicates, -1, dtype=np.int64)
    end[(k == 0) | (k == N)] = 0
    live = np.flatnonzero(end < 0)
    day = 0
    while live.size and day < cap_days:
        day += 1
        k[live] = two_type_step(k[live], params, rng)
        kl = k[live]
        T1[live[(T1[live] < 0) & (kl >= epsilon * N)]] = day
        T2[live[(T2[live] < 0) & (kl >= (1.0 - epsilon) * N)]] = day
        done = (kl == 0) | (kl == N)
        end[live[done]] = day
        live = live[~done]
    records = []
    for i in range(replicates):
        if end[i] < 0:
            outcome, e = Outcome.CENSORED, None
        else:
            outcome, e = (Outcome.FIXED if k[i] == N else Outcome.LOST), int(end[i])
        records.append(SweepRecord(
            lineage_id=i, start_day=0,
            T1=int(T1[i]) if T1[i] >= 0 else None,
            T2=int(T2[i]) if T2[i] >= 0 else None,
            end_day=e, outcome=outcome,
        ))
    return records


def summarize_fixation(records: Sequence[SweepRecord], params: ModelParams) -> FixationEstimate:
    n = len(records)
    fixed = sum(r.outcome is Outcome.FIXED for r in records)
    censored = sum(r.outcome is Outcome.CENSORED for r in records)
    p_hat = fixed / n
    half = Z95 * math.sqrt(p_hat * (1.0 - p_hat) / n)
    theory = theoretical_fixation(params.rho, params.r0, params.gamma) if params.rho > 0 else 1.0 / params.N
    return FixationEstimate(p_hat, half, n, theory, censored)


def estimate_fixation(params: ModelParams, replicates: int, rng: np.random.Generator,
                      epsilon: float = DEFAULT_EPSILON,
                      cap_days: Optional[int] = None) -> tuple[FixationEstimate, list[SweepRecord]]:
    """Fraction of single-mutant sweeps that fix, with a 95% normal interval.

    The theoretical value is ``rho C(gamma)/r`` for rho > 0 and ``1/N`` when
    neutral. Runs longer than ``cap_days`` are Censored and count as not fixed.
    """
    if replicates < 1000:
        raise ParameterError("estimate_fixation needs at least 1000 replicates")
    records = run_sweeps(params, replicates, rng, epsilon, cap_days=cap_days)
    return summarize_fixation(records, params), records


def absorption_tail(records: Sequence[SweepRecord], threshold: float) -> float:
    """Fraction of runs whose absorption day exceeds ``threshold`` (censored runs count)."""
    late = sum(r.end_day is None or r.end_day > threshold for r in records)
    return late / len(records)


def stage_decomposition(records: Sequence[SweepRecord], epsilon: float, rho: float,
                        gamma: Optional[float] = None) -> StageSummary:
    """Split fixed sweeps into the time to eps*N, to (1-eps)*N, and to fixation."""
    bound = 1.0 / 16.0 if gamma is None else min(1.0 / gamma, 1.0 / 16.0)
    if not 0.0 < epsilon < bound:
        raise ParameterError(f"epsilon must lie in (0, {bound:g})")
    fixed = [r for r in records if r.outcome is Outcome.FIXED]
    if not fixed:
        empty = np.zeros(0)
        return StageSummary(empty, empty, empty, rho ** -1.1, math.nan, math.nan, math.nan, True)
    t1 = np.array([r.T1 - r.start_day for r in fixed], dtype=float)
    t2 = np.array([r.T2 - r.T1 for r in fixed], dtype=float)
    t3 = np.array([r.end_day - r.T2 for r in fixed], dtype=float)
    ordered = bool(np.all(t1 >= 0) and np.all(t2 >= 0) and np.all(t3 >= 0))
    thr = rho ** -1.1
    return StageSummary(t1, t2, t3, thr, float(np.mean(t1 <= thr)), float(np.mean(t2 <= thr)),
                        float(np.mean(t3 <= thr)), ordered)


def stage2_paths(params: ModelParams, runs: int, t_grid, rng: np.random.Generator,
                 epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Frequency paths K_{floor(t/rho)}/N started from ceil(eps N) mutants.

    Returns an array of shape ``(runs, len(t_grid))``.
    """
    if not params.rho > 0.0:
        raise ParameterError("stage-2 paths need rho > 0")
    N = params.N
    t_grid = np.asarray(t_grid, dtype=float)
    days = np.floor(t_grid / params.rho).astype(np.int64)
    k = np.full(runs, math.ceil(epsilon * N), dtype=np.int64)
    out = np.empty((runs, days.size))
    day = 0
    for j, d in enumerate(days):
        while day < d:
            k = two_type_step(k, params, rng)
            day += 1
        out[:, j] = k / N
    return out


def coupled_fixation_grid(N: int, gamma: float, rhos: Sequence[float], replicates: int,
                          rng: np.random.Generator, r: float = 1.0,
                          max_days: Optional[int] = None) -> np.ndarray:
    """Fixation indicators for several selection strengths driven by the same uniforms.

    Each day draws three uniforms per replicate and maps them through the
    negative binomial and hypergeometric quantile functions. These are
    monotone in the mutant count and in rho, so paths are ordered pathwise
    and a larger rho can only fix more often. Returns a boolean array of shape
    ``(len(rhos), replicates)``.
    """
    rhos = [float(x) for x in rhos]
    if max_days is None:
        max_days = 1000 * N
    ks = np.ones((len(rhos), replicates), dtype=np.int64)
    for _ in range(max_days):
        live = (ks > 0) & (ks < N)
        if not live.any():
            break
        u = rng.random((3, replicates))
        for a, rho in enumerate(rhos):
            idx = np.flatnonzero(live[a])
            if idx.size == 0:
                continue
            k = ks[a, idx]
            s = sigma_k(N, k, r, rho, gamma)
            M = k + stats.nbinom.ppf(u[0, idx], k, np.exp(-(r + rho) * s)).astype(np.int64)
            Z = (N - k) + stats.nbinom.ppf(u[1, idx], N - k, np.exp(-r * s)).astype(np.int64)
            ks[a, idx] = stats.hypergeom.ppf(u[2, idx], M + Z, M, N).astype(np.int64)
    return ks == N


def absorbing_fixation_probabilities(P: np.ndarray) -> np.ndarray:
    """Probability of absorption at N from every state of a chain on {0, ..., N}."""
    n = P.shape[0] - 1
    interior = np.arange(1, n)
    A = np.eye(n - 1) - P[np.ix_(interior, interior)]
    b = P[interior, n]
    h = np.zeros(n + 1)
    h[n] = 1.0
    h[interior] = np.linalg.solve(A, b)
    return h


def neutral_fixation_oracle(N: int, gamma: float, r: float = 1.0,
                            quantile: float = 1.0 - 1e-12) -> np.ndarray:
    """Exact fixation probabilities of the neutral two-type chain (small N only)."""
    P = exact_transition_matrix(ModelParams(N=N, gamma=gamma, r0=r, rho=0.0), quantile)
    return absorbing_fixation_probabilities(P)
