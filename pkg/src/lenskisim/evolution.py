"""Long-run mutation-selection chain with lineage bookkeeping.

Days on which the population is homogeneous in rate and no mutation
arrives change nothing, so the engine jumps over them with a geometric
waiting time; only days with two or more rate classes are simulated.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cannings import PopulationState, run_day
from .params import ModelParams, ParameterError
from .yule import StoppingRule

logger = logging.getLogger(__name__)

MAX_RECORDS = 10**8
DEFAULT_EPSILON = 0.05


class Outcome(enum.Enum):
    FIXED = "fixed"
    LOST = "lost"
    CENSORED = "censored"


@dataclass
class SweepRecord:
    """Life of one mutant lineage: start, hitting days of eps*N and (1-eps)*N, end."""

    lineage_id: int
    start_day: int
    T1: Optional[int] = None
    T2: Optional[int] = None
    end_day: Optional[int] = None
    outcome: Outcome = Outcome.CENSORED


@dataclass(frozen=True)
class MutationEvent:
    lineage_id: int
    day: int
    parent_lineage: int
    parent_rate: float
    new_rate: float
    fitness_at_arrival: float
    interfering: bool


@dataclass(frozen=True)
class InterferenceEvent:
    """A mutation that arrived while earlier ones were still segregating."""

    day: int
    lineage_id: int
    segregating: tuple


@dataclass
class InterferenceReport:
    events: list
    frequency: float


@dataclass
class Trajectory:
    """Recorded days of one experiment plus its event log.

    ``interference_flag[j]`` is set when an interfering mutation arrived
    after the previous recorded day and up to ``days[j]``.
    """

    params: ModelParams
    horizon: int
    record_every: int
    days: np.ndarray
    F: np.ndarray
    H: np.ndarray
    n_classes: np.ndarray
    interference_flag: np.ndarray
    mutations: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    fixations: list = field(default_factory=list)
    final_state: Optional[PopulationState] = None
    simulated_days: int = 0
    max_classes: int = 1

    def rescaled_time(self) -> np.ndarray:
        """Days on the rho^-2 mu^-1 time scale."""
        p = self.params
        return self.days * (p.rho * p.rho * p.mu)


def relative_fitness(state: PopulationState, r0: float, u: float) -> float:
    """log(N^-1 sum_c count_c exp(rate_c u)) / (r0 u), with the maximum rate factored out."""
    if not u > 0.0:
        raise ParameterError("u must be positive")
    live = state.counts > 0
    rates = state.rates[live]
    counts = state.counts[live].astype(float)
    r_min, r_max = float(rates.min()), float(rates.max())
    if r_min == r_max:
        return r_max / r0
    z = np.log(counts / counts.sum()) + (rates - r_max) * u
    val = (r_max * u + math.log(np.exp(z).sum())) / (r0 * u)
    return min(max(val, r_min / r0), r_max / r0)


class _Recorder:
    def __init__(self, horizon: int, record_every: int) -> None:
        self.days = np.arange(0, horizon + 1, record_every, dtype=np.int64)
        n = self.days.size
        self.F = np.empty(n)
        self.n_classes = np.empty(n, dtype=np.int64)
        self.flag = np.zeros(n, dtype=bool)
        self.next = 0
        self.pending_flag = False

    def fill_through(self, day: int, F: float, n_classes: int) -> None:
        """Record the given values for every cadence day up to ``day``."""
        stop = int(np.searchsorted(self.days, day, side="right"))
        if stop <= self.next:
            return
        self.F[self.next:stop] = F
        self.n_classes[self.next:stop] = n_classes
        if self.pending_flag:
            self.flag[self.next] = True
            self.pending_flag = False
        self.next = stop


def run_experiment(params: ModelParams, horizon_days: int, record_every: int,
                   rng: np.random.Generator, rule: StoppingRule = StoppingRule.EXPECTATION,
                   epsilon: float = DEFAULT_EPSILON,
                   stop_after_fixations: Optional[int] = None) -> Trajectory:
    """Simulate ``horizon_days`` days from a homogeneous population at rate r0.

    Args:
        params: Model parameters; ``mu`` is the per-day mutation probability
            and each mutation adds ``psi(F) * rho`` to its carrier's rate,
            with ``psi(x) = x**-q`` and F the fitness on the arrival day.
        horizon_days: Number of days to run.
        record_every: Recording cadence in days.
        rng: Random generator owned by this run.
        rule: Stopping rule for each day.
        epsilon: Frequency threshold for the sweep stage times.
        stop_after_fixations: End the run early, once this many lineages
            have fixed and the population is homogeneous again.

    Returns:
        The recorded trajectory; lineages unresolved at the end are Censored.
    """
    if int(horizon_days) != horizon_days or horizon_days < 0:
        raise ParameterError("horizon_days must be a nonnegative integer")
    if int(record_every) != record_every or record_every < 1:
        raise ParameterError("record_every must be a positive integer")
    horizon_days, record_every = int(horizon_days), int(record_every)
    if horizon_days // record_every + 1 > MAX_RECORDS:
        raise ParameterError(f"more than {MAX_RECORDS} recorded days; raise record_every")

    N, r0, rho, mu, q = params.N, params.r0, params.rho, params.mu, params.q
    u = params.measurement_time
    lo_count, hi_count = epsilon * N, (1.0 - epsilon) * N

    state = PopulationState.homogeneous(N, r0, lineage_id=0)
    carried = {0: frozenset()}
    sweeps: dict[int, SweepRecord] = {}
    unresolved: list[int] = []
    mutations: list[MutationEvent] = []
    fixations: list[tuple[int, int]] = []
    next_id = 1
    F = 1.0
    rec = _Recorder(horizon_days, record_every)
    rec.fill_through(0, F, 1)
    day = 0
    simulated = 0
    max_classes = 1
    truncated = False

    while day < horizon_days:
        if state.n_classes == 1:
            if stop_after_fixations is not None and len(fixations) >= stop_after_fixations:
                truncated = True
                break
            if mu == 0.0:
                break
            gap = int(rng.geometric(mu))
            if day + gap > horizon_days:
                break
            rec.fill_through(day + gap - 1, F, 1)
            day += gap
            mutate = True
        else:
            day += 1
            mutate = mu > 0.0 and rng.random() < mu

        if mutate:
            pick = int(np.searchsorted(np.cumsum(state.counts), rng.integers(N), side="right"))
            parent_id = int(state.lineage_ids[pick])
            parent_rate = float(state.rates[pick])
            new_rate = parent_rate + (F ** (-q)) * rho
            interfering = state.n_classes > 1
            mid = next_id
            next_id += 1
            if interfering:
                rec.pending_flag = True
            mutations.append(MutationEvent(mid, day, parent_id, parent_rate, new_rate, F,
                                           interfering))
            counts = state.counts.copy()
            counts[pick] -= 1
            state = PopulationState(np.append(state.rates, new_rate), np.append(counts, 1),
                                    np.append(state.lineage_ids, mid)).pruned()
            carried[mid] = carried[parent_id] | {mid}
            rec_m = SweepRecord(mid, day)
            sweeps[mid] = rec_m
            unresolved.append(mid)
            if 1 >= lo_count:
                rec_m.T1 = day
            if 1 >= hi_count:
                rec_m.T2 = day

        state = run_day(state, params.gamma, rng, rule).post_sample
        simulated += 1
        max_classes = max(max_classes, state.n_classes)
        live_ids = [int(i) for i in state.lineage_ids]
        carried = {i: carried[i] for i in live_ids}

        still = []
        for m in unresolved:
            count = int(sum(c for i, c in zip(live_ids, state.counts) if m in carried[i]))
            rec_m = sweeps[m]
            if rec_m.T1 is None and count >= lo_count:
                rec_m.T1 = day
            if rec_m.T2 is None and count >= hi_count:
                rec_m.T2 = day
            if count == 0:
                rec_m.end_day, rec_m.outcome = day, Outcome.LOST
            elif count == N:
                rec_m.end_day, rec_m.outcome = day, Outcome.FIXED
                fixations.append((day, m))
                carried = {i: s - {m} for i, s in carried.items()}
            else:
                still.append(m)
        unresolved = still
        F = relative_fitness(state, r0, u)
        rec.fill_through(day, F, state.n_classes)

    if not truncated:
        rec.fill_through(horizon_days, F, state.n_classes)
    keep = rec.next
    if unresolved:
        logger.warning("%d lineage(s) still segregating at day %d are censored", len(unresolved), day)

    sweep_list = [sweeps[m] for m in sorted(sweeps)]
    traj = Trajectory(
        params=params,
        horizon=horizon_days,
        record_every=record_every,
        days=rec.days[:keep],
        F=rec.F[:keep],
        H=np.zeros(keep, dtype=np.int64),
        n_classes=rec.n_classes[:keep],
        interference_flag=rec.flag[:keep],
        mutations=mutations,
        sweeps=sweep_list,
        fixations=fixations,
        final_state=state,
        simulated_days=simulated,
        max_classes=max_classes,
    )
    fixed_starts = np.sort([s.start_day for s in sweep_list if s.outcome is Outcome.FIXED])
    traj.H = np.searchsorted(fixed_starts, traj.days, side="right").astype(np.int64)
    return traj


@dataclass
class SuccessfulMutations:
    """Step function H: number of eventually fixed mutations started on or before a day."""

    start_days: np.ndarray
    n_censored: int

    def __call__(self, day):
        return np.searchsorted(self.start_days, day, side="right")

    def arrival_times(self, rho: float, mu: float) -> np.ndarray:
        """Start days on the (rho mu)^-1 time scale."""
        return self.start_days * (rho * mu)


def successful_mutation_count(trajectory: Trajectory) -> SuccessfulMutations:
    censored = [s for s in trajectory.sweeps if s.outcome is Outcome.CENSORED]
    if censored:
        logger.warning("excluding %d censored lineage(s) from H", len(censored))
    starts = np.sort(np.array([s.start_day for s in trajectory.sweeps
                               if s.outcome is Outcome.FIXED], dtype=np.int64))
    return SuccessfulMutations(start_days=starts, n_censored=len(censored))


def detect_interference(trajectory: Trajectory) -> InterferenceReport:
    """List mutations that arrived while an earlier lineage was unresolved.

    The frequency is the number of such arrivals over the number of
    consecutive mutation pairs.
    """
    by_id = {s.lineage_id: s for s in trajectory.sweeps}
    events = []
    for ev in trajectory.mutations:
        if not ev.interfering:
            continue
        seg = tuple(
            m.lineage_id for m in trajectory.mutations
            if m.day <= ev.day and m.lineage_id != ev.lineage_id
            and (by_id[m.lineage_id].end_day is None or by_id[m.lineage_id].end_day >= ev.day)
        )
        events.append(InterferenceEvent(ev.day, ev.lineage_id, seg))
    pairs = max(len(trajectory.mutations) - 1, 1)
    return InterferenceReport(events=events, frequency=len(events) / pairs)
