import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lenskisim.cannings import PopulationState
from lenskisim.evolution import (Outcome, detect_interference, relative_fitness, run_experiment,
                                 successful_mutation_count)
from lenskisim.params import ModelParams, ParameterError
from lenskisim.yule import StoppingRule


@pytest.fixture(scope="module")
def long_run():
    p = ModelParams.from_scalings(1000, 2.0, 0.3, 1.0)
    horizon = math.ceil(p.rho**-2 / p.mu)
    return run_experiment(p, horizon, 1, np.random.default_rng(2024))


def test_no_mutation_keeps_population_homogeneous(rng):
    p = ModelParams(N=500, gamma=2.0, mu=0.0)
    traj = run_experiment(p, 1000, 10, rng)
    assert np.all(traj.F == 1.0) and np.all(traj.H == 0)
    assert traj.days[-1] == 1000 and traj.days.size == 101
    assert traj.mutations == [] and traj.simulated_days == 0
    assert detect_interference(traj).events == []
    assert successful_mutation_count(traj)(1000) == 0


def test_relative_fitness_exact_cases():
    assert relative_fitness(PopulationState.homogeneous(100, 1.0), 1.0, 0.7) == 1.0
    assert relative_fitness(PopulationState.homogeneous(100, 1.05), 1.0, 0.7) == 1.05


@given(counts=st.lists(st.integers(1, 10**6), min_size=2, max_size=8),
       rates=st.lists(st.floats(0.5, 3.0), min_size=8, max_size=8),
       u=st.floats(1e-3, 50.0))
def test_relative_fitness_between_rate_bounds(counts, rates, u):
    rates = rates[:len(counts)]
    state = PopulationState(rates, counts, list(range(len(counts))))
    F = relative_fitness(state, 1.2, u)
    assert min(rates) / 1.2 <= F <= max(rates) / 1.2
    direct = math.log(np.dot(counts, np.exp(np.array(rates) * u)) / sum(counts)) / (1.2 * u)
    assert F == pytest.approx(direct, rel=1e-9)


def test_relative_fitness_needs_positive_u():
    with pytest.raises(ParameterError):
        relative_fitness(PopulationState.homogeneous(10, 1.0), 1.0, 0.0)


def test_horizon_validation(rng):
    p = ModelParams(N=10, gamma=2.0)
    with pytest.raises(ParameterError):
        run_experiment(p, -1, 1, rng)
    with pytest.raises(ParameterError):
        run_experiment(p, 10**12, 1, rng)


def test_seeded_runs_are_identical():
    p = ModelParams.from_scalings(500, 2.0, 0.3, 1.0)
    a = run_experiment(p, 50_000, 7, np.random.default_rng(5))
    b = run_experiment(p, 50_000, 7, np.random.default_rng(5))
    for name in ("days", "F", "H", "n_classes", "interference_flag"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.mutations == b.mutations and a.sweeps == b.sweeps and a.fixations == b.fixations


def test_fitness_bounds_and_monotone_h(long_run):
    top = max([1.0] + [m.new_rate for m in long_run.mutations])
    assert np.all(long_run.F >= 1.0) and np.all(long_run.F <= top + 1e-12)
    assert np.all(np.diff(long_run.H) >= 0)
    assert long_run.max_classes < 50


def test_additive_increments_and_fixations(long_run):
    p = long_run.params
    assert long_run.fixations
    for m in long_run.mutations:
        assert m.new_rate - m.parent_rate == pytest.approx(p.rho, rel=1e-12)
    by_id = {s.lineage_id: s for s in long_run.sweeps}
    for day, lineage in long_run.fixations:
        rec = by_id[lineage]
        assert rec.outcome is Outcome.FIXED and rec.end_day == day
        assert rec.start_day <= rec.T1 <= rec.T2 <= rec.end_day
    final = long_run.final_state
    if final.n_classes == 1:
        assert final.rates[0] == pytest.approx(1.0 + p.rho * len(long_run.fixations), rel=1e-12)


def test_fitness_tracks_fixation_count(long_run):
    # bracket Phi - rho/r0 <= F <= Phi with Phi = 1 + rho H / r0, checked on interference-free
    # days where no eventually lost lineage is still segregating
    p = long_run.params
    lost = [(s.start_day, s.end_day) for s in long_run.sweeps if s.outcome is Outcome.LOST]
    first_interference = min([m.day for m in long_run.mutations if m.interfering], default=math.inf)
    checked = 0
    for day, F, H in zip(long_run.days, long_run.F, long_run.H):
        if day >= first_interference:
            break
        if any(a <= day < b for a, b in lost):
            continue
        phi = 1.0 + p.rho * H / p.r0
        assert phi - p.rho / p.r0 - 1e-12 <= F <= phi + 1e-12
        checked += 1
    assert checked > 1000


def test_successful_mutation_step_function(long_run):
    H = successful_mutation_count(long_run)
    np.testing.assert_array_equal(H(long_run.days), long_run.H)
    assert H.arrival_times(long_run.params.rho, long_run.params.mu).size == H.start_days.size


def test_censored_lineages_are_reported(caplog):
    p = ModelParams(N=2000, gamma=2.0, rho=0.05, mu=0.5)
    with caplog.at_level(logging.WARNING, logger="lenskisim.evolution"):
        traj = run_experiment(p, 30, 1, np.random.default_rng(3))
        H = successful_mutation_count(traj)
    assert H.n_censored > 0
    assert any("censored" in rec.message for rec in caplog.records)
    assert all(s.outcome is not Outcome.FIXED for s in traj.sweeps if s.end_day is None)


def test_interference_detection(rng):
    p = ModelParams(N=300, gamma=2.0, rho=0.1, mu=0.3)
    traj = run_experiment(p, 2000, 1, rng)
    report = detect_interference(traj)
    assert report.events
    assert 0 < report.frequency <= 1
    by_id = {s.lineage_id: s for s in traj.sweeps}
    for ev in report.events:
        assert ev.segregating
        for m in ev.segregating:
            assert by_id[m].start_day < ev.day
            assert by_id[m].end_day is None or by_id[m].end_day >= ev.day
    flagged_days = set(traj.days[traj.interference_flag].tolist())
    assert flagged_days <= {e.day for e in report.events}


def test_epistatic_increment_uses_arrival_fitness(rng):
    p = ModelParams(N=300, gamma=2.0, rho=0.2, mu=0.01, q=1.0)
    traj = run_experiment(p, 20_000, 100, rng)
    assert traj.mutations
    for m in traj.mutations:
        assert m.new_rate - m.parent_rate == pytest.approx(p.rho / m.fitness_at_arrival, rel=1e-12)


def test_hitting_rule_run(rng):
    p = ModelParams(N=200, gamma=2.0, rho=0.1, mu=0.01)
    traj = run_experiment(p, 3000, 10, rng, rule=StoppingRule.HITTING)
    assert traj.F.size == 301
    assert np.all(np.diff(traj.H) >= 0)


def test_stop_after_first_fixation(rng):
    p = ModelParams.from_scalings(1000, 2.0, 0.3, 1.0)
    traj = run_experiment(p, 10**7, 10**7, rng, stop_after_fixations=1)
    assert len(traj.fixations) == 1
    assert traj.final_state.n_classes == 1


def _interference_stats(N, replicates, seed):
    p = ModelParams.from_scalings(N, 2.0, 0.3, 1.0)
    horizon = math.ceil(p.rho**-2 / p.mu)
    zero = events = pairs = 0
    for i in range(replicates):
        traj = run_experiment(p, horizon, horizon, np.random.default_rng([seed, i]))
        rep = detect_interference(traj)
        zero += not rep.events
        events += len(rep.events)
        pairs += max(len(traj.mutations) - 1, 1)
    return zero / replicates, events / pairs, p


@pytest.mark.slow
def test_interference_becomes_rarer_with_n():
    p0_small, freq_small, _ = _interference_stats(1000, 20, 1)
    p0_big, freq_big, _ = _interference_stats(10_000, 20, 2)
    assert freq_big < freq_small
    assert p0_big >= p0_small


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="per-pair interference at N=5000 is about twice "
                   "mu*rho**-1.1; the bound is asymptotic")
def test_interference_frequency_bound():
    _, freq, p = _interference_stats(5000, 10, 3)
    assert freq <= p.mu * p.rho ** -1.1
