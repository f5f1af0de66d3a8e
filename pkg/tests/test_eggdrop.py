"""Probe-plan tests, checked against an exhaustive minimax oracle.

The library computes worst-case trial counts from partial binomial sums;
the oracle here recomputes them by brute force over all adaptive plans.
"""

from functools import lru_cache

import pytest

from stealtheval.search import egg_drop_plan, plan_coverage, plan_worst_case

BIG = 10 ** 9


@lru_cache(maxsize=None)
def minimax_trials(n: int, k: int) -> int:
    """Exhaustive minimax: best worst-case probes to localize among n
    sub-intervals with at most k flagged probes."""
    if n == 0:
        return 0
    if k == 0:
        return BIG
    best = BIG
    for j in range(1, n + 1):
        worst = 1 + max(minimax_trials(j - 1, k - 1), minimax_trials(n - j, k))
        if worst < best:
            best = worst
    return best


def test_frozen_plan_values():
    assert plan_worst_case(10, 1) == 10
    assert plan_worst_case(100, 2) == 14
    assert plan_worst_case(10000, 2) == 141


def test_coverage_satisfies_the_recurrence():
    # f(t, k) = f(t-1, k-1) + f(t-1, k) + 1
    for t in range(1, 25):
        for k in range(1, 6):
            assert plan_coverage(t, k) == (plan_coverage(t - 1, k - 1)
                                           + plan_coverage(t - 1, k) + 1)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_matches_brute_force_minimax(k):
    for n in range(1, 61):
        assert plan_worst_case(n, k) == minimax_trials(n, k), (n, k)


def test_schedule_is_increasing_and_capped():
    plan = egg_drop_plan(100, 2)
    sched = plan.first_probe_schedule
    assert sched[0] == 14
    assert list(sched) == sorted(set(sched))
    assert sched[-1] == 100


def test_schedule_single_stage_is_linear():
    plan = egg_drop_plan(10, 1)
    assert plan.worst_case_trials == 10
    assert plan.first_probe_schedule == tuple(range(1, 11))


@pytest.mark.parametrize("n,k", [(30, 2), (50, 2), (64, 3), (100, 2)])
def test_schedule_gaps_never_exceed_remaining_coverage(n, k):
    # After i safe probes, the next gap must be localizable by the
    # remaining trials with one fewer flagged allowance.
    plan = egg_drop_plan(n, k)
    t = plan.worst_case_trials
    prev = 0
    for i, pos in enumerate(plan.first_probe_schedule):
        gap = pos - prev - 1
        assert gap <= plan_coverage(max(t - 1 - i, 0), k - 1), (i, pos)
        prev = pos
