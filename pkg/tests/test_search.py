import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stealtheval.oracles import InstrumentedOracle, LinearOracle, Phase
from stealtheval.search import (Binary, DegenerateDirectionError, KStage,
                                Line, SearchOutcome, SearchStrategy,
                                check_adv, clamp_path, segment_path,
                                geometric_backtrack_search,
                                geometric_expand_search, get_dist_binary,
                                get_dist_line, path_march_search,
                                plan_worst_case, ray_path)

GRID = 1.0 / 255.0


def axis_session(t_b: float, grid: float | None = None) -> InstrumentedOracle:
    """1-d oracle flagged iff x <= t_b, so a ray from 0 crosses at t_b."""
    return InstrumentedOracle(LinearOracle([-1.0], t_b, grid=grid))


def run_segment(session, t_b, strategy=None, eta=None, reference=None):
    x = np.array([0.0])
    x_safe = np.array([1.0])
    if strategy is not None:
        return get_dist_line(session, x, x_safe, strategy,
                             reference=reference, phase=Phase.PROJ_BOUNDARY)
    return get_dist_binary(session, x, x_safe, eta, phase=Phase.PROJ_BOUNDARY)


def test_binary_probe_count_is_exact():
    for eta, expected in [(1e-3, 10), (2e-5, 16), (0.25, 2)]:
        s = axis_session(0.377)
        out = run_segment(s, 0.377, eta=eta)
        assert out.total_spent == expected == s.total
        assert out.exact


def test_binary_brackets_the_crossing():
    t_b = 0.377
    s = axis_session(t_b)
    out = run_segment(s, t_b, eta=1e-3)
    assert t_b <= out.distance <= t_b + 1e-3
    assert out.point is not None and not s._oracle.decide(out.point)


def test_line_spends_at_most_one_flagged():
    t_b = 0.377
    s = axis_session(t_b)
    out = run_segment(s, t_b, strategy=SearchStrategy(Line(step=0.01)))
    assert out.flagged_spent == 1
    assert t_b <= out.distance <= t_b + 0.01 + 1e-12
    assert out.exact


def test_kstage_two_spends_at_most_two_flagged():
    t_b = 0.377
    s = axis_session(t_b)
    out = run_segment(s, t_b,
                      strategy=SearchStrategy(KStage(2, 10000)))
    assert out.flagged_spent <= 2
    assert t_b <= out.distance <= t_b + 1e-4 + 1e-12
    assert out.total_spent <= 2 * math.ceil(10000 ** 0.5) + 2


def test_kstage_one_equals_line_query_for_query():
    t_b = 0.614
    s1 = axis_session(t_b)
    s2 = axis_session(t_b)
    out_line = run_segment(s1, t_b, strategy=SearchStrategy(Line(step=0.001)))
    out_k1 = run_segment(s2, t_b,
                         strategy=SearchStrategy(KStage(1, 1000)))
    assert out_line.total_spent == out_k1.total_spent
    assert out_line.flagged_spent == out_k1.flagged_spent
    assert out_line.distance == out_k1.distance
    assert s1.snapshot() == s2.snapshot() or (
        s1.snapshot().total == s2.snapshot().total
        and s1.snapshot().flagged == s2.snapshot().flagged)


@pytest.mark.parametrize("n,k", [(30, 2), (64, 3), (100, 2)])
def test_dp_schedule_meets_its_bounds_everywhere(n, k):
    worst = plan_worst_case(n, k)
    strategy = SearchStrategy(KStage(k, n, schedule="dp"))
    for m in range(n):
        t_b = (m + 0.5) / n
        s = axis_session(t_b)
        out = run_segment(s, t_b, strategy=strategy)
        assert out.flagged_spent <= k, (m, out)
        assert out.total_spent <= worst, (m, out)
        assert t_b <= out.distance <= t_b + 1.0 / n + 1e-12, (m, out)


def test_early_stop_spends_zero_flagged():
    # Crossing far below the reference: marching hits the cut before any
    # flagged probe.
    t_b = 0.05
    s = axis_session(t_b)
    strat = SearchStrategy(Line(step=0.01), early_stop=0.9)
    out = run_segment(s, t_b, strategy=strat, reference=1.0)
    assert out.flagged_spent == 0
    assert not out.exact
    assert out.distance <= 0.9 + 1e-12
    # Without the reference the same search pays its one flagged probe.
    s2 = axis_session(t_b)
    out2 = run_segment(s2, t_b, strategy=strat)
    assert out2.flagged_spent == 1


def test_early_stop_never_fires_after_a_flagged_probe():
    # Crossing above the cut: the flagged probe lands first and the search
    # must then run to completion, not stop early.
    t_b = 0.95
    s = axis_session(t_b)
    strat = SearchStrategy(Line(step=0.01), early_stop=0.9)
    out = run_segment(s, t_b, strategy=strat, reference=1.0)
    assert out.flagged_spent == 1
    assert out.exact


def test_windowed_search_rejects_flagged_top():
    t_b = 0.7
    s = axis_session(t_b)
    path = ray_path(np.array([0.0]), np.array([1.0]))
    out = path_march_search(s, path, 0.5, 0.65,
                            SearchStrategy(Line(step=0.01)),
                            Phase.STEP_SIZE, top_known_safe=False)
    assert out.distance == math.inf
    assert out.flagged_spent == 1 and out.total_spent == 1
    assert not out.exact


def test_windowed_search_reports_floor_when_all_safe():
    t_b = 0.2
    s = axis_session(t_b)
    path = ray_path(np.array([0.0]), np.array([1.0]))
    out = path_march_search(s, path, 0.5, 0.65,
                            SearchStrategy(Line(step=0.1)),
                            Phase.STEP_SIZE, top_known_safe=False,
                            bottom_known_flagged=False)
    assert out.distance == pytest.approx(0.5)
    assert out.flagged_spent == 0
    assert not out.exact


def test_windowed_search_localizes_interior_crossing():
    t_b = 0.57
    s = axis_session(t_b)
    path = ray_path(np.array([0.0]), np.array([1.0]))
    out = path_march_search(s, path, 0.5, 0.65,
                            SearchStrategy(Line(step=0.01)),
                            Phase.STEP_SIZE, top_known_safe=False,
                            bottom_known_flagged=False)
    assert out.exact
    assert out.flagged_spent == 1
    assert t_b <= out.distance <= t_b + 0.01 * 0.15 + 1e-12


def test_check_adv_is_one_query():
    s = axis_session(0.5)
    assert check_adv(s, np.array([0.0]), np.array([2.0]), 0.9,
                     Phase.STEP_SIZE) is True
    assert check_adv(s, np.array([0.0]), np.array([2.0]), 0.1,
                     Phase.STEP_SIZE) is False
    assert s.total == 2 and s.flagged == 1


def test_quantized_probes_are_on_grid_and_deduplicated():
    t_b = 0.4
    s = axis_session(t_b, grid=GRID)
    seen = []
    orig = s.query_is_flagged

    def spy(x, phase):
        seen.append(x.copy())
        return orig(x, phase)

    s.query_is_flagged = spy
    out = run_segment(s, t_b, eta=1e-9)  # far below grid resolution
    assert out.total_spent == s.total <= 9  # eta floored at the grid
    for a, b in zip(seen, seen[1:]):
        assert not np.array_equal(a, b)
    for x in seen:
        assert float(x[0] * 255) == pytest.approx(round(float(x[0] * 255)))
    assert t_b <= out.distance <= t_b + GRID + 1e-12


def test_clamp_path_monotone_and_bounded():
    x = np.array([0.2, 0.8, 0.5])
    x_safe = np.array([0.9, 0.1, 0.5])
    path = clamp_path(x, x_safe)
    assert np.allclose(path(0.0), x)
    assert np.allclose(path(1.0), x_safe)
    prev = x
    for t in np.linspace(0, 0.7, 8):
        pt = path(float(t))
        assert np.max(np.abs(pt - x)) <= t + 1e-12
        prev = pt


def test_ray_path_clips_to_cube():
    path = ray_path(np.array([0.9, 0.5]), np.array([1.0, 0.0]))
    pt = path(5.0)
    assert pt[0] == 1.0 and pt[1] == 0.5


def test_geometric_expand_accepts_largest_improving_step():
    script = iter([0.9, 0.8, 0.85])

    def measure(direction, best):
        d = next(script)
        return SearchOutcome(d, d, None, True, 1, 3)

    out = geometric_expand_search(np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                                  alpha0=0.1, reference=1.0, measure=measure)
    assert out.alpha == pytest.approx(0.2)  # two improvements: 0.1 then 0.2
    assert out.distance == pytest.approx(0.8)
    assert out.trials == 3
    assert out.flagged_spent == 3 and out.total_spent == 9


def test_geometric_expand_stops_on_first_failure():
    def measure(direction, best):
        return SearchOutcome(best + 1.0, 0.0, None, True, 1, 1)

    out = geometric_expand_search(np.array([1.0]), np.array([1.0]),
                                  alpha0=0.5, reference=1.0, measure=measure)
    assert out.alpha == 0.0 and out.direction is None
    assert out.trials == 1


def test_geometric_backtrack_counts_flagged_halvings():
    # Safe iff step <= alpha0 / 8: exactly three flagged halvings.
    session = axis_session(0.2)  # flagged iff x <= 0.2
    x_b = np.array([0.3])
    update = np.array([-1.0])  # walking down into the flagged zone
    # probe at 0.3 - alpha: flagged iff 0.3 - alpha <= 0.2, i.e. alpha >= 0.1
    out = geometric_backtrack_search(session, x_b, update, alpha0=0.64,
                                     phase=Phase.STEP_SIZE)
    # alphas tried: .64 .32 .16 .08 -> first safe at .08 after 3 flagged
    assert out.alpha == pytest.approx(0.08)
    assert out.flagged_spent == 3
    assert out.total_spent == 4


def test_geometric_backtrack_degenerate_direction_errors():
    session = InstrumentedOracle(LinearOracle([0.0], 1.0))  # always flagged
    with pytest.raises(DegenerateDirectionError):
        geometric_backtrack_search(session, np.array([0.5]), np.array([1.0]),
                                   alpha0=1.0, phase=Phase.STEP_SIZE)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.98),
       st.sampled_from(["binary", "line", "k2", "k3dp"]))
def test_strategies_agree_on_single_crossing_segments(t_b, kind):
    s = axis_session(t_b)
    if kind == "binary":
        out = run_segment(s, t_b, eta=1e-3)
        res = 1e-3
    elif kind == "line":
        out = run_segment(s, t_b, strategy=SearchStrategy(Line(step=1e-3)))
        res = 1e-3
    elif kind == "k2":
        out = run_segment(s, t_b, strategy=SearchStrategy(KStage(2, 1000)))
        res = 1e-3
    else:
        out = run_segment(s, t_b,
                          strategy=SearchStrategy(KStage(3, 1000, "dp")))
        res = 1e-3
    assert out.flagged_spent <= out.total_spent
    assert t_b <= out.distance <= t_b + res + 1e-9
    if kind == "line":
        assert out.flagged_spent <= 1
    elif kind == "k2":
        assert out.flagged_spent <= 2
    elif kind == "k3dp":
        assert out.flagged_spent <= 3


def test_strategy_dict_roundtrip():
    for s in [SearchStrategy(Binary(1e-4)),
              SearchStrategy(Line(1e-3), early_stop=0.9),
              SearchStrategy(KStage(3, 500, "dp"))]:
        assert SearchStrategy.from_dict(s.to_dict()) == s
