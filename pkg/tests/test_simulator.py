import math

import pytest
from conftest import BASE, GRID, det, gt, make_frame, make_trace, safe_only

from dsa_sim.config_lattice import ApproxConfig, lattice_leq
from dsa_sim.policy import (
    ANY,
    AutoFocusModel,
    AutoFocusPolicy,
    StaticPolicy,
    baseline_policy,
    fit_static,
    fit_static_all,
    oracle_policies,
    train_autofocus,
)
from dsa_sim.simulator import (
    SimulationError,
    compare_report,
    dump_results,
    load_results,
    simulate_categories,
    simulate_stream,
)


def test_baseline_is_exactly_one(drift_pair, frcnn):
    _, test = drift_pair
    for r in simulate_categories(test, baseline_policy(GRID), frcnn):
        assert r.speedup == 1.0
        assert r.degradation == 0.0
        assert r.category_map == r.baseline_map
        assert r.decisions == 0 and r.overhead_seconds == 0.0


def test_constant_policy_speedup(drift_pair, frcnn):
    _, test = drift_pair
    cost = frcnn.with_overhead(0.0)
    r = simulate_stream(test, StaticPolicy({ANY: ApproxConfig(160, 50)}), cost)
    assert math.isclose(r.speedup, 8.28 / 2.08, rel_tol=1e-9)
    n = len(test)
    assert math.isclose(r.frame_seconds, n / 8.28, rel_tol=1e-12)
    assert math.isclose(r.baseline_seconds, n / 2.08, rel_tol=1e-12)


def test_time_accounting_with_overhead(drift_pair, frcnn):
    train, test = drift_pair
    model = train_autofocus(train, frcnn, "airplane")
    r = simulate_stream(test, AutoFocusPolicy({"airplane": model}), frcnn, "airplane")
    expected = math.fsum(1.0 / frcnn.fps[c] for _, _, c in r.chosen)
    assert math.isclose(r.frame_seconds, expected, rel_tol=1e-12)
    assert r.overhead_seconds == pytest.approx(r.decisions * 0.0032, rel=1e-12)
    assert r.speedup == pytest.approx(r.baseline_seconds / r.total_seconds, rel=1e-12)
    # one regressor call per window: at most ceil(frames / 3) per video
    videos = test.videos_with_category("airplane")
    bound = sum(math.ceil((len(test.videos[v]) - 1) / 3) for v in videos)
    assert 0 < r.decisions <= bound
    assert all(c in GRID for _, _, c in r.chosen)


def test_overhead_ratio_of_one_decision(frcnn):
    # one prediction per baseline frame: overhead share of the frame time
    ratio = frcnn.overhead_seconds / frcnn.frame_seconds(BASE)
    assert abs(100 * ratio - 0.6) <= 0.2


def test_oracles_on_monotone_trace(monotone_trace, frcnn):
    static, dynamic, _ = oracle_policies(monotone_trace, frcnn)
    for cat in monotone_trace.categories():
        s = simulate_stream(monotone_trace, static, frcnn, cat)
        d = simulate_stream(monotone_trace, dynamic, frcnn, cat)
        assert d.speedup >= s.speedup >= 1.0
        assert d.degradation <= 0.0
        assert s.degradation <= 0.0
        assert d.decisions == 0


def test_determinism(drift_pair, frcnn):
    train, test = drift_pair
    policy = AutoFocusPolicy({c: train_autofocus(train, frcnn, c) for c in train.categories()})
    a = dump_results(simulate_categories(test, policy, frcnn))
    b = dump_results(simulate_categories(test, policy, frcnn))
    assert a == b
    again = load_results(a)
    assert dump_results(again) == a


class _Rogue:
    name = "rogue"
    dynamic = False

    def start(self, video, category, grid):
        return self

    def decide(self):
        return ApproxConfig(81, 300)

    def observe(self, *a):
        pass

    decisions = 0


def test_off_grid_policy_is_a_hard_failure(drift_pair, frcnn):
    with pytest.raises(SimulationError, match="off-grid"):
        simulate_stream(drift_pair[1], _Rogue(), frcnn)


def test_unknown_category(drift_pair, frcnn):
    with pytest.raises(ValueError):
        simulate_stream(drift_pair[1], baseline_policy(GRID), frcnn, "zebra")


def _two_category():
    bus = gt(0, 0, 50, 50, "bus")
    dog = gt(0, 0, 50, 50, "dog")
    up = {c for c in GRID if lattice_leq(ApproxConfig(320, 10), c)}
    return make_trace({"va": [safe_only([bus], set(GRID))] * 3,
                       "vb": [safe_only([dog], up)] * 3})


def test_report_static_beats_oblivious(frcnn):
    t = _two_category()
    results = []
    for policy in (fit_static_all(t, frcnn), fit_static(t, frcnn, ANY), baseline_policy(GRID)):
        results += simulate_categories(t, policy, frcnn)
    report = compare_report(results)
    assert [(r.category, r.policy) for r in report.rows] == [
        ("bus", "baseline"), ("bus", "category-oblivious"), ("bus", "static"),
        ("dog", "baseline"), ("dog", "category-oblivious"), ("dog", "static"),
    ]
    for cat in ("bus", "dog"):
        assert report.get(cat, "static").speedup >= report.get(cat, "category-oblivious").speedup
        assert report.get(cat, "baseline").speedup == 1.0
        assert report.get(cat, "baseline").degradation == 0.0
    assert report.get("bus", "static").speedup > report.get("bus", "category-oblivious").speedup
    assert report.to_csv() == compare_report(list(reversed(results))).to_csv()
    assert report.to_csv().splitlines()[1] == "bus,baseline,1.000000,1.000000,1.000000,0.000000,0"


def test_report_rejects_mixed_traces(drift_pair, frcnn, rfcn):
    a = simulate_stream(drift_pair[0], baseline_policy(GRID), frcnn)
    b = simulate_stream(drift_pair[1], baseline_policy(GRID), frcnn)
    with pytest.raises(ValueError, match="different trace"):
        compare_report([a, b])
    c = simulate_stream(drift_pair[0], baseline_policy(GRID), rfcn)
    with pytest.raises(ValueError, match="cost model"):
        compare_report([a, c])
    with pytest.raises(ValueError):
        compare_report([])


def test_degradation_formula(frcnn):
    g = gt(0, 0, 100, 100)
    frames = [make_frame([g], lambda c: [det(0, 0, 100, 100, 1.0)] if c == BASE else []),
              make_frame([g], lambda c: [det(0, 0, 100, 100, 1.0)])]
    t = make_trace({"a": frames})
    r = simulate_stream(t, StaticPolicy({ANY: ApproxConfig(80, 10)}), frcnn, "car")
    assert r.category_map["car"] == 0.5 and r.baseline_map["car"] == 1.0
    assert r.degradation == 0.5


def test_autofocus_cold_start_runs_baseline(frcnn):
    model = AutoFocusModel((160.0,) + (0.0,) * 20, (50.0,) + (0.0,) * 20)
    g = gt(0, 0, 100, 100)
    t = make_trace({"a": [make_frame([g], lambda c: [det(0, 0, 100, 100, 1.0)])] * 5})
    r = simulate_stream(t, AutoFocusPolicy({ANY: model}), frcnn, "car")
    assert [c for _, _, c in r.chosen] == [BASE] + [ApproxConfig(160, 50)] * 4
    assert r.decisions == 2
