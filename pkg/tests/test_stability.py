import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ddtree.criteria import SplitCriterion
from ddtree.domain import Categorical, Continuous, Covariate, CovariateSchema, Region
from ddtree.errors import ConfigError, UninformativeSplit
from ddtree.simulation import coverage_rate, load_sim2d, step_split_errors
from ddtree.stability import (
    FINITE_POINTS,
    INTERVAL,
    NONE,
    Draw,
    OscillationConfig,
    StabilityReport,
    auto_sample_size,
    bandwidth_nrd0,
    default_workers,
    detect_oscillation,
    kde_mode,
    measure_split_stability,
    required_sample_size,
    select_best_split,
    split_confidence_interval,
)
from ddtree.teacher import (
    FunctionTeacher,
    make_grid_teacher,
    make_plateau_teacher,
    make_step_teacher,
    make_two_cut_teacher,
)

SSE = SplitCriterion("sse")
PAIR = CovariateSchema((Covariate("x1", Continuous(0.0, 1.0)), Covariate("x2", Continuous(0.0, 1.0))))


def test_confidence_interval_examples():
    lo, hi = split_confidence_interval(1.0, 2.0, 1000)
    assert (lo, hi) == pytest.approx(oracles.confidence_interval(1.0, 2.0, 1000), abs=1e-15)
    assert (lo, hi) == pytest.approx((0.997, 1.003), abs=1e-12)
    assert split_confidence_interval(1.0, 2.0, 3, (0.0, 2.0)) == (0.0, 2.0)
    assert split_confidence_interval(0.1, 2.0, 10, (0.0, 2.0)) == pytest.approx((0.0, 0.4))
    with pytest.raises(ValueError):
        split_confidence_interval(1.0, 0.0, 10)


def test_required_sample_size_examples():
    assert required_sample_size(2.0, 0.001) == 3000
    assert required_sample_size(1.0, 0.5) == 3
    with pytest.raises(ValueError):
        required_sample_size(1.0, 0.6)
    with pytest.raises(ValueError):
        required_sample_size(1.0, 0.0)
    assert auto_sample_size(PAIR.full_region()) == 300


@given(st.floats(0.01, 100), st.floats(0.001, 0.5))
def test_required_sample_size_is_minimal(w, frac):
    d = frac * w
    n = required_sample_size(w, d)
    h = 3 * w / (2 * n)
    assert h <= d * (1 + 1e-9)
    if n > 1:
        assert 3 * w / (2 * (n - 1)) > d * (1 - 1e-9)


def test_bandwidth_matches_silverman():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    sd = math.sqrt(2.5)
    assert bandwidth_nrd0(x) == pytest.approx(0.9 * min(sd, 2.0 / 1.34) * 5**-0.2, rel=1e-12)


def test_kde_mode_matches_term_by_term_density():
    rng = np.random.default_rng(0)
    vals = np.r_[rng.normal(1.0, 0.002, 80), rng.normal(1.01, 0.002, 20)]
    mode, bw = kde_mode(vals, (0.0, 2.0))
    assert mode == pytest.approx(1.0, abs=0.001)
    grid = np.linspace(vals.min() - 3 * bw, vals.max() + 3 * bw, 512)
    dens = [oracles.kde_density(vals.tolist(), bw, g) for g in grid]
    assert mode == pytest.approx(grid[int(np.argmax(dens))], abs=1e-12)
    assert kde_mode([0.7]) == (0.7, 0.0)


def test_step_teacher_two_level_stability():
    t = make_step_teacher(0, 2, 1, 0, 10)
    rep = measure_split_stability(t, t.schema.full_region(), SSE, 100, 1000, seed=0, workers=1)
    assert rep.first_level == [1.0]
    assert abs(rep.chosen.cut - 1.0) <= 0.003
    lo, hi = rep.ci
    assert hi - lo == pytest.approx(2 * 3 * 2.0 / (2 * 1000), abs=1e-12)
    assert rep.oscillation.kind == NONE
    assert sum(rep.second_level[0]["mass"]) == pytest.approx(1.0, abs=1e-12)
    assert rep.chosen.left_stat == 0.0 and rep.chosen.right_stat == 10.0


def test_grid_teacher_root_has_dominant_covariate():
    g = make_grid_teacher(load_sim2d())
    rep = measure_split_stability(g, g.schema.full_region(), SSE, 100, 2000, seed=0, workers=1)
    assert max(rep.first_level) >= 0.97
    assert sum(rep.first_level) == pytest.approx(1.0, abs=1e-12)


def test_single_repeat_report():
    t = make_step_teacher(0, 2, 1, 0, 10)
    rep = measure_split_stability(t, t.schema.full_region(), SSE, 1, 500, seed=3, escalate=False)
    assert rep.second_level[0]["n"] == 1
    assert rep.oscillation is None
    assert rep.chosen.cut == rep.draws[0].value


def _report(region, draws, n=1000):
    from ddtree.stability import _summarise

    first, second = _summarise(region, draws)
    return StabilityReport(region, SSE, len(draws), n, draws, first, second)


def test_select_picks_modal_covariate():
    region = PAIR.full_region()
    draws = [Draw(0, 0.3 + 0.001 * (k % 3), 1.0) for k in range(97)] + [Draw(1, 0.6, 1.0)] * 3
    rep = _report(region, draws)
    assert rep.first_level == [0.97, 0.03]
    cand = select_best_split(rep)
    assert cand.covariate_index == 0 and not rep.first_level_tie
    assert cand.cut == pytest.approx(0.301, abs=0.002)


def test_first_level_tie_is_seeded_and_flagged():
    region = PAIR.full_region()
    draws = [Draw(0, 0.3, 1.0)] * 50 + [Draw(1, 0.6, 1.0)] * 50
    picks = set()
    for seed in range(20):
        rep = _report(region, draws)
        a = select_best_split(rep, seed=seed).covariate_index
        assert rep.first_level_tie
        assert select_best_split(_report(region, draws), seed=seed).covariate_index == a
        picks.add(a)
    assert picks == {0, 1}


def test_select_refits_on_fresh_sample():
    t = make_step_teacher(0, 2, 1, 0, 10)
    draws = [Draw(0, 1.0, 0.0)] * 40
    cand = select_best_split(_report(t.schema.full_region(), draws, 2000), t, seed=1)
    assert cand.n_left + cand.n_right == 2000
    assert cand.criterion_value == 0.0
    with pytest.raises(UninformativeSplit):
        empty = StabilityReport(t.schema.full_region(), SSE, 2, 100, [Draw(None, None, None)] * 2, [0.0], [None])
        select_best_split(empty)


def test_two_cut_teacher_oscillates_between_points():
    t = make_two_cut_teacher()
    rep = measure_split_stability(t, t.schema.full_region(), SSE, 1000, 1000, seed=0, escalate=False)
    osc = rep.oscillation
    assert osc.kind == FINITE_POINTS
    values = sorted(v for v, _ in osc.atoms)
    assert values == pytest.approx([0.5, 1.5], abs=0.01)
    for _, mass in osc.atoms:
        assert abs(mass - 0.5) <= 0.05


def test_plateau_teacher_oscillates_over_interval():
    t = make_plateau_teacher(texture=10.0)
    rep = measure_split_stability(t, t.schema.full_region(), SSE, 1000, 1000, seed=0, escalate=False)
    assert rep.first_level[0] == 1.0
    osc = rep.oscillation
    assert osc.kind == INTERVAL
    assert abs(osc.lo - 0.8) <= 0.05 * 2 and abs(osc.hi - 1.2) <= 0.05 * 2


def test_detect_oscillation_edge_cases():
    out = detect_oscillation(np.ones(10), np.ones(10))
    assert out.kind == NONE and "insufficient" in out.note
    rng = np.random.default_rng(0)
    tight = 1.0 + rng.normal(0, 1e-4, 200)
    assert detect_oscillation(tight, rng.normal(1, 0.01, 200), region_width=2.0).kind == NONE
    # two clusters, one clearly worse
    v = np.r_[np.full(100, 0.5), np.full(100, 1.5)] + rng.normal(0, 1e-4, 200)
    c = np.r_[np.full(100, 1.0), np.full(100, 2.0)] + rng.normal(0, 1e-3, 200)
    assert detect_oscillation(v, c, region_width=2.0).kind == NONE
    c2 = np.r_[np.full(100, 1.0), np.full(100, 1.0)] + rng.normal(0, 1e-3, 200)
    out = detect_oscillation(v, c2, region_width=2.0)
    assert out.kind == FINITE_POINTS and [m for _, m in out.atoms] == [0.5, 0.5]
    # uniform spread over [0.2, 0.8]
    u = rng.uniform(0.2, 0.8, 400)
    out = detect_oscillation(u, np.ones(400), OscillationConfig(cluster_gap=0.05), region_width=1.0)
    assert out.kind == INTERVAL and out.lo == pytest.approx(0.2, abs=0.01) and out.hi == pytest.approx(0.8, abs=0.01)
    with pytest.raises(ValueError):
        detect_oscillation([1.0], [1.0, 2.0])


def test_escalation_doubles_sample_size_once():
    t = make_plateau_teacher()
    rep = measure_split_stability(t, t.schema.full_region(), SSE, 40, 500, seed=0)
    assert rep.escalated and rep.sample_size == 1000
    assert any("escalated" in n for n in rep.notes)
    step = make_step_teacher(0, 2, 1, 0, 10)
    assert not measure_split_stability(step, step.schema.full_region(), SSE, 40, 1000, seed=0).escalated


def test_result_independent_of_workers():
    t = make_two_cut_teacher()
    region = t.schema.full_region()
    a = measure_split_stability(t, region, SSE, 60, 400, seed=5, node_id=3, workers=1, chunk_rows=1200)
    b = measure_split_stability(t, region, SSE, 60, 400, seed=5, node_id=3, workers=4, chunk_rows=1200)
    assert a.to_dict(include_draws=True) == b.to_dict(include_draws=True)
    c = measure_split_stability(t, region, SSE, 60, 400, seed=5, node_id=2, workers=1)
    assert c.to_dict(include_draws=True) != a.to_dict(include_draws=True)


def test_report_roundtrip():
    t = make_two_cut_teacher()
    region = t.schema.full_region()
    rep = measure_split_stability(t, region, SSE, 50, 400, seed=1)
    back = StabilityReport.from_dict(rep.to_dict(include_draws=True), region)
    assert back.to_dict(include_draws=True) == rep.to_dict(include_draws=True)


def test_measure_errors(monkeypatch):
    t = make_step_teacher(0, 2, 1, 0, 10)
    region = t.schema.full_region()
    with pytest.raises(ConfigError):
        measure_split_stability(t, region, SSE, 0, 100)
    with pytest.raises(ConfigError):
        measure_split_stability(t, region, SplitCriterion("gini"), 10, 100)
    with pytest.raises(ConfigError):
        measure_split_stability(t, region, SSE, 10, 1)
    flat = make_step_teacher(0, 2, 1, 3, 3)
    with pytest.raises(UninformativeSplit):
        measure_split_stability(flat, region, SSE, 10, 100)
    monkeypatch.setenv("DDT_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("DDT_WORKERS", "zero")
    with pytest.raises(ConfigError):
        default_workers()


MIXED = CovariateSchema((Covariate("x", Continuous(0.0, 1.0)), Covariate("g", Categorical(("A", "B", "C", "D")))))


def _mixed_teacher(shift):
    def f(X):
        return np.where(X[:, 1] == 2, 3.0 + shift, 0.0) + np.where(X[:, 0] > 0.5, 3.0, 0.0)

    return FunctionTeacher(f, MIXED)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.floats(-0.5, 0.5))
def test_pmf_masses_are_exact_counts(seed, shift):
    rep = measure_split_stability(_mixed_teacher(shift), MIXED.full_region(), SSE, 40, 60, seed=seed, escalate=False)
    covs = [d.covariate for d in rep.draws if d.covariate is not None]
    n = len(covs)
    assert rep.first_level == [covs.count(j) / n for j in range(2)]
    assert sum(rep.first_level) == pytest.approx(1.0, abs=1e-12)
    s = rep.second_level[1]
    if s is not None:
        levels = [int(d.value) for d in rep.draws if d.covariate == 1]
        assert s["pmf"] == [[lv, levels.count(lv) / len(levels)] for lv in sorted(set(levels))]
    s = rep.second_level[0]
    if s is not None:
        assert sum(s["mass"]) == pytest.approx(1.0, abs=1e-12)


def test_convergence_rate_is_inverse_n():
    med = [np.median(step_split_errors(n, 200, seed=0)) for n in (250, 500, 1000, 2000, 4000)]
    for a, b in zip(med, med[1:]):
        assert 2 / 1.5 <= a / b <= 2 * 1.5


def test_interval_coverage_near_95_percent():
    for n in (500, 1000):
        assert 0.93 <= coverage_rate(n, 1000, seed=0) <= 0.97
