import itertools
import math
import random

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from treeqpnn.analytics import (
    COMPARISON_EPS0,
    EMITTERS,
    InsufficientTrials,
    RepeaterOptimizer,
    RepeaterScenario,
    candidate_shapes,
    communication_rate,
    comparison_curves,
    direct_transmission_rate,
    effective_loss,
    emitter_total_time,
    fit_beta_moments,
    fit_fidelity_stats,
    generation_rate,
    generator_metrics,
    loss_budget,
)
from treeqpnn.mesh import hardware_preset
from treeqpnn.protocol import generate_schedule, photon_count, total_time

branching = st.lists(st.integers(1, 4), min_size=1, max_size=6).map(tuple)


def symbolic_effective_loss(b):
    """Closed form for depth one or two, written out by hand from the recursion's boundary values."""
    eps = sp.Symbol("eps")
    if len(b) == 1:
        (b0,) = b
        p_ind = (1 - eps) ** b0
    elif len(b) == 2:
        b0, b1 = b
        r1 = 1 - eps ** b1
        p_ind = ((1 - eps + eps * r1) ** b0 - (eps * r1) ** b0) * (1 - eps) ** b1
    else:
        raise ValueError("closed form only for depth one or two")
    return eps, sp.expand(1 - (1 - eps) * p_ind)


@pytest.mark.parametrize("b", [(1,), (2,), (4,), (2, 2), (3, 2), (4, 4), (1, 3)])
@pytest.mark.parametrize("eps0", [0.0, 0.01, 0.1, 0.37, 0.9, 1.0])
def test_effective_loss_matches_symbolic_expansion(b, eps0):
    eps, expr = symbolic_effective_loss(b)
    expected = float(expr.subs(eps, sp.Rational(eps0)))
    assert effective_loss(b, eps0)[0] == pytest.approx(expected, abs=1e-12)


def test_effective_loss_endpoints_random_shapes():
    rng = random.Random(3)
    for _ in range(100):
        b = tuple(rng.randint(1, 4) for _ in range(rng.randint(1, 6)))
        assert effective_loss(b, 0.0) == (0.0, 1.0)
        assert effective_loss(b, 1.0)[0] == 1.0


def test_effective_loss_rejects_bad_probability():
    with pytest.raises(ValueError):
        effective_loss((2, 2), 1.5)


@settings(max_examples=60, deadline=None)
@given(branching)
def test_effective_loss_monotone_in_eps0(b):
    grid = np.linspace(0, 1, 41)
    values = [effective_loss(b, e)[0] for e in grid]
    assert all(0 <= v <= 1 for v in values)
    assert all(y >= x - 1e-12 for x, y in zip(values, values[1:]))


@settings(max_examples=60, deadline=None)
@given(branching, st.floats(0, 1))
def test_effective_loss_never_below_eps0(b, eps0):
    assert effective_loss(b, eps0)[0] >= eps0 - 1e-15


@pytest.mark.xfail(strict=True, reason="the root survival factor makes eps_eff >= eps0 for every tree")
def test_loss_tolerance_regime_for_four_four():
    assert any(effective_loss((4, 4), e)[0] < e for e in (1e-4, 1e-3, 1e-2, 0.05))


def test_lossless_budget_and_generation_rate():
    ideal = hardware_preset("ideal")
    schedule = generate_schedule((2, 2), 10e-9, hardware=ideal)
    budgets = loss_budget(schedule, ideal)
    assert all(bud.total_db == 0 for bud in budgets.values())
    assert generation_rate(schedule, budgets) == pytest.approx(12.5e6)


def test_budget_path_counts_for_two_two():
    hw = hardware_preset("single")
    schedule = generate_schedule((2, 2), 10e-9, hardware=hw)
    budgets = loss_budget(schedule, hw)
    stage = schedule.layout.output_switch_stages * hw.switch_loss_db_per_stage
    root, leaf = budgets[(0, 0)].items, budgets[(2, 0)].items
    assert root["qpnn"] == pytest.approx(6 * 2 * hw.mzi_loss_mean_db)
    assert root["output_switch"] == pytest.approx(stage)
    assert root["coupling"] == pytest.approx(hw.coupling_loss_db)
    assert root["delay_fiber"] == 0
    assert leaf["qpnn"] == pytest.approx(2 * 6 * 2 * hw.mzi_loss_mean_db)
    assert leaf["output_switch"] == pytest.approx(2 * stage)
    assert leaf["coupling"] == pytest.approx(3 * hw.coupling_loss_db)
    assert schedule.paths[(2, 0)].fiber_meters == pytest.approx(8.2, abs=0.05)


@pytest.mark.parametrize("preset", ["single", "multi", "future"])
@pytest.mark.parametrize("b", [(2,), (2, 2), (3, 2), (2, 2, 2)])
@pytest.mark.parametrize("mode", ["dynamic", "static"])
def test_budget_itemization_and_rate_bounds(preset, b, mode):
    hw = hardware_preset(preset)
    schedule = generate_schedule(b, 10e-9, delay_mode=mode, hardware=hw)
    budgets = loss_budget(schedule, hw, channel_km=5)
    for bud in budgets.values():
        assert math.fsum(bud.items.values()) == pytest.approx(bud.total_db, abs=1e-12)
        assert bud.survival == pytest.approx(10 ** (-bud.total_db / 10))
        assert bud.items["channel"] == pytest.approx(0.85)
    rate = generation_rate(schedule, budgets)
    assert 0 < rate < 1 / schedule.total_time


def test_static_mode_charges_input_switch():
    hw = hardware_preset("single")
    schedule = generate_schedule((2, 2), 10e-9, delay_mode="static", hardware=hw)
    budgets = loss_budget(schedule, hw)
    assert any(bud.items["input_switch"] > 0 for bud in budgets.values())
    assert budgets[(0, 0)].items["input_switch"] == 0


def test_generation_rate_requires_every_photon():
    hw = hardware_preset("single")
    schedule = generate_schedule((2,), 10e-9, hardware=hw)
    budgets = loss_budget(schedule, hw)
    budgets.pop((1, 0))
    with pytest.raises(ValueError):
        generation_rate(schedule, budgets)


def test_generation_rate_preset_estimates():
    single = generator_metrics((2, 2), hardware_preset("single"))
    multi = generator_metrics((2, 2, 2), hardware_preset("multi"))
    assert 1e3 / 3 <= single.generation_rate <= 3e3
    assert 73e3 / 3 <= multi.generation_rate <= 3 * 73e3
    assert single.repetition_rate == pytest.approx(1 / 80e-9)


def test_communication_rate_examples():
    assert communication_rate(0.3, 0, 80e-9) == pytest.approx(12.5e6)
    assert communication_rate(0.5, 2, 80e-9) == pytest.approx(3.125e6)
    assert communication_rate(1.0, 3, 80e-9) == 0.0
    assert direct_transmission_rate(2) == pytest.approx(10 ** (-0.17) / 10e-9)


def test_scenario_node_count():
    assert RepeaterScenario(1000).nodes == 200
    with pytest.raises(ValueError):
        RepeaterScenario(12).nodes


def test_candidate_shapes():
    assert candidate_shapes("b2", max_depth=3) == [(2,), (2, 2), (2, 2, 2)]
    assert len(candidate_shapes("free", max_depth=3)) == 3 + 9 + 27
    with pytest.raises(ValueError):
        candidate_shapes("other")


def test_single_preset_prefers_smallest_tree():
    opt = RepeaterOptimizer(hardware_preset("single"))
    shapes = candidate_shapes("free", max_depth=3)
    for km in (10, 500, 3000):
        assert opt.best(km, candidates=shapes).metrics.n == 3


def test_optimizer_ignores_candidate_order():
    opt = RepeaterOptimizer(hardware_preset("future"))
    shapes = candidate_shapes("free", max_depth=3)
    reference = opt.best(500, candidates=shapes).metrics.b
    rng = random.Random(0)
    for _ in range(5):
        rng.shuffle(shapes)
        assert opt.best(500, candidates=shapes).metrics.b == reference


def test_optimizer_picks_fastest_tree_when_lossless():
    opt = RepeaterOptimizer(hardware_preset("ideal"))
    choice = opt.best(0, candidates=[(2, 2), (3,), (2,)])
    assert choice.metrics.b == (2,)


def test_doubling_losses_never_helps():
    shapes = candidate_shapes("free", max_depth=2)
    for preset in ("multi", "future"):
        hw = hardware_preset(preset)
        base = RepeaterOptimizer(hw).best(200, candidates=shapes)
        worse = RepeaterOptimizer(hw.scaled(2.0)).best(200, candidates=shapes)
        assert worse.metrics.log10_communication_rate <= base.metrics.log10_communication_rate


def test_emitter_total_time():
    assert emitter_total_time((2, 2), dt_s=1) == 17
    assert emitter_total_time((3,), dt_s=1) == (3 + 1 - 1) + (3 + 1)
    assert EMITTERS["qd"].dt_s == pytest.approx(11.94e-9, abs=0.01e-9)
    assert EMITTERS["SiV"].gamma_l == pytest.approx(0.001 * 2 * math.pi * 0.1e9)
    with pytest.raises(ValueError):
        emitter_total_time((2,))


@settings(max_examples=50, deadline=None)
@given(branching, st.integers(0, 5))
def test_emitter_time_increases_with_branching(b, k):
    k = k % len(b)
    bigger = b[:k] + (b[k] + 1,) + b[k + 1:]
    assert emitter_total_time(bigger, dt_s=1) > emitter_total_time(b, dt_s=1)


def test_comparison_eps0_matches_fiber_arithmetic():
    assert 1 - 10 ** (-0.085) == pytest.approx(0.178, abs=1e-3)
    assert COMPARISON_EPS0 == pytest.approx(1 - 0.9 * 10 ** (-0.085))


@pytest.mark.parametrize("protocol", ["qpnn", "emitter-qd", "emitter-SiV", "emitter-atom"])
def test_comparison_curve_markers(protocol):
    rows = comparison_curves(protocol, max_depth=5)
    assert [r["depth"] for r in rows] == [1, 2, 3, 4, 5]
    marked = [r["eps_eff"] for r in rows if r["marker"]]
    assert rows[0]["marker"] == 1
    assert all(y < x for x, y in zip(marked, marked[1:]))
    for r in rows:
        b = tuple(int(x) for x in r["b"].split("-"))
        assert r["n"] == photon_count(b)
        best = min(effective_loss(c, r["eps0"])[0] for c in itertools.product((2, 3, 4), repeat=r["depth"]))
        assert r["eps_eff"] == pytest.approx(best)
        if protocol == "qpnn":
            assert r["total_time_s"] == pytest.approx(total_time(b, 10e-9))


def test_comparison_rejects_unknown_protocol():
    with pytest.raises(ValueError):
        comparison_curves("linear")


def test_beta_moments_recover_parameters():
    samples = np.random.default_rng(11).beta(200, 2, size=1000)
    alpha, beta = fit_beta_moments(samples)
    assert alpha == pytest.approx(200, rel=0.2)
    assert beta == pytest.approx(2, rel=0.2)


def test_fidelity_stats_degenerate_and_power():
    stats = fit_fidelity_stats([0.99] * 6, [0.1] * 6, 0.1, "multi", n_photons=7)
    assert stats.mean == pytest.approx(0.99) and stats.ci == (stats.mean, stats.mean)
    assert stats.tree_mean == pytest.approx(0.99 ** 7)
    assert stats.tree_ci == (stats.mean ** 7, stats.mean ** 7)


def test_fidelity_stats_threshold_and_interval():
    rng = np.random.default_rng(2)
    fid = rng.beta(300, 3, size=40)
    costs = np.full(40, 0.2)
    costs[:10] = 0.9
    stats = fit_fidelity_stats(fid, costs, 0.2, "future", n_photons=15)
    assert stats.survivors == 30
    assert stats.threshold == pytest.approx(1 - 0.98 * 0.8)
    assert stats.ci[0] <= stats.mean <= stats.ci[1]
    assert stats.tree_ci == (stats.ci[0] ** 15, stats.ci[1] ** 15)
    single = fit_fidelity_stats(fid, costs, 0.2, "single", n_photons=1)
    assert single.threshold == pytest.approx(1 - 0.9 * 0.8)
    assert single.tree_mean == single.mean and single.tree_ci == single.ci


def test_fidelity_stats_needs_survivors():
    with pytest.raises(InsufficientTrials) as info:
        fit_fidelity_stats([0.99] * 6, [0.1, 0.1, 0.1, 0.9, 0.9, 0.9], 0.1, "multi")
    assert info.value.survivors == 3
