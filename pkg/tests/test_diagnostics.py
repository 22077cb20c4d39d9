import json

import mpmath
import numpy as np
import pytest

from outersync.analysis import global_bounds, solve_xi
from outersync.diagnostics import (DiagnosticReport, containment_check, contraction_check,
                                   envelope_bound, envelope_check, full_rounds,
                                   hold_nonnegativity_check, rate_fit, round_ratios, run_all,
                                   sync_error_series, zeno_check, zeno_report)
from outersync.engine import simulate
from outersync.errors import DomainError
from outersync.model import Mode, SwitchSchedule, build_system
from outersync.presets import preset_paper, sec6_thresholds
from outersync.triggers import RationalDecay, ThresholdSpec, TriggerRule

from conftest import five_neuron, five_neuron_run, five_neuron_xi


def single_neuron(horizon=2.0):
    return build_system([Mode([1.2], [[0.3]], [0.0])], SwitchSchedule.constant(horizon))


def test_rate_fit_exponential():
    t = np.linspace(0, 5, 100)
    rate, r2 = rate_fit(t, np.exp(-2 * t), window=(0, 5))
    assert rate == pytest.approx(-2.0, abs=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_constant_and_short():
    rate, r2 = rate_fit(np.arange(10.0), np.full(10, 3.0))
    assert rate == 0.0 and r2 == 1.0
    with pytest.raises(DomainError):
        rate_fit([0.0, 1.0], [1.0, 0.5])


def test_arithmetic_triggers_zeno_stats():
    system = build_system([Mode([2.0], [[0.0]], [0.0])], SwitchSchedule.constant(0.1))
    rule = TriggerRule("centralized-structure", "l1", 0.01, 0.02, 1.0)
    tr = simulate(system, rule, [1.0], [1.0], [0.0])
    stats = zeno_check(tr, global_bounds(system, [1.0], "l1"), rule)
    assert stats.min_gap == pytest.approx(0.005, abs=1e-15)
    assert stats.mean_gap == pytest.approx(0.005, abs=1e-15)
    assert stats.max_gap == pytest.approx(0.005, abs=1e-15)
    assert stats.status == "pass"


def test_single_neuron_contraction_ratio():
    system = single_neuron(5.0)
    rule = TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.5)
    tr = simulate(system, rule, [1.0], [0.7], [-0.2])
    rep = contraction_check(tr, [1.0], "l1", 0.01)
    assert rep.passed
    assert rep.worst_value <= 0.99


def test_zero_event_trace_is_vacuous_pass():
    system = single_neuron(0.001)
    rule = TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.5)
    tr = simulate(system, rule, [1.0], [0.7], [-0.2])
    assert len(tr.triggers) == 0
    rep = contraction_check(tr, [1.0], "l1", 0.01)
    assert rep.passed and rep.details["events"] == 0


def test_state_trace_contraction_not_applicable():
    system = single_neuron()
    rule = TriggerRule("centralized-state", "l1", thresholds=sec6_thresholds()["phi"])
    tr = simulate(system, rule, [1.0], [0.7], [-0.2])
    assert contraction_check(tr, [1.0], "l1", 0.01).status == "not applicable"


def test_sync_error_series_zero_and_linf():
    system = single_neuron()
    rule = TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.5)
    tr = simulate(system, rule, [1.0], [0.3], [0.3])
    _, err = sync_error_series(tr)
    assert np.all(err == 0)
    sys2 = build_system([Mode([1.0, 1.0], np.zeros((2, 2)), [0, 0])], SwitchSchedule.constant(1.0))
    tr2 = simulate(sys2, TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.5),
                   [1.0, 1.0], [1.0, -2.0], [0.0, 0.0])
    _, e = sync_error_series(tr2, [1.0, 1.0], "linf")
    assert e[0] == 2.0


def test_envelope_matches_high_precision_quadrature():
    system = single_neuron(50.0)
    phi = RationalDecay(3.0, 0.2, 1.5, 2.0)
    mu = 1.2 - 0.25 * 0.3
    Lam, w0 = 1.4, 0.8
    times = np.array([0.0, 0.5, 3.0, 10.0, 27.5, 50.0])
    got = envelope_bound(times, system, [1.0], "l1", phi, Lam, w0)
    mpmath.mp.dps = 40
    for t, g in zip(times, got):
        integ = mpmath.quad(lambda s: mpmath.exp(mu * s) * 3 / (0.2 * s + 1.5) ** 2, [0, t])
        ref = mpmath.exp(-mu * t) * (w0 + Lam * integ)
        assert abs(g - float(ref)) <= 1e-9


def test_envelope_zero_trace_passes():
    system = single_neuron()
    rule = TriggerRule("centralized-state", "l1", thresholds=sec6_thresholds()["phi"])
    tr = simulate(system, rule, [1.0], [0.3], [0.3])
    rep = envelope_check(tr, [1.0], "l1", None, global_bounds(system, [1.0], "l1"), system)
    assert rep.passed


def test_report_json_fields():
    rep = DiagnosticReport("zeno", "pass", 0.1, 0.05, [{"t": 1.0, "value": 0.1}])
    data = json.loads(rep.to_json())
    for key in ("check", "status", "worst_value", "threshold", "locations"):
        assert key in data


def test_diagnostics_are_pure():
    system, _ = preset_paper("sec6-5neuron", horizon=20.0)
    xi = solve_xi(system, "l1", 0.05).xi
    rule = TriggerRule("centralized-state", "l1", thresholds=sec6_thresholds()["phi"])
    tr = simulate(system, rule, xi, np.ones(5), -np.ones(5))
    b = global_bounds(system, xi, "l1")
    a1 = [r.to_json() for r in run_all(tr, system, b)]
    a2 = [r.to_json() for r in run_all(tr, system, b)]
    assert a1 == a2


def test_zeno_gap_independent_of_output_grid():
    from outersync.engine import IntegratorConfig

    system, _ = preset_paper("sec6-5neuron", horizon=20.0)
    xi = solve_xi(system, "l1", 0.05).xi
    rule = TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.05)
    b = global_bounds(system, xi, "l1")
    g1 = zeno_check(simulate(system, rule, xi, np.ones(5), np.zeros(5),
                             IntegratorConfig(output_dt=0.1)), b).min_gap
    g2 = zeno_check(simulate(system, rule, xi, np.ones(5), np.zeros(5),
                             IntegratorConfig(output_dt=0.37)), b).min_gap
    assert g1 == g2


def test_hold_nonnegativity_on_structure_run():
    system, _ = preset_paper("sec6-5neuron", horizon=30.0)
    xi = solve_xi(system, "l1", 0.05).xi
    tr = simulate(system, TriggerRule("centralized-structure", "l1", 0.01, 0.02, 0.05),
                  xi, np.ones(5), np.zeros(5))
    assert hold_nonnegativity_check(tr, system).passed


def test_decentralized_state_gaps_positive_full_horizon():
    tr, _ = five_neuron_run("decentralized-state", thresholds="psi")
    system, _ = five_neuron()
    stats = zeno_check(tr, global_bounds(system, five_neuron_xi(), "l1"))
    assert stats.min_gap > 0 and stats.status == "pass"
    assert containment_check(tr, five_neuron_xi(), "l1").passed


def test_push_rounds_never_expand():
    tr, _ = five_neuron_run("decentralized-structure")
    _, ratios = round_ratios(tr, five_neuron_xi(), "l1")
    assert len(full_rounds(tr)) > 1000
    assert np.all(ratios < 1.0)


@pytest.mark.xfail(strict=True, reason="round-wise factor 1 - eps_d is not met by every round; "
                   "the contraction argument pairs each neuron's k-th sample, which the "
                   "simulated event sequence does not align")
def test_push_rounds_contract_by_margin():
    tr, _ = five_neuron_run("decentralized-structure")
    rep = contraction_check(tr, five_neuron_xi(), "l1", 0.02)
    assert rep.passed, rep.details


def test_zeno_report_shape():
    tr, _ = five_neuron_run("centralized-structure")
    system, _ = five_neuron()
    stats = zeno_check(tr, global_bounds(system, five_neuron_xi(), "l1"))
    rep = zeno_report(stats)
    assert rep.check == "zeno" and rep.passed
    assert sum(stats.per_neuron_counts) == 5 * len(tr.triggers)
