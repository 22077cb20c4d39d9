"""Post-hoc audits of simulation traces.

Every function here is a pure function of the trace and returns a report
with the common fields ``check, status, worst_value, threshold, locations``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad

from .analysis import (BoundSet, NormKind, check_weights, hold_rate_vector, mu_vector,
                       norms)
from .errors import DomainError, TraceError
from .model import SwitchingSystem
from .trace import SimulationTrace
from .triggers import ThresholdSpec, TriggerRule

REL_SLACK = 1e-9
ENVELOPE_SLACK = 1e-6
MAX_LOCATIONS = 20


@dataclass
class DiagnosticReport:
    check: str
    status: str                 # pass | fail | not applicable
    worst_value: float | None
    threshold: float | None
    locations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)


@dataclass
class EventStats:
    per_neuron_counts: list
    min_gap: float | None
    mean_gap: float | None
    max_gap: float | None
    theoretical_lower_bound: float
    status: str = "pass"
    upper_bound: float | None = None

    def to_dict(self):
        return asdict(self)


def _na(check, why):
    return DiagnosticReport(check, "not applicable", None, None, [], {"reason": why})


def _locs(times, values, mask):
    idx = np.flatnonzero(mask)[:MAX_LOCATIONS]
    return [{"t": float(times[i]), "value": float(values[i])} for i in idx]


# ------------------------------------------------------------------- series

def sync_error_series(trace: SimulationTrace, xi=None, kind="l1"):
    """``(t, ||u(t) - v(t)||_xi)`` on the snapshot grid."""
    xi = np.ones(trace.n) if xi is None else check_weights(xi, trace.n)
    return trace.t, norms(trace.w, xi, NormKind.parse(kind))


def rate_fit(t, series, window=None):
    """Least-squares slope of ``log(series)`` against ``t``.

    ``window`` is ``(t_lo, t_hi)``; by default the middle 80% of the time
    span.  Non-positive values are dropped.  Returns ``(rate, r_squared)``.
    """
    t = np.asarray(t, float)
    y = np.asarray(series, float)
    if window is None:
        span = t[-1] - t[0]
        window = (t[0] + 0.1 * span, t[-1] - 0.1 * span)
    keep = (t >= window[0]) & (t <= window[1]) & (y > 0) & np.isfinite(y)
    t, y = t[keep], np.log(y[keep])
    if t.size < 3:
        raise DomainError(f"rate_fit needs at least 3 positive points, got {t.size}")
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * t + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    if ss_tot <= 1e-30 * max(1.0, float(np.sum(y ** 2))):
        return 0.0 if abs(slope) < 1e-12 else float(slope), 1.0
    return float(slope), 1.0 - ss_res / ss_tot


# -------------------------------------------------------------- contraction

def contraction_check(trace: SimulationTrace, xi, kind, eps: float) -> DiagnosticReport:
    """Per-trigger contraction of the sampled norm.

    Centralized structure rules: ``||w(t_{k+1})|| / ||w(t_k)||`` for every
    trigger, plus ``||w(t)|| <= ||w(t_k)||`` between triggers.  Push-based
    structure rules: the weighted norm of the held samples must shrink by
    ``1 - eps`` over every round in which each neuron fires at least once.
    """
    rule = trace.rule
    check = "contraction"
    if rule is None or not rule.is_structure:
        return _na(check, "contraction factors are only asserted for structure rules")
    xi = check_weights(xi, trace.n)
    kind = NormKind.parse(kind)
    limit = (1.0 - eps) * (1.0 + REL_SLACK)
    trig = trace.triggers
    if not trig:
        return DiagnosticReport(check, "pass", None, limit, [], {"events": 0})
    if rule.is_centralized:
        return _contraction_centralized(trace, xi, kind, limit)
    return _contraction_rounds(trace, xi, kind, limit)


def _contraction_centralized(trace, xi, kind, limit):
    trig = trace.triggers
    w_at = np.vstack([trace.w[0]] + [e.w for e in trig])
    t_at = np.array([0.0] + [e.t for e in trig])
    nrm = norms(w_at, xi, kind)
    prev, nxt = nrm[:-1], nrm[1:]
    live = prev > 0
    ratios = np.where(live, nxt / np.where(live, prev, 1.0), 0.0)
    bad = ratios > limit
    # between triggers the norm must not exceed its value at the last trigger
    snap = norms(trace.w, xi, kind)
    k = np.searchsorted(t_at, trace.t, side="right") - 1
    ref = nrm[k]
    between = snap > ref * (1 + REL_SLACK) + 1e-300
    worst = float(ratios.max()) if ratios.size else None
    status = "pass" if not bad.any() and not between.any() else "fail"
    return DiagnosticReport("contraction", status, worst, limit,
                            _locs(t_at[1:], ratios, bad) + _locs(trace.t, snap / np.maximum(ref, 1e-300), between),
                            {"events": int(ratios.size), "between_violations": int(between.sum()),
                             "ratios_above_one": int(np.sum(ratios > 1.0))})


def full_rounds(trace: SimulationTrace) -> list[float]:
    """End times of consecutive rounds in which every neuron fires at least once."""
    n = trace.n
    ends = []
    seen = set()
    for e in trace.triggers:
        # simultaneous firings belong to the round they complete
        if ends and not seen and e.t == ends[-1]:
            continue
        seen.add(e.neuron)
        if len(seen) == n:
            ends.append(e.t)
            seen = set()
    return ends


def _held_norm_at(trace, times, xi, kind):
    """Norm of the held difference vector just after all events at each time."""
    idx = np.searchsorted(trace.t, times, side="right") - 1
    return norms(trace.held_w[idx], xi, kind)


def own_trigger_sums(trace: SimulationTrace, xi, kind) -> np.ndarray:
    """``S_k``: the norm of ``(w_1(t_k^1), ..., w_n(t_k^n))``, each neuron at its own k-th sample.

    ``k = 0`` is the initial sample; ``k`` runs up to the smallest per-neuron count.
    """
    per = []
    for j in range(trace.n):
        vals = [trace.w[0, j]] + [e.w[j] for e in trace.triggers if e.neuron == j]
        per.append(np.array(vals))
    K = min(len(v) for v in per)
    return norms(np.stack([v[:K] for v in per], axis=1), xi, kind)


def round_ratios(trace: SimulationTrace, xi, kind):
    """``(end_times, ratios)`` of the held-sample norm over consecutive full rounds."""
    t_r = np.array([0.0] + full_rounds(trace))
    R = _held_norm_at(trace, t_r, xi, kind)
    live = R[:-1] > 0
    return t_r[1:], np.where(live, R[1:] / np.where(live, R[:-1], 1.0), 0.0)


def _contraction_rounds(trace, xi, kind, limit):
    t_end, ratios = round_ratios(trace, xi, kind)
    bad = ratios > limit
    # the index-paired sums S_k are reported for reference only: with unequal
    # per-neuron counts they mix samples taken far apart in time
    S = own_trigger_sums(trace, xi, kind)
    paired = S[1:] / np.where(S[:-1] > 0, S[:-1], 1.0)
    status = "pass" if not bad.any() else "fail"
    return DiagnosticReport("contraction", status, float(ratios.max()) if ratios.size else None,
                            limit, _locs(t_end, ratios, bad),
                            {"rounds": int(ratios.size), "violations": int(bad.sum()),
                             "ratios_above_one": int(np.sum(ratios > 1)),
                             "paired_max_ratio": float(paired.max()) if paired.size else None})


# --------------------------------------------------------------------- Zeno

def zeno_check(trace: SimulationTrace, bounds: BoundSet, rule: TriggerRule | None = None,
               ulps: float = 4.0) -> EventStats:
    """Inter-event gap statistics against the theoretical lower bound.

    Structure rules: ``eps_c / N`` (centralized) or ``eps_d / Lambda`` (push);
    centralized structure gaps are also capped by ``eps_c / eps0``.  State
    rules only need strictly positive gaps.  Gaps are compared with a few
    ulps of the event time as tolerance, the resolution of the stored times.
    """
    rule = rule or trace.rule
    gaps = trace.gaps()
    counts = trace.counts()
    ends = {}
    for key in gaps:
        times = trace.trigger_times(None if key == "all" else key)
        ends[key] = times
    flat = np.concatenate(list(gaps.values())) if gaps else np.array([])
    if rule.protocol == "centralized-structure":
        lower, upper = rule.eps_c / bounds.N, rule.eps_c / bounds.eps0
    elif rule.protocol == "decentralized-structure":
        lower, upper = rule.eps_d / bounds.Lambda, None
    else:
        lower, upper = 0.0, None
    if flat.size == 0:
        return EventStats(counts, None, None, None, lower, "pass", upper)
    if np.any(flat <= 0):
        raise TraceError("non-positive inter-event gap: trace is corrupt")
    tol = np.concatenate([ulps * np.spacing(np.maximum(ends[k], 1.0)) for k in gaps])
    ok = np.all(flat >= lower - tol)
    if upper is not None:
        ok = ok and np.all(flat <= upper + tol)
    return EventStats(counts, float(flat.min()), float(flat.mean()), float(flat.max()), lower,
                      "pass" if ok else "fail", upper)


def zeno_report(stats: EventStats) -> DiagnosticReport:
    return DiagnosticReport("zeno", stats.status, stats.min_gap, stats.theoretical_lower_bound,
                            [], {"max_gap": stats.max_gap, "upper_bound": stats.upper_bound,
                                 "per_neuron_counts": stats.per_neuron_counts})


# -------------------------------------------------------------- hold check

def hold_nonnegativity_check(trace: SimulationTrace, system: SwitchingSystem) -> DiagnosticReport:
    """``1 - int [gamma_j - G_j a_jj^+] ds >= 0`` over every own inter-event interval."""
    check = "hold-nonnegativity"
    rule = trace.rule
    if rule is None or not rule.is_structure:
        return _na(check, "asserted for structure rules only")
    rates = np.array([hold_rate_vector(m, system.gains) for m in system.modes])
    P = system.integral(rates)
    worst, locs = np.inf, []
    for j in range(trace.n):
        times = np.concatenate([[0.0], trace.trigger_times(j), [system.horizon]])
        ints = np.array([P(b)[j] - P(a)[j] for a, b in zip(times[:-1], times[1:])])
        vals = 1.0 - ints
        worst = min(worst, float(vals.min()))
        for i in np.flatnonzero(vals < 0)[:MAX_LOCATIONS]:
            locs.append({"neuron": j + 1, "t": float(times[i]), "value": float(vals[i])})
    return DiagnosticReport(check, "pass" if worst >= 0 else "fail", worst, 0.0, locs)


# ---------------------------------------------------------------- state rules

def _phi_effective(spec: ThresholdSpec, xi, kind, n):
    """Bound on ``||e(t)||``: ``Phi`` itself or the weighted norm of the ``Psi`` vector."""
    if len(spec.functions) == 1 and n != 1:
        return lambda t: float(spec.global_phi(t))
    return lambda t: float(norms(spec.per_neuron(np.atleast_1d(t), n), xi, kind)[0])


def containment_check(trace: SimulationTrace, xi, kind, thresholds: ThresholdSpec | None = None,
                      slack: float | None = None, micro_step: float = 1e-3) -> DiagnosticReport:
    """Audit ``||e(t)|| <= Phi(t)`` (or ``|e_i| <= Psi_i``) at every snapshot.

    ``slack`` defaults to one micro step times the steepest observed change of
    the monitored gap between snapshots.
    """
    check = "state-containment"
    rule = trace.rule
    thresholds = thresholds or (rule.thresholds if rule is not None else None)
    if thresholds is None or thresholds.is_adaptive:
        return _na(check, "needs closed-form state thresholds")
    xi = check_weights(xi, trace.n)
    kind = NormKind.parse(kind)
    e = trace.held_w - trace.w
    if rule is not None and rule.protocol == "decentralized-state":
        gap = np.abs(e) - thresholds.per_neuron(trace.t, trace.n)
        gap = gap.max(axis=1)
    else:
        gap = norms(e, xi, kind) - thresholds.global_phi(trace.t)
    if slack is None:
        # steepest drift of the monitored gap between snapshots, skipping resets
        smooth = trace.event_flag[1:] == 0
        rate = np.abs(np.diff(gap))[smooth] / np.diff(trace.t)[smooth]
        slack = micro_step * float(rate.max()) if rate.size else 0.0
    worst = float(gap.max())
    bad = gap > slack
    return DiagnosticReport(check, "pass" if not bad.any() else "fail", worst, slack,
                            _locs(trace.t, gap, bad), {"above_zero": int(np.sum(gap > 0))})


def envelope_bound(times, system: SwitchingSystem, xi, kind, phi, Lambda: float, w0_norm: float,
                   epsrel: float = 1e-10):
    """Comparison bound ``e^{-sigma(t)} [||w0|| + Lambda int_0^t e^{sigma(s)} Phi(s) ds]``.

    ``sigma(t) = int_0^t min_j mu_j`` is piecewise linear.  The bound is
    evaluated through the equivalent recursion on
    ``K(t) = int_0^t e^{-(sigma(t) - sigma(s))} Phi(s) ds`` so no exponential
    overflows for long horizons.
    """
    times = np.asarray(times, float)
    kind = NormKind.parse(kind)
    xi = check_weights(xi, system.n)
    rates = np.array([mu_vector(m, system.gains, xi, kind).min() for m in system.modes])
    sigma = system.integral(rates)
    bp = system.schedule.breakpoints
    out = np.empty_like(times)
    K, t_prev = 0.0, 0.0
    for idx, t in enumerate(times):
        cuts = np.concatenate([[t_prev], bp[(bp > t_prev) & (bp < t)], [t]]) if t > t_prev else []
        for a, b in zip(cuts[:-1], cuts[1:]):
            r = rates[system.schedule.mode_index[system.schedule.interval_of(a)]]
            piece, _ = quad(lambda s: np.exp(-r * (b - s)) * phi(s), a, b,
                            epsabs=0.0, epsrel=epsrel, limit=200)
            K = np.exp(-r * (b - a)) * K + piece
        t_prev = t
        out[idx] = np.exp(-float(sigma(t))) * w0_norm + Lambda * K
    return out


def envelope_check(trace: SimulationTrace, xi, kind, threshold: ThresholdSpec | None,
                   bounds: BoundSet, system: SwitchingSystem,
                   slack: float = ENVELOPE_SLACK) -> DiagnosticReport:
    check = "gronwall-envelope"
    rule = trace.rule
    if rule is None or rule.is_structure:
        return _na(check, "the envelope applies to state-rule traces")
    threshold = threshold or rule.thresholds
    if threshold is None or threshold.is_adaptive:
        return _na(check, "needs closed-form thresholds")
    xi = check_weights(xi, trace.n)
    kind = NormKind.parse(kind)
    wn = norms(trace.w, xi, kind)
    phi = _phi_effective(threshold, xi, kind, trace.n)
    env = envelope_bound(trace.t, system, xi, kind, phi, bounds.Lambda, float(wn[0]))
    excess = wn - env
    bad = excess > slack
    return DiagnosticReport(check, "pass" if not bad.any() else "fail", float(excess.max()),
                            slack, _locs(trace.t, excess, bad),
                            {"violations": int(bad.sum()), "final_envelope": float(env[-1])})


def adaptive_audit(trace: SimulationTrace, xi, kind) -> DiagnosticReport:
    """``||Psi(t)||_xi <= alpha ||w(t)||_xi`` along an adaptive-threshold trace."""
    from .triggers import adaptive_delta_grid

    check = "adaptive-threshold"
    rule = trace.rule
    if rule is None or rule.thresholds is None or not rule.thresholds.is_adaptive:
        return _na(check, "needs an adaptive-delta trace")
    spec = rule.thresholds.adaptive
    xi = check_weights(xi, trace.n)
    kind = NormKind.parse(kind)
    # last trigger of each neuron at every snapshot
    last = np.zeros((trace.t.size, trace.n))
    for j in range(trace.n):
        h = trace.held_history[j]
        last[:, j] = h[np.searchsorted(h, trace.t, side="right") - 1]
    wn = norms(trace.w, xi, kind)
    psi = np.vstack([adaptive_delta_grid(spec, wn[i:i + 1], xi, kind, trace.t[i:i + 1], last[i])
                     for i in range(trace.t.size)])
    ratio = norms(psi, xi, kind) - spec.alpha * wn * (1 + 1e-12)
    bad = ratio > 0
    return DiagnosticReport(check, "pass" if not bad.any() else "fail", float(ratio.max()), 0.0,
                            _locs(trace.t, ratio, bad))


def run_all(trace: SimulationTrace, system: SwitchingSystem, bounds: BoundSet) -> list:
    """Every applicable diagnostic for a trace, as reports."""
    rule = trace.rule
    xi, kind = trace.xi, rule.norm
    out = [contraction_check(trace, xi, kind, rule.margin),
           zeno_report(zeno_check(trace, bounds, rule)),
           hold_nonnegativity_check(trace, system)]
    if not rule.is_structure:
        out.append(containment_check(trace, xi, kind))
        out.append(envelope_check(trace, xi, kind, None, bounds, system))
        out.append(adaptive_audit(trace, xi, kind))
    return out
