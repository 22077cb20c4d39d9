"""Event-driven simulation of the sampled-data pair.

Between two consecutive events (trigger, mode switch, output sample) every
right hand side is evaluated at held samples and frozen coefficients, so the
derivative is a constant vector and the update is exact: ``x(t) = x(a) + c (t - a)``.
The pair is advanced as ``(u, w = u - v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import BoundSet, NormKind, check_weights, global_bounds, norms, weighted_norm
from .errors import ContractViolation, DomainError, RuleValidationError, SimulationError
from .model import ActivationSpec, Mode, SwitchingSystem, TrajectoryState, as_vector
from .trace import SimulationTrace
from .triggers import (PushCondition, TriggerRule, adaptive_delta_grid, mu_table,
                       next_trigger_centralized_structure, rule_problems)


@dataclass
class HeldSamples:
    """Samples frozen at the last trigger of each neuron.

    For centralized rules all entries of ``sample_time`` coincide.
    """

    sample_time: np.ndarray
    u_held: np.ndarray
    w_held: np.ndarray

    @classmethod
    def at(cls, state: TrajectoryState) -> "HeldSamples":
        n = state.u.shape[0]
        return cls(np.full(n, state.t), state.u.copy(), state.w.copy())

    @property
    def v_held(self) -> np.ndarray:
        return self.u_held - self.w_held

    def resample(self, state: TrajectoryState, idx=None) -> None:
        if np.any(self.sample_time > state.t):
            raise ContractViolation("held samples must not lie in the future")
        if idx is None:
            idx = slice(None)
        self.sample_time[idx] = state.t
        self.u_held[idx] = state.u[idx]
        self.w_held[idx] = state.w[idx]

    def copy(self) -> "HeldSamples":
        return HeldSamples(self.sample_time.copy(), self.u_held.copy(), self.w_held.copy())


@dataclass
class EventRecord:
    """One entry of the event log.

    ``norm_before`` / ``norm_after`` are the weighted norms of the held
    difference vector before and after the event (for a centralized trigger:
    ``||w(t_k)||`` and ``||w(t_{k+1})||``).
    """

    t: float
    kind: str                  # trigger-centralized | trigger-neuron | mode-switch
    neuron: int | None
    mode: int
    norm_before: float
    norm_after: float
    rule_value: float
    u: np.ndarray | None = None
    w: np.ndarray | None = None

    def to_dict(self):
        return {"t": self.t, "kind": self.kind, "neuron": self.neuron, "mode": self.mode,
                "norm_before": self.norm_before, "norm_after": self.norm_after,
                "rule_value": self.rule_value}


@dataclass(frozen=True)
class IntegratorConfig:
    micro_step: float = 1e-3
    crossing_tol: float = 1e-10
    output_dt: float = 0.1
    oracle_mode: bool = False
    oracle_step: float = 1e-4

    def __post_init__(self):
        if not self.micro_step > self.crossing_tol > 0:
            raise DomainError("need micro_step > crossing_tol > 0")
        if not self.output_dt > 0 or not self.oracle_step > 0:
            raise DomainError("output_dt and oracle_step must be positive")

    def to_dict(self):
        return {"micro_step": self.micro_step, "crossing_tol": self.crossing_tol,
                "output_dt": self.output_dt, "oracle_mode": self.oracle_mode,
                "oracle_step": self.oracle_step}


# ----------------------------------------------------------------- primitives

def _default_activation(n):
    return ActivationSpec("sigmoid", n)


def held_rates(mode: Mode, activation: ActivationSpec, held: HeldSamples):
    """Constant derivatives ``(du/dt, dw/dt)`` under held samples."""
    hu, hw = held.u_held, held.w_held
    cu = -mode.gamma * hu + mode.A @ activation(hu) + mode.I
    cw = -mode.gamma * hw + mode.A @ activation.difference(hu, hw)
    return cu, cw


def hold_integrate(state: TrajectoryState, held: HeldSamples, mode: Mode, t_from: float,
                   t_to: float, activation: ActivationSpec | None = None,
                   system: SwitchingSystem | None = None) -> TrajectoryState:
    """Exact update across ``[t_from, t_to]`` with held samples and a fixed mode.

    Passing ``system`` enables the contract check that no switching instant
    lies strictly inside the interval (and supplies the activation).
    """
    if t_to < t_from:
        raise ContractViolation(f"t_to={t_to} precedes t_from={t_from}")
    if state.t != t_from:
        raise ContractViolation(f"state is at t={state.t}, not t_from={t_from}")
    if system is not None:
        bp = system.schedule.breakpoints
        if np.any((bp > t_from) & (bp < t_to)):
            raise ContractViolation(f"interval ({t_from}, {t_to}) straddles a mode switch")
        activation = system.activation
    if activation is None:
        activation = _default_activation(mode.n)
    if t_to == t_from:
        return state.copy()
    cu, cw = held_rates(mode, activation, held)
    dt = t_to - t_from
    return TrajectoryState(t_to, state.u + cu * dt, state.w + cw * dt)


def rk4_integrate(state: TrajectoryState, held: HeldSamples, mode: Mode, t_from: float,
                  t_to: float, step: float = 1e-5,
                  activation: ActivationSpec | None = None) -> TrajectoryState:
    """Classical fourth-order Runge-Kutta oracle for the held dynamics.

    Integrates ``u`` and ``v`` separately (not the difference) so it shares
    no arithmetic with :func:`hold_integrate`.
    """
    if activation is None:
        activation = _default_activation(mode.n)
    hu, hv = held.u_held, held.v_held

    def rhs(_t, y, h):
        return -mode.gamma * h + mode.A @ activation(h) + mode.I

    y_u, y_v = state.u.astype(float).copy(), state.v.astype(float).copy()
    t = t_from
    steps = max(1, int(np.ceil((t_to - t_from) / step - 1e-9)))
    h = (t_to - t_from) / steps
    for _ in range(steps):
        for y, held_vec in ((y_u, hu), (y_v, hv)):
            k1 = rhs(t, y, held_vec)
            k2 = rhs(t + h / 2, y + h / 2 * k1, held_vec)
            k3 = rhs(t + h / 2, y + h / 2 * k2, held_vec)
            k4 = rhs(t + h, y + h * k3, held_vec)
            y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return TrajectoryState.from_pair(t_to, y_u, y_v)


def refine_crossing(f, t_lo: float, t_hi: float, tol: float, threshold: float = 0.0) -> float:
    """Bisection for the crossing of ``f`` through ``threshold`` on ``[t_lo, t_hi]``.

    Returns the end of the final bracket lying on ``t_hi``'s side, so for a
    trigger rule the returned time already satisfies the firing condition.
    """
    f_lo = f(t_lo) - threshold
    f_hi = f(t_hi) - threshold
    if not tol > 0:
        raise DomainError("tol must be positive")
    if f_hi == 0:
        return t_hi
    if f_lo == 0:
        return t_lo
    if np.sign(f_lo) == np.sign(f_hi):
        raise DomainError(f"no sign change of f - threshold on [{t_lo}, {t_hi}]")
    hi_sign = np.sign(f_hi)
    lo, hi = t_lo, t_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid) - threshold
        if fm == 0:
            return mid
        if np.sign(fm) == hi_sign:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------- event loop

class _Loop:
    def __init__(self, system, rule, xi, u0, v0, cfg):
        self.system = system
        self.rule = rule
        self.xi = xi
        self.cfg = cfg
        self.kind = rule.norm
        self.act = system.activation
        self.sched = system.schedule
        self.horizon = system.horizon
        self.n = system.n
        self.state = TrajectoryState.from_pair(0.0, u0, v0)
        self.held = HeldSamples.at(self.state)
        self.k = 0
        self.grid_i = 1
        self.rates = None
        self.rows_t, self.rows_u, self.rows_w, self.rows_h = [], [], [], []
        self.rows_flag, self.rows_neuron = [], []
        self.events: list[EventRecord] = []
        self.history = {i: [0.0] for i in range(self.n)}
        self.oracle_dev = 0.0
        self._snapshot(0.0)

    # -- bookkeeping
    def _mode_idx(self):
        return int(self.sched.mode_index[self.k])

    def _mode(self):
        return self.system.modes[self._mode_idx()]

    def _refresh(self):
        self.rates = held_rates(self._mode(), self.act, self.held)

    def _snapshot(self, t, neurons=None):
        st = self.state
        if self.rows_t and self.rows_t[-1] == t:
            self.rows_h[-1] = self.held.w_held.copy()
            if neurons:
                self.rows_flag[-1] = 1
                self.rows_neuron[-1] = sorted(set(self.rows_neuron[-1]) | set(neurons))
            return
        self.rows_t.append(t)
        self.rows_u.append(st.u.copy())
        self.rows_w.append(st.w.copy())
        self.rows_h.append(self.held.w_held.copy())
        self.rows_flag.append(1 if neurons else 0)
        self.rows_neuron.append(sorted(neurons) if neurons else [])

    def _next_bp(self):
        return self.sched.interval_end(self.k)

    def _next_grid(self):
        return min(self.grid_i * self.cfg.output_dt, self.horizon)

    def _guard(self):
        st = self.state
        if not (np.all(np.isfinite(st.u)) and np.all(np.isfinite(st.w))):
            raise SimulationError(f"non-finite state at t={st.t}")

    def _step_to(self, t_to):
        """Exact move inside the current piece (no boundary crossed)."""
        if t_to == self.state.t:
            return
        if self.rates is None:
            self._refresh()
        cu, cw = self.rates
        st = self.state
        dt = t_to - st.t
        if self.cfg.oracle_mode:
            ref = rk4_integrate(st, self.held, self._mode(), st.t, t_to,
                                step=self.cfg.oracle_step, activation=self.act)
        self.state = TrajectoryState(t_to, st.u + cu * dt, st.w + cw * dt)
        if self.cfg.oracle_mode:
            dev = max(np.max(np.abs(ref.u - self.state.u)), np.max(np.abs(ref.v - self.state.v)))
            self.oracle_dev = max(self.oracle_dev, float(dev))

    def _cross_boundaries(self):
        """Handle a switch and/or output sample located exactly at the current time."""
        t = self.state.t
        self._guard()
        while self.k + 1 < self.sched.n_intervals and self.sched.breakpoints[self.k + 1] <= t:
            self.k += 1
            self.rates = None
            wn = self.wnorm(self.held.w_held)
            self.events.append(EventRecord(t, "mode-switch", None, self._mode_idx(), wn, wn,
                                           float("nan")))
        while self.grid_i * self.cfg.output_dt <= t + 1e-12 * max(1.0, t) \
                and self.grid_i * self.cfg.output_dt <= self.horizon:
            self._snapshot(t)
            self.grid_i += 1

    def piece_end(self, target):
        return min(self._next_bp(), self._next_grid(), target)

    def advance(self, target):
        """Move to ``target`` through all intermediate boundaries (no monitoring)."""
        while self.state.t < target:
            b = self.piece_end(target)
            self._step_to(b)
            self._cross_boundaries()
        self._cross_boundaries()

    def wnorm(self, w):
        return float(weighted_norm(w, self.xi, self.kind))

    # -- firing
    def fire(self, idx, kind, rule_value):
        st = self.state
        before = self.wnorm(self.held.w_held)
        self.held.resample(st, idx)
        after = self.wnorm(self.held.w_held)
        neurons = list(range(self.n)) if idx is None else [int(idx)]
        for i in neurons:
            self.history[i].append(st.t)
        self.events.append(EventRecord(st.t, kind, None if idx is None else int(idx),
                                       self._mode_idx(), before, after, float(rule_value),
                                       st.u.copy(), st.w.copy()))
        self.rates = None
        self._snapshot(st.t, neurons=[0] if idx is None else [int(idx) + 1])

    # -- protocols
    def run_centralized_structure(self):
        mus = mu_table(self.system, self.xi, self.kind)
        while self.state.t < self.horizon:
            t_next, crossed = next_trigger_centralized_structure(
                self.rule, self.xi, self.system, self.state.t, mus)
            if t_next <= self.state.t:
                raise SimulationError(f"trigger time did not advance at t={self.state.t}")
            self.advance(t_next)
            if not crossed:
                break
            self.fire(None, "trigger-centralized", self.rule.eps_c)

    def run_decentralized_structure(self):
        cond = PushCondition(self.rule, self.xi, self.system)
        self.push = cond
        eps = self.rule.eps_d
        while self.state.t < self.horizon:
            nxt = cond.next_crossings(self.state.t)
            j = int(np.argmin(nxt))
            t_next = float(nxt[j])
            if not np.isfinite(t_next) or t_next > self.horizon:
                self.advance(self.horizon)
                break
            self.advance(t_next)
            value = cond.value(j, t_next)
            cond.fire(j, t_next)
            self.fire(j, "trigger-neuron", max(value, eps))

    def _state_excess(self, a, times):
        """Firing measure on a grid of times inside the current piece (> 0 means fire)."""
        cu, cw = self.rates
        dt = (times - a)[:, None]
        w = self.state.w[None, :] + cw[None, :] * dt
        e = self.held.w_held[None, :] - w
        spec = self.rule.thresholds
        if self.rule.protocol == "centralized-state":
            return norms(e, self.xi, self.kind) - spec.global_phi(times), None
        if spec.is_adaptive:
            wn = norms(w, self.xi, self.kind)
            psi = adaptive_delta_grid(spec.adaptive, wn, self.xi, self.kind, times,
                                      self.held.sample_time)
        else:
            psi = spec.per_neuron(times, self.n)
        ex = np.abs(e) - psi
        return ex.max(axis=1), ex

    def run_state(self):
        h = self.cfg.micro_step
        central = self.rule.protocol == "centralized-state"
        while self.state.t < self.horizon:
            if self.rates is None:
                self._refresh()
            a = self.state.t
            b = self.piece_end(self.horizon)
            m = int(np.floor((b - a) / h))
            times = a + h * np.arange(1, m + 1)
            if m == 0 or times[-1] < b:
                times = np.append(times, b)
            times = times[times > a]
            excess, _ = self._state_excess(a, times)
            hit = np.flatnonzero(excess > 0)
            if hit.size == 0:
                self._step_to(b)
                self._cross_boundaries()
                continue
            i = hit[0]
            lo = times[i - 1] if i > 0 else a

            def f(t):
                return float(self._state_excess(a, np.array([t]))[0][0])

            t_star = refine_crossing(f, lo, times[i], self.cfg.crossing_tol) \
                if f(lo) <= 0 else lo
            self._step_to(t_star)
            if central:
                val = f(t_star) + float(self.rule.thresholds.global_phi(t_star))
                self.fire(None, "trigger-centralized", val)
            else:
                # fire every neuron whose own condition holds now; thresholds may
                # move after each firing (adaptive case), so re-check in place
                for _ in range(self.n):
                    _, ex = self._state_excess(self.state.t, np.array([self.state.t]))
                    over = np.flatnonzero(ex[0] > 0)
                    if over.size == 0:
                        break
                    j = int(over[np.argmax(ex[0][over])])
                    err = abs(self.held.w_held[j] - self.state.w[j])
                    self.fire(j, "trigger-neuron", err)
                    self._refresh()
            self._cross_boundaries()

    def trace(self, config_echo, bounds):
        return SimulationTrace(
            t=np.array(self.rows_t), u=np.array(self.rows_u), w=np.array(self.rows_w),
            held_w=np.array(self.rows_h), event_flag=np.array(self.rows_flag, dtype=int),
            event_neurons=self.rows_neuron, events=self.events,
            held_history={i: np.array(v) for i, v in self.history.items()},
            config_echo=config_echo, rule=self.rule, xi=self.xi,
            bounds=bounds, meta={"oracle_max_dev": self.oracle_dev if self.cfg.oracle_mode
                                 else None})


def simulate(system: SwitchingSystem, rule: TriggerRule, xi, u0, v0,
             cfg: IntegratorConfig | None = None, override: bool = False,
             config_echo: dict | None = None) -> SimulationTrace:
    """Run one closed-loop simulation to the horizon.

    Rules whose convergence hypotheses fail for ``xi`` are refused with
    :class:`RuleValidationError` unless ``override`` is set; the problems are
    then recorded in the trace metadata instead.
    """
    cfg = cfg or IntegratorConfig()
    n = system.n
    xi = check_weights(xi, n)
    u0 = as_vector(u0, n, "u0")
    v0 = as_vector(v0, n, "v0")
    bounds = global_bounds(system, xi, rule.norm)
    problems = rule_problems(rule, bounds)
    if problems and not override:
        raise RuleValidationError("rule hypotheses fail: " + "; ".join(problems), problems)
    loop = _Loop(system, rule, xi, u0, v0, cfg)
    if rule.protocol == "centralized-structure":
        loop.run_centralized_structure()
    elif rule.protocol == "decentralized-structure":
        loop.run_decentralized_structure()
    else:
        loop.run_state()
    if config_echo is None:
        config_echo = {"rule": rule.to_dict(), "xi": xi.tolist(), "u0": u0.tolist(),
                       "v0": v0.tolist(), "horizon": system.horizon,
                       "integrator": cfg.to_dict()}
    tr = loop.trace(config_echo, bounds)
    tr.meta["rule_problems"] = problems
    return tr
