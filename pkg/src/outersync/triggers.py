"""Trigger-rule families and threshold functions.

Four protocols are supported:

* ``centralized-structure``   - common resampling when ``min_j int mu_j`` reaches ``eps_c``;
* ``decentralized-structure`` - neuron ``j`` resamples when its push condition
  ``D_j`` reaches ``eps_d``; neighbours' broadcasts re-arm it;
* ``centralized-state``       - common resampling when ``||e(t)|| > Phi(t)``;
* ``decentralized-state``     - neuron ``i`` resamples when ``|e_i(t)| > Psi_i(t)``.

Every rule fires at the *first* time its monitored quantity reaches the
threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import (BoundSet, NormKind, check_weights, hold_rate_vector, mu_vector,
                       norms, weighted_norm)
from .errors import DomainError, RuleValidationError, ValidationError
from .model import SwitchingSystem

PROTOCOLS = ("centralized-structure", "decentralized-structure",
             "centralized-state", "decentralized-state")
STRUCTURE = PROTOCOLS[:2]
STATE = PROTOCOLS[2:]
CENTRALIZED = (PROTOCOLS[0], PROTOCOLS[2])


# ---------------------------------------------------------------- thresholds

@dataclass(frozen=True)
class RationalDecay:
    """``c / (a t + b)**p``."""

    c: float
    a: float
    b: float
    p: float
    family = "rational-decay"

    def __post_init__(self):
        if not (self.c > 0 and self.a > 0 and self.b > 0 and self.p > 0):
            raise ValidationError(f"rational-decay needs c, a, b, p > 0, got {self}")

    def __call__(self, t):
        return self.c / (self.a * np.asarray(t, float) + self.b) ** self.p

    def params(self):
        return {"c": self.c, "a": self.a, "b": self.b, "p": self.p}


@dataclass(frozen=True)
class ExpGamma:
    """``(t + s) exp(-r t - q) / d``; decreasing on t >= 0 iff ``r s >= 1``."""

    s: float
    r: float
    q: float
    d: float
    family = "exp-gamma"

    def __post_init__(self):
        if not (self.s > 0 and self.r > 0 and self.d > 0):
            raise ValidationError(f"exp-gamma needs s, r, d > 0, got {self}")
        if self.r * self.s < 1.0:
            raise ValidationError("exp-gamma is only decreasing on [0, inf) when r*s >= 1")

    def __call__(self, t):
        t = np.asarray(t, float)
        return (t + self.s) * np.exp(-self.r * t - self.q) / self.d

    def params(self):
        return {"s": self.s, "r": self.r, "q": self.q, "d": self.d}


THRESHOLD_FAMILIES = {"rational-decay": RationalDecay, "exp-gamma": ExpGamma}


def make_threshold(family: str, **params):
    try:
        cls = THRESHOLD_FAMILIES[family]
    except KeyError:
        raise ValidationError(f"unknown threshold family {family!r}") from None
    return cls(**{k: float(v) for k, v in params.items()})


@dataclass(frozen=True)
class AdaptiveDelta:
    """State-scaled thresholds ``Psi_i = delta(t) exp(-beta_i (t - t_k^i))``.

    ``delta`` uses the *global* norm of ``w`` and therefore needs
    centralized information even when driving a push-based rule.
    """

    alpha: float
    beta: tuple
    window: float
    family = "adaptive-delta"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError("adaptive-delta needs 0 < alpha < 1")
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if not all(b > 0 for b in beta):
            raise ValidationError("adaptive-delta needs beta_i > 0")
        if not self.window > 0:
            raise ValidationError("adaptive-delta needs a positive window")
        object.__setattr__(self, "beta", beta)

    def params(self):
        return {"alpha": self.alpha, "beta": list(self.beta), "window": self.window}


@dataclass(frozen=True)
class ThresholdSpec:
    """Either one global ``Phi``, ``n`` per-neuron ``Psi_i``, or an adaptive rule."""

    functions: tuple = ()
    adaptive: AdaptiveDelta | None = None
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if bool(self.functions) == (self.adaptive is not None):
            raise ValidationError("give either closed-form threshold functions or adaptive-delta")

    @property
    def is_adaptive(self) -> bool:
        return self.adaptive is not None

    def global_phi(self, t):
        if self.is_adaptive or len(self.functions) != 1:
            raise DomainError("a centralized state rule needs exactly one threshold function")
        return self.functions[0](t)

    def per_neuron(self, t, n: int) -> np.ndarray:
        """``Psi_i(t)`` for closed-form families; shape ``t.shape + (n,)``."""
        t = np.asarray(t, float)
        if self.is_adaptive:
            raise DomainError("adaptive thresholds depend on the state; use adaptive_delta")
        fns = self.functions if len(self.functions) == n else self.functions * n
        if len(fns) != n:
            raise DomainError(f"{len(self.functions)} threshold functions for {n} neurons")
        return np.stack([f(t) for f in fns], axis=-1)

    def check_family(self, horizon: float, samples: int = 20_001) -> None:
        """Positivity, strict decrease on ``[0, horizon]`` and (by family) limit zero."""
        t = np.linspace(0.0, horizon, samples)
        for f in self.functions:
            vals = f(t)
            if not vals[0] > 0 or not np.all(vals > 0):
                raise ValidationError(f"threshold {f} is not positive")
            if not np.all(np.diff(vals) < 0):
                raise ValidationError(f"threshold {f} is not strictly decreasing")

    def to_dict(self):
        if self.is_adaptive:
            return {"family": "adaptive-delta", **self.adaptive.params()}
        return {"name": self.name,
                "functions": [{"family": f.family, **f.params()} for f in self.functions]}


# --------------------------------------------------------------------- rules

@dataclass(frozen=True)
class TriggerRule:
    protocol: str
    norm: NormKind = NormKind.L1
    eps_c: float = 0.01
    eps_d: float = 0.02
    eps0: float = 0.05
    thresholds: ThresholdSpec | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if not 0 < self.eps_c < 1 or not 0 < self.eps_d < 1:
            raise ValidationError("eps_c and eps_d must lie in (0, 1)")
        if not self.eps0 > 0:
            raise ValidationError("eps0 must be positive")
        if self.protocol in STATE and self.thresholds is None:
            raise ValidationError(f"{self.protocol} needs thresholds")
        if self.protocol == "centralized-state" and self.thresholds.is_adaptive:
            raise ValidationError("adaptive-delta thresholds drive the decentralized state rule")

    @property
    def is_structure(self) -> bool:
        return self.protocol in STRUCTURE

    @property
    def is_centralized(self) -> bool:
        return self.protocol in CENTRALIZED

    @property
    def margin(self) -> float:
        return self.eps_c if self.is_centralized else self.eps_d

    def to_dict(self):
        out = {"protocol": self.protocol, "norm": self.norm.value, "eps_c": self.eps_c,
               "eps_d": self.eps_d, "eps0": self.eps0}
        if self.thresholds is not None:
            out["thresholds"] = self.thresholds.to_dict()
        return out


def rule_problems(rule: TriggerRule, bounds: BoundSet) -> list[str]:
    """Hypotheses of the convergence results that fail for these bounds."""
    problems = []
    if bounds.eps0 <= 0:
        problems.append(f"min mu = {bounds.eps0:.6g} <= 0: weights do not certify contraction")
    if rule.is_structure:
        eps = rule.margin
        if bounds.eps0 < rule.eps0:
            problems.append(f"min mu = {bounds.eps0:.6g} < eps0 = {rule.eps0:.6g}")
        if bounds.M * eps > rule.eps0:
            problems.append(f"M*eps = {bounds.M * eps:.6g} > eps0 = {rule.eps0:.6g}")
        if bounds.N * eps > rule.eps0 * (2 - eps):
            problems.append(f"N*eps = {bounds.N * eps:.6g} > eps0*(2-eps)")
    return problems


def validate_rule(rule: TriggerRule, bounds: BoundSet) -> None:
    problems = rule_problems(rule, bounds)
    if problems:
        raise RuleValidationError("; ".join(problems), problems)


# ------------------------------------------------- structure-dependent rules

def mu_table(system: SwitchingSystem, xi, kind) -> np.ndarray:
    """``mu_{m,j}`` for every mode, shape ``(n_modes, n)``."""
    return np.array([mu_vector(m, system.gains, xi, kind) for m in system.modes])


def next_trigger_centralized_structure(rule: TriggerRule, xi, system: SwitchingSystem,
                                       t_k: float, mus: np.ndarray | None = None):
    """First ``t > t_k`` where ``min_j int_{t_k}^t mu_j ds = eps_c``.

    Returns ``(t, crossed)``; ``crossed`` is False when the horizon comes first
    (then ``t`` is the horizon).  Closed form: the integrands are constant on
    each switching interval, so the integrals are accumulated interval by
    interval and the crossing found with one division per neuron.
    """
    if mus is None:
        mus = mu_table(system, check_weights(xi, system.n), rule.norm)
    sched = system.schedule
    k = int(sched.interval_of(t_k))
    acc = np.zeros(system.n)
    t = float(t_k)
    eps = rule.eps_c
    while True:
        end = sched.interval_end(k)
        rate = mus[sched.mode_index[k]]
        with np.errstate(divide="ignore"):
            need = np.where(rate > 0, (eps - acc) / rate, np.inf)
        # the minimum of the integrals reaches eps once the slowest neuron does
        cand = t + float(np.max(np.maximum(need, 0.0)))
        if cand <= end:
            if cand >= sched.horizon:
                return sched.horizon, cand == sched.horizon
            return cand, True
        acc = acc + rate * (end - t)
        t = end
        k += 1
        if k >= sched.n_intervals:
            return sched.horizon, False


class PushCondition:
    """The armed push-based structure condition of all neurons.

    ``D_j(t) = int_{t_k^j}^t r_j ds - sum_{i != j} c_ij int_{t_last^i}^t q_ij ds``

    where (L1) ``r_j = gamma_j - G_j a_jj^+``, ``c_ij = G_j xi_i/xi_j``,
    ``q_ij = |a_ij|``; the L2 and Linf variants change ``r``, ``c`` and ``q``
    as in the corresponding contraction coefficients.  Between events
    ``dD_j/dt = mu_j``; a neighbour's broadcast moves its lower limit forward,
    which can only increase ``D_j``.
    """

    def __init__(self, rule: TriggerRule, xi, system: SwitchingSystem, last=None):
        self.rule = rule
        self.system = system
        self.xi = check_weights(xi, system.n)
        n = system.n
        G = system.gains
        kind = rule.norm
        own, cross = [], []
        for mode in system.modes:
            off = np.abs(mode.A) - np.diag(np.abs(np.diag(mode.A)))
            r = hold_rate_vector(mode, G)
            if kind is NormKind.L2:
                r = r - 0.5 * (off @ G)
            # q[j, i]: integrand of neuron j's i-th neighbour term
            q = off if kind is NormKind.LINF else off.T
            own.append(r)
            cross.append(q)
        self.own_rates = np.array(own)
        self.cross_rates = np.array(cross)
        scale = 0.5 if kind is NormKind.L2 else 1.0
        self.coef = scale * G[:, None] * self.xi[None, :] / self.xi[:, None]
        np.fill_diagonal(self.coef, 0.0)
        self.slopes = self.own_rates - np.einsum("ji,mji->mj", self.coef, self.cross_rates)
        self.P = system.integral(self.own_rates)
        self.Q = system.integral(self.cross_rates)
        self.last = np.zeros(n) if last is None else np.array(last, float)
        # integrals at every neuron's last trigger, refreshed on each firing
        self._ar = np.arange(n)
        self._P_last = np.array([self.P(s)[j] for j, s in enumerate(self.last)])
        self._Q_last = np.array([self.Q(s)[:, i] for i, s in enumerate(self.last)]).T

    def values(self, t: float) -> np.ndarray:
        """``D_j(t)`` for all neurons (closed form)."""
        own = self.P(t) - self._P_last
        # nb[j, i] = Q(t)[j, i] - Q(t_last^i)[j, i]
        nb = self.Q(t) - self._Q_last
        return own - np.sum(self.coef * nb, axis=1)

    def value(self, j: int, t: float) -> float:
        return float(self.values(t)[j])

    def fire(self, j: int, t: float) -> None:
        self.last[j] = t
        self._P_last[j] = self.P(t)[j]
        self._Q_last[:, j] = self.Q(t)[:, j]

    def next_crossings(self, t: float) -> np.ndarray:
        """Earliest ``s >= t`` with ``D_j(s) >= eps_d`` for each ``j``, absent new events."""
        sched = self.system.schedule
        eps = self.rule.eps_d
        D = self.values(t)
        out = np.full(self.system.n, np.inf)
        pending = D < eps
        out[~pending] = t
        k = int(sched.interval_of(t))
        s = float(t)
        while pending.any() and k < sched.n_intervals:
            end = sched.interval_end(k)
            slope = self.slopes[sched.mode_index[k]]
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.where(slope > 0, s + (eps - D) / slope, np.inf)
            hit = pending & (cand <= end)
            out[hit] = cand[hit]
            pending &= ~hit
            D = D + slope * (end - s)
            s = end
            k += 1
        return out


def arm_decentralized_structure(rule: TriggerRule, xi, system: SwitchingSystem, j: int,
                                t_k_j: float, neighbor_last) -> "ArmedCondition":
    """Arm neuron ``j``'s push condition given every neuron's last trigger time."""
    last = np.array(neighbor_last, float)
    last[j] = t_k_j
    return ArmedCondition(PushCondition(rule, xi, system, last), j)


@dataclass
class ArmedCondition:
    condition: PushCondition
    j: int

    def value(self, t: float) -> float:
        return self.condition.value(self.j, t)

    def next_crossing(self, t: float) -> float:
        return float(self.condition.next_crossings(t)[self.j])

    def neighbor_fired(self, i: int, t: float) -> None:
        self.condition.fire(i, t)


# ----------------------------------------------------- state-dependent rules

def check_state_centralized(rule: TriggerRule, xi, w_now, w_held, t: float) -> str:
    """``"crossing"`` once ``||w(t_k) - w(t)|| > Phi(t)``, else ``"below"``."""
    phi = float(rule.thresholds.global_phi(t))
    if phi <= 0:
        raise DomainError(f"threshold Phi({t}) = {phi} is not positive")
    e = np.asarray(w_held, float) - np.asarray(w_now, float)
    return "crossing" if weighted_norm(e, xi, rule.norm) > phi else "below"


def check_state_decentralized(rule: TriggerRule, i: int, w_i_now: float, w_i_held: float,
                              t: float, n: int | None = None) -> str:
    """Per-neuron test ``|e_i(t)| > Psi_i(t)`` for closed-form thresholds."""
    spec = rule.thresholds
    count = n if n is not None else max(len(spec.functions), i + 1)
    psi = float(spec.per_neuron(t, count)[i])
    if psi <= 0:
        raise DomainError(f"threshold Psi_{i}({t}) = {psi} is not positive")
    return "crossing" if abs(w_i_held - w_i_now) > psi else "below"


def adaptive_delta(alpha: float, beta, T_window: float, w_now, xi, kind, t: float,
                   last_triggers) -> np.ndarray:
    """Per-neuron thresholds of the adaptive push rule at time ``t``.

    ``Psi_i = delta(t) * exp(-beta_i (t - t_k^i))`` with ``delta`` chosen so
    that the weighted norm of ``Psi`` equals ``alpha ||w(t)||``:

        L1   delta = alpha ||w||_1 / sum_i xi_i E_i
        L2   delta = alpha ||w||_2 / sqrt(sum_i xi_i E_i^2)
        Linf delta = alpha min(xi) ||w||_inf / max_i E_i

    with ``E_i = exp(-beta_i (t - t_k^i))``.  Neurons whose last trigger is
    older than the window get a zero threshold (they resample on any error).
    Evaluated at the current ``t`` only.
    """
    xi = check_weights(xi)
    kind = NormKind.parse(kind)
    beta = np.broadcast_to(np.asarray(beta, float), xi.shape)
    age = t - np.asarray(last_triggers, float)
    if np.any(age < 0):
        raise DomainError("last trigger times must not exceed t")
    inside = age <= T_window
    E = np.where(inside, np.exp(-beta * age), 0.0)
    wn = weighted_norm(w_now, xi, kind)
    delta = _delta(alpha, wn, E, xi, kind)
    psi = delta * E
    bound = alpha * wn
    if float(norms(psi, xi, kind)) > bound * (1 + 1e-12) + 1e-300:
        raise AssertionError("adaptive thresholds exceed alpha ||w||")
    return psi


def _delta(alpha, wn, E, xi, kind):
    if wn == 0.0:
        return 0.0
    if kind is NormKind.L1:
        denom = np.sum(xi * E, axis=-1)
    elif kind is NormKind.L2:
        denom = np.sqrt(np.sum(xi * E * E, axis=-1))
    else:
        denom = np.max(E, axis=-1) / np.min(xi)
    return np.where(denom > 0, alpha * wn / np.where(denom > 0, denom, 1.0), 0.0)


def adaptive_delta_grid(spec: AdaptiveDelta, w_norms, xi, kind, times, last) -> np.ndarray:
    """Vectorised :func:`adaptive_delta` over a grid; shape ``(len(times), n)``."""
    times = np.asarray(times, float)[:, None]
    beta = np.broadcast_to(np.asarray(spec.beta, float), xi.shape)
    age = times - last[None, :]
    E = np.where(age <= spec.window, np.exp(-beta * age), 0.0)
    kind = NormKind.parse(kind)
    if kind is NormKind.L1:
        denom = np.sum(xi * E, axis=1)
    elif kind is NormKind.L2:
        denom = np.sqrt(np.sum(xi * E * E, axis=1))
    else:
        denom = np.max(E, axis=1) / np.min(xi)
    safe = np.where(denom > 0, denom, 1.0)
    delta = np.where(denom > 0, spec.alpha * np.asarray(w_norms) / safe, 0.0)
    return delta[:, None] * E


def gamma_fn(k: float) -> float:
    return math.gamma(k)


@dataclass
class RuleSummary:
    protocol: str
    norm: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)
