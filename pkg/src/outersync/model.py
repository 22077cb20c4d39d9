"""Switched recurrent network plant.

Each trajectory obeys

    du_i/dt = -gamma_i(t) u_i + sum_j a_ij(t) g_j(u_j) + I_i(t)

with piecewise-constant coefficients selected by a switching schedule.  The
sampled-data variants only change *which* value of ``u`` feeds the right hand
side, so everything here is shared by the engine and the analysis code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, ValidationError

SECANT_PAIRS = 10_000
SECANT_TOL = 1e-12


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mode:
    """One constant coefficient triple (gamma, A, I)."""

    gamma: np.ndarray
    A: np.ndarray
    I: np.ndarray

    def __post_init__(self):
        gamma = _readonly(self.gamma)
        A = _readonly(self.A)
        I = _readonly(self.I)
        n = gamma.shape[0] if gamma.ndim == 1 else -1
        if gamma.ndim != 1 or A.shape != (n, n) or I.shape != (n,):
            raise ValidationError(
                f"mode dimensions disagree: gamma {gamma.shape}, A {A.shape}, I {I.shape}")
        if not np.all(gamma > 0):
            raise ValidationError(f"self-decay rates must be positive, got {gamma}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(I))):
            raise ValidationError("mode coefficients must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "I", I)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Mode):
            return NotImplemented
        return (np.array_equal(self.gamma, other.gamma) and np.array_equal(self.A, other.A)
                and np.array_equal(self.I, other.I))

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class SwitchSchedule:
    """Right-continuous switching signal on ``[0, horizon]``.

    Interval ``k`` is ``[breakpoints[k], breakpoints[k+1])`` and runs mode
    ``mode_index[k]``; the last interval extends to the horizon.
    """

    breakpoints: np.ndarray
    mode_index: np.ndarray
    horizon: float

    def __post_init__(self):
        bp = _readonly(self.breakpoints)
        idx = np.array(self.mode_index, dtype=np.int64)
        idx.setflags(write=False)
        horizon = float(self.horizon)
        if bp.ndim != 1 or bp.size == 0 or bp[0] != 0.0:
            raise ValidationError("breakpoints must be a non-empty sequence starting at 0")
        if np.any(np.diff(bp) <= 0):
            raise ValidationError("breakpoints must be strictly increasing")
        if not horizon > bp[-1]:
            raise ValidationError("last breakpoint must precede the horizon")
        if idx.shape != bp.shape:
            raise ValidationError("one mode index per breakpoint is required")
        if np.any(idx < 0):
            raise ValidationError("mode indices must be non-negative")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "mode_index", idx)
        object.__setattr__(self, "horizon", horizon)

    @classmethod
    def constant(cls, horizon: float, mode: int = 0) -> "SwitchSchedule":
        return cls([0.0], [mode], horizon)

    @classmethod
    def cyclic(cls, dwell: float, horizon: float, n_modes: int, start: int = 0):
        """Deterministic round-robin schedule with a fixed dwell time."""
        if dwell <= 0 or horizon <= 0:
            raise DomainError("dwell and horizon must be positive")
        bp = np.arange(0.0, horizon, dwell)
        return cls(bp, (start + np.arange(bp.size)) % n_modes, horizon)

    @property
    def n_intervals(self) -> int:
        return self.breakpoints.size

    def interval_of(self, t):
        """Index of the interval containing ``t`` (vectorised, right-continuous)."""
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        return k

    def interval_end(self, k: int) -> float:
        return float(self.breakpoints[k + 1]) if k + 1 < self.n_intervals else self.horizon

    def widths(self) -> np.ndarray:
        return np.diff(np.append(self.breakpoints, self.horizon))

    def __eq__(self, other):
        if not isinstance(other, SwitchSchedule):
            return NotImplemented
        return (self.horizon == other.horizon
                and np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.mode_index, other.mode_index))

    __hash__ = object.__hash__


def poisson_schedule(rate: float, horizon: float, n_modes: int, seed: int,
                     selection: str = "uniform") -> SwitchSchedule:
    """Switching instants from a Poisson process of the given rate.

    Gaps are drawn one at a time with ``rng.exponential(1/rate)`` until the
    horizon is passed; afterwards one mode per interval is drawn with
    ``rng.integers(0, n_modes)`` (``selection="uniform"``) or the modes are
    visited in order starting from a uniformly drawn one (``"cyclic"``).
    """
    if not rate > 0:
        raise DomainError(f"rate must be positive, got {rate}")
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if n_modes < 1:
        raise DomainError("need at least one mode")
    rng = np.random.default_rng(seed)
    bps = [0.0]
    scale = 1.0 / rate
    while True:
        t = bps[-1] + rng.exponential(scale)
        if t >= horizon:
            break
        bps.append(t)
    if selection == "uniform":
        modes = rng.integers(0, n_modes, size=len(bps))
    elif selection == "cyclic":
        start = int(rng.integers(0, n_modes))
        modes = (start + np.arange(len(bps))) % n_modes
    else:
        raise DomainError(f"unknown mode selection {selection!r}")
    return SwitchSchedule(np.array(bps), modes, horizon)


ACTIVATION_KINDS = ("sigmoid", "piecewise-linear", "custom-table")


@dataclass(frozen=True, eq=False)
class ActivationSpec:
    """Per-neuron activations with slope bounds ``0 <= secant <= G_i``.

    kind="sigmoid"            g(x) = 1 / (1 + exp(-s x)); ``slope`` s defaults to 1, G = s/4.
    kind="piecewise-linear"   g(x) = s * clip(x, lo, hi); G = s.
    kind="custom-table"       monotone linear interpolation of ``table_x``/``table_y``;
                              gains must be declared.

    Declared ``gains`` for the first two kinds are accepted if they are not
    below the true bound; every declaration is checked by randomized secants.
    """

    kind: str
    n: int
    gains: np.ndarray | None = None
    slope: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    table_x: np.ndarray | None = None
    table_y: np.ndarray | None = None
    seed: int = 0
    _declared: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValidationError(f"unknown activation kind {self.kind!r}")
        n = int(self.n)
        if n < 1:
            raise ValidationError("activation needs n >= 1")
        put = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        put("n", n)
        slope = np.broadcast_to(np.asarray(1.0 if self.slope is None else self.slope, float), (n,))
        put("slope", _readonly(slope))
        if self.kind in ("sigmoid", "piecewise-linear") and not np.all(self.slope > 0):
            raise ValidationError("activation slopes must be positive")
        put("lo", _readonly(np.broadcast_to(
            np.asarray(-np.inf if self.lo is None else self.lo, float), (n,))))
        put("hi", _readonly(np.broadcast_to(
            np.asarray(np.inf if self.hi is None else self.hi, float), (n,))))
        if np.any(self.lo >= self.hi):
            raise ValidationError("saturation bounds need lo < hi")
        if self.kind == "custom-table":
            if self.table_x is None or self.table_y is None or self.gains is None:
                raise ValidationError("custom-table activations need table_x, table_y and gains")
            tx = np.atleast_2d(np.asarray(self.table_x, float))
            ty = np.atleast_2d(np.asarray(self.table_y, float))
            tx = np.broadcast_to(tx, (n, tx.shape[1]))
            ty = np.broadcast_to(ty, (n, ty.shape[1]))
            if tx.shape != ty.shape or tx.shape[1] < 2:
                raise ValidationError("table_x and table_y must have matching length >= 2")
            if np.any(np.diff(tx, axis=1) <= 0):
                raise ValidationError("table_x must be strictly increasing")
            if np.any(np.diff(ty, axis=1) < 0):
                raise ValidationError("table_y must be nondecreasing (monotone activation)")
            put("table_x", _readonly(tx))
            put("table_y", _readonly(ty))
        natural = {"sigmoid": self.slope / 4.0, "piecewise-linear": self.slope}.get(self.kind)
        if self.gains is None:
            put("gains", _readonly(natural))
        else:
            gains = np.broadcast_to(np.asarray(self.gains, float), (n,))
            if not np.all(gains > 0):
                raise ValidationError("declared gains must be positive")
            put("gains", _readonly(gains))
            put("_declared", True)
            validate_secants(self)

    def __call__(self, x, i=None):
        """Evaluate all neurons on a length-n vector, or neuron ``i`` on any array."""
        x = np.asarray(x, dtype=float)
        if i is None:
            return self._eval(x, slice(None))
        return self._eval(x, i)

    def _eval(self, x, i):
        if self.kind == "sigmoid":
            return expit(self.slope[i] * x)
        if self.kind == "piecewise-linear":
            return self.slope[i] * np.clip(x, self.lo[i], self.hi[i])
        if isinstance(i, slice):
            return np.array([np.interp(x[k], self.table_x[k], self.table_y[k])
                             for k in range(self.n)])
        return np.interp(x, self.table_x[i], self.table_y[i])

    def difference(self, u, w):
        """``g(u) - g(u - w)`` per neuron, accurate when ``w`` is tiny.

        For the logistic function the difference is rewritten through
        ``tanh`` so no cancellation occurs; the two trajectories can then be
        tracked as ``(u, w)`` down to very small separations.
        """
        u = np.asarray(u, float)
        w = np.asarray(w, float)
        if self.kind != "sigmoid":
            return self(u) - self(u - w)
        s = self.slope
        v = u - w
        direct = expit(s * u) - expit(s * v)
        with np.errstate(over="ignore", invalid="ignore"):
            smooth = 0.5 * np.sinh(0.5 * s * w) / (np.cosh(0.5 * s * u) * np.cosh(0.5 * s * v))
        use_smooth = np.abs(s * w) < 20.0
        out = np.where(use_smooth & np.isfinite(smooth), smooth, direct)
        return out


def validate_secants(spec: ActivationSpec, pairs: int = SECANT_PAIRS, tol: float = SECANT_TOL,
                     seed: int | None = None) -> float:
    """Randomized check that every sampled secant lies in ``[0, G_i + tol]``.

    Returns the largest secant-to-gain excess found (<= tol on success).
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    worst = -np.inf
    for i in range(spec.n):
        if spec.kind == "custom-table":
            lo, hi = spec.table_x[i][0] - 1.0, spec.table_x[i][-1] + 1.0
        else:
            width = 8.0 / spec.slope[i]
            lo, hi = -width, width
        x = rng.uniform(lo, hi, pairs)
        y = rng.uniform(lo, hi, pairs)
        # half the pairs are close together to probe the local slope
        y[: pairs // 2] = x[: pairs // 2] + rng.normal(0.0, 1e-3, pairs // 2)
        keep = x != y
        x, y = x[keep], y[keep]
        gx, gy = spec(x, i), spec(y, i)
        sec = (gx - gy) / (x - y)
        # rounding in the difference quotient, large for close pairs
        slack = tol + 8 * np.finfo(float).eps * (
            (np.abs(gx) + np.abs(gy)) / np.abs(x - y) + np.abs(sec))
        if np.any(sec < -slack):
            raise ValidationError(f"activation {i} is not monotone (secant {sec.min():.3g})")
        over = sec - spec.gains[i] - slack
        excess = float(np.max(sec - spec.gains[i]))
        if np.any(over > 0):
            raise ValidationError(
                f"declared gain G_{i}={spec.gains[i]:.6g} violated by sampled secant "
                f"{np.max(sec):.6g}")
        worst = max(worst, excess)
    return worst


def activation_eval(spec: ActivationSpec, i: int, x) -> float:
    if not 0 <= i < spec.n:
        raise DomainError(f"neuron index {i} out of range for n={spec.n}")
    return spec(x, i)


def activation_gain_bound(spec: ActivationSpec, i: int) -> float:
    if not 0 <= i < spec.n:
        raise DomainError(f"neuron index {i} out of range for n={spec.n}")
    return float(spec.gains[i])


@dataclass(frozen=True, eq=False)
class SwitchingSystem:
    """A finite mode set driven by a switching schedule."""

    modes: tuple
    schedule: SwitchSchedule
    activation: ActivationSpec

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(**m) for m in self.modes)
        if not modes:
            raise ValidationError("a system needs at least one mode")
        n = modes[0].n
        if any(m.n != n for m in modes):
            raise ValidationError("all modes must share the same neuron count")
        if self.activation.n != n:
            raise ValidationError(f"activation is for n={self.activation.n}, modes have n={n}")
        if self.schedule.mode_index.max() >= len(modes):
            raise ValidationError("schedule refers to a mode that does not exist")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "gammas", _readonly([m.gamma for m in modes]))
        object.__setattr__(self, "As", _readonly([m.A for m in modes]))
        object.__setattr__(self, "Is", _readonly([m.I for m in modes]))

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def horizon(self) -> float:
        return self.schedule.horizon

    @property
    def gains(self) -> np.ndarray:
        return self.activation.gains

    def with_schedule(self, schedule: SwitchSchedule) -> "SwitchingSystem":
        return SwitchingSystem(self.modes, schedule, self.activation)

    def mode_at(self, t) -> int:
        """Index into ``modes`` active at time ``t``."""
        return int(self.schedule.mode_index[self.schedule.interval_of(t)])

    def integral(self, rates) -> "PiecewiseIntegral":
        """Cumulative integral of a per-mode quantity along the schedule."""
        return PiecewiseIntegral(self.schedule, np.asarray(rates, float))


def eval_coefficients(system: SwitchingSystem, t: float) -> Mode:
    if not 0.0 <= t <= system.horizon:
        raise DomainError(f"t={t} outside [0, {system.horizon}]")
    return system.modes[system.mode_at(t)]


class PiecewiseIntegral:
    """``F(t) = integral_0^t r_{sigma(s)} ds`` for per-mode rates ``r``.

    ``rates`` has shape ``(n_modes, ...)``; ``F`` returns the trailing shape.
    Exact up to rounding since the integrand is constant between breakpoints.
    """

    def __init__(self, schedule: SwitchSchedule, rates: np.ndarray):
        self.schedule = schedule
        self.rates = rates[schedule.mode_index]
        widths = schedule.widths().reshape((-1,) + (1,) * (rates.ndim - 1))
        self.cum = np.concatenate([np.zeros((1,) + rates.shape[1:]),
                                   np.cumsum(self.rates * widths, axis=0)])

    def __call__(self, t):
        if np.ndim(t) == 0:
            k = int(np.searchsorted(self.schedule.breakpoints, t, side="right")) - 1
            k = min(max(k, 0), self.schedule.n_intervals - 1)
            return self.cum[k] + self.rates[k] * (t - self.schedule.breakpoints[k])
        k = self.schedule.interval_of(t)
        k = np.clip(k, 0, self.schedule.n_intervals - 1)
        dt = np.asarray(t) - self.schedule.breakpoints[k]
        if np.ndim(t) == 0:
            return self.cum[k] + self.rates[k] * dt
        dt = dt.reshape(dt.shape + (1,) * (self.rates.ndim - 1))
        return self.cum[k] + self.rates[k] * dt

    def between(self, a, b):
        return self(b) - self(a)


@dataclass
class TrajectoryState:
    """Pair state at time ``t``.

    The pair is stored as ``u`` and the difference ``w = u - v`` so that the
    synchronization error keeps full relative precision; ``v`` is derived.
    """

    t: float
    u: np.ndarray
    w: np.ndarray

    @classmethod
    def from_pair(cls, t, u, v):
        u = np.array(u, float)
        return cls(float(t), u, u - np.asarray(v, float))

    @property
    def v(self) -> np.ndarray:
        return self.u - self.w

    def copy(self) -> "TrajectoryState":
        return TrajectoryState(self.t, self.u.copy(), self.w.copy())


def as_vector(x, n: int, name: str = "vector") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DomainError(f"{name} must have shape ({n},), got {x.shape}")
    return x


def build_system(modes: Sequence, schedule: SwitchSchedule, activation=None) -> SwitchingSystem:
    """Convenience constructor; ``activation`` defaults to the standard logistic."""
    modes = tuple(m if isinstance(m, Mode) else Mode(**m) for m in modes)
    if activation is None:
        activation = ActivationSpec("sigmoid", modes[0].n)
    return SwitchingSystem(modes, schedule, activation)
