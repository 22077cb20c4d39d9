"""Weighted norms, contraction coefficients and weight feasibility.

All coefficients are evaluated per mode; since the coefficient functions are
piecewise constant the suprema and infima over time are exact maxima and
minima over the (finite) set of modes that the schedule actually visits.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DomainError
from .model import Mode, SwitchingSystem

VERIFY_TOL = 1e-12
PERRON_TOL = 1e-13


class NormKind(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, NormKind):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"l1": cls.L1, "1": cls.L1, "l2": cls.L2, "2": cls.L2,
                   "linf": cls.LINF, "linfty": cls.LINF, "inf": cls.LINF, "infinity": cls.LINF}
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown norm kind {value!r}") from None


def check_weights(xi, n: int | None = None) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or (n is not None and xi.shape[0] != n):
        raise DomainError(f"weights must be a vector of length {n}, got shape {xi.shape}")
    if not np.all(xi > 0) or not np.all(np.isfinite(xi)):
        raise DomainError("weights must be strictly positive and finite")
    return xi


def weighted_norm(x, xi, kind) -> float:
    """``sum xi|x|``, ``sqrt(sum xi x^2)`` or ``max |x|/xi``."""
    x = np.asarray(x, dtype=float)
    xi = check_weights(xi)
    if x.shape != xi.shape:
        raise DomainError(f"dimension mismatch: x {x.shape} vs xi {xi.shape}")
    return float(_norm_rows(x, xi, NormKind.parse(kind)))


def _norm_rows(x, xi, kind):
    """Norm along the last axis; ``x`` may be a stack of vectors."""
    ax = np.abs(x)
    if kind is NormKind.L1:
        return np.sum(xi * ax, axis=-1)
    if kind is NormKind.L2:
        # scale by the largest entry so squares of tiny errors do not underflow
        s = np.max(ax, axis=-1, keepdims=True)
        safe = np.where(s > 0, s, 1.0)
        r = ax / safe
        return s[..., 0] * np.sqrt(np.sum(xi * r * r, axis=-1))
    return np.max(ax / xi, axis=-1)


def norms(x, xi, kind) -> np.ndarray:
    """Vectorised :func:`weighted_norm` over the rows of ``x``."""
    return _norm_rows(np.asarray(x, float), check_weights(xi), NormKind.parse(kind))


def _parts(mode: Mode, gains):
    gains = np.asarray(gains, dtype=float)
    A = mode.A
    absA = np.abs(A)
    off = absA - np.diag(np.diag(absA))
    diag = np.diag(A)
    return gains, off, diag


def mu_vector(mode: Mode, gains, xi, kind) -> np.ndarray:
    """All ``mu_{m,j}`` of one mode.

    L1   : gamma_j - G_j a_jj^+ - G_j sum_{i!=j} (xi_i/xi_j)|a_ij|
    L2   : gamma_j - G_j a_jj^+ - 1/2 sum_{i!=j} [G_i|a_ji| + G_j (xi_i/xi_j)|a_ij|]
    Linf : gamma_j - G_j a_jj^+ - G_j sum_{i!=j} (xi_i/xi_j)|a_ji|
    """
    kind = NormKind.parse(kind)
    G, off, diag = _parts(mode, gains)
    xi = check_weights(xi, mode.n)
    base = mode.gamma - G * np.maximum(diag, 0.0)
    if kind is NormKind.L1:
        return base - G * (off.T @ xi) / xi
    if kind is NormKind.L2:
        return base - 0.5 * (off @ G + G * (off.T @ xi) / xi)
    return base - G * (off @ xi) / xi


def mu_component(mode: Mode, gains, xi, kind, j: int) -> float:
    if not 0 <= j < mode.n:
        raise DomainError(f"neuron index {j} out of range for n={mode.n}")
    return float(mu_vector(mode, gains, xi, kind)[j])


def amplification_vector(mode: Mode, gains, xi, kind) -> np.ndarray:
    """Error-amplification coefficients: every subtracted term of mu added instead."""
    kind = NormKind.parse(kind)
    G, off, diag = _parts(mode, gains)
    xi = check_weights(xi, mode.n)
    base = mode.gamma + G * np.maximum(diag, 0.0)
    if kind is NormKind.L1:
        return base + G * (off.T @ xi) / xi
    if kind is NormKind.L2:
        return base + 0.5 * (off @ G + G * (off.T @ xi) / xi)
    return base + G * (off @ xi) / xi


def nu(mode: Mode, gains) -> float:
    """``max_j gamma_j - G_j min(a_jj, 0)``."""
    G = np.asarray(gains, float)
    return float(np.max(mode.gamma - G * np.minimum(np.diag(mode.A), 0.0)))


def hold_rate_vector(mode: Mode, gains) -> np.ndarray:
    """``gamma_j - G_j a_jj^+``, the own-decay integrand of the push rules (L1/Linf)."""
    G = np.asarray(gains, float)
    return mode.gamma - G * np.maximum(np.diag(mode.A), 0.0)


def _visited_modes(system: SwitchingSystem) -> list[int]:
    return sorted(set(int(k) for k in system.schedule.mode_index))


@dataclass
class BoundSet:
    """Suprema/infima of the coefficient functions over the visited modes."""

    kind: str
    M: float
    N: float
    Lambda: float
    eps0: float
    status: str = "ok"

    def to_dict(self):
        return asdict(self)


def global_bounds(system: SwitchingSystem, xi, kind, modes=None) -> BoundSet:
    """``M = max nu``, ``N = max mu``, ``eps0 = min mu`` and ``Lambda = max amplification``.

    ``modes`` restricts the computation to a subset of mode indices; by
    default only the modes visited by the schedule count.
    """
    kind = NormKind.parse(kind)
    xi = check_weights(xi, system.n)
    idx = _visited_modes(system) if modes is None else list(modes)
    G = system.gains
    mus = np.array([mu_vector(system.modes[k], G, xi, kind) for k in idx])
    amps = np.array([amplification_vector(system.modes[k], G, xi, kind) for k in idx])
    M = max(nu(system.modes[k], G) for k in idx)
    eps0 = float(mus.min())
    return BoundSet(kind.value, float(M), float(mus.max()), float(amps.max()), eps0,
                    "ok" if eps0 > 0 else "condition violated")


def min_mu(system: SwitchingSystem, xi, kind, modes=None) -> float:
    idx = _visited_modes(system) if modes is None else list(modes)
    return float(min(mu_vector(system.modes[k], system.gains, xi, kind).min() for k in idx))


# --------------------------------------------------------------------------
# feasibility of  mu_{m,j}(xi) >= eps0  for all modes m and neurons j
#
# Multiplying by xi_j turns every variant into a linear system
#     (d_{m,j} - eps0) xi_j >= (K_m xi)_j,   K_m >= 0 with zero diagonal,
# so Perron-Frobenius theory applies to all three norms.
# --------------------------------------------------------------------------

def linear_form(mode: Mode, gains, kind):
    """Return ``(d, K)`` with ``mu_j(xi) xi_j = d_j xi_j - (K xi)_j``."""
    kind = NormKind.parse(kind)
    G, off, diag = _parts(mode, gains)
    d = mode.gamma - G * np.maximum(diag, 0.0)
    if kind is NormKind.L1:
        return d, G[:, None] * off.T
    if kind is NormKind.L2:
        return d - 0.5 * (off @ G), 0.5 * G[:, None] * off.T
    return d, G[:, None] * off


def perron_root(C, tol: float = PERRON_TOL, max_iter: int = 10_000):
    """Power iteration on ``C + I`` with Collatz-Wielandt bracketing.

    Returns ``(rho, vector, (lower, upper), converged)`` where ``vector`` is
    normalised to sum 1 and ``lower <= rho(C) <= upper`` rigorously whenever
    the vector is strictly positive.
    """
    C = np.asarray(C, float)
    n = C.shape[0]
    B = C + np.eye(n)
    x = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        y = B @ x
        y /= y.sum()
        if np.max(np.abs(y - x)) < tol:
            x = y
            converged = True
            break
        x = y
    Cx = C @ x
    pos = x > 0
    if np.all(pos):
        ratios = Cx / x
        lower, upper = float(ratios.min()), float(ratios.max())
    else:
        lower, upper = 0.0, np.inf
    rho = float(np.max(np.abs(np.linalg.eigvals(C)))) if n <= 64 else float(x @ Cx / (x @ x))
    return rho, x, (lower, upper), converged


@dataclass
class FeasibilityReport:
    """Outcome of :func:`solve_xi`.  ``status`` is feasible, infeasible or undecided."""

    kind: str
    eps0_target: float
    status: str
    xi: list | None
    certificate: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self):
        return asdict(self)


def _verify(forms, xi, eps0):
    worst = np.inf
    where = None
    for m, (d, K) in forms.items():
        mu = d - (K @ xi) / xi
        j = int(np.argmin(mu))
        if mu[j] < worst:
            worst, where = float(mu[j]), (m, j)
    return worst, where


def solve_xi(system: SwitchingSystem, kind, eps0_target: float, modes=None,
             max_iter: int = 10_000) -> FeasibilityReport:
    """Decide whether one weight vector makes every ``mu_{m,j} >= eps0_target``.

    1. Any ``d_{m,j} <= eps0`` is an immediate, certified infeasibility.
    2. The conservative single matrix ``C = max_m K_m / min_m (d_m - eps0)``
       is tested by Perron iteration; ``rho(C) < 1`` yields weights.  With a
       single mode this test is exact and ``rho > 1`` is a certificate.
    3. Otherwise an LP maximises the smallest constraint slack over the
       simplex; a negative optimum certifies infeasibility, with the dual
       multipliers as Farkas certificate.

    Feasible outputs are re-verified by direct evaluation of ``mu``.
    """
    kind = NormKind.parse(kind)
    eps0 = float(eps0_target)
    if not eps0 > 0:
        raise DomainError("eps0_target must be positive")
    idx = _visited_modes(system) if modes is None else [int(m) for m in modes]
    G = system.gains
    forms = {m: linear_form(system.modes[m], G, kind) for m in idx}
    n = system.n

    def report(status, xi=None, certificate=None, **residuals):
        return FeasibilityReport(kind.value, eps0, status,
                                 None if xi is None else [float(v) for v in xi],
                                 certificate or {}, residuals)

    for m, (d, K) in forms.items():
        slack = d - eps0
        for j in range(n):
            if slack[j] < 0 or (slack[j] == 0 and K[j].any()):
                return report("infeasible", certificate={
                    "type": "diagonal", "mode": m, "neuron": j,
                    "diagonal_minus_eps0": float(slack[j])})

    D = np.min([d for d, _ in forms.values()], axis=0) - eps0
    Kmax = np.max([K for _, K in forms.values()], axis=0)
    C = Kmax / D[:, None]
    rho, vec, (lo, hi), converged = perron_root(C, max_iter=max_iter)
    if hi < 1.0 or rho < 1.0:
        xi = vec
        if not np.all(xi > 1e-12 * xi.max()):
            # reducible C: the Neumann vector (I - C)^{-1} 1 is strictly positive
            xi = np.linalg.solve(np.eye(n) - C, np.ones(n))
        xi = xi / xi.sum()
        worst, where = _verify(forms, xi, eps0)
        if worst >= eps0 - VERIFY_TOL:
            return report("feasible", xi, {"type": "perron", "perron_root": rho,
                                           "bounds": [lo, hi]},
                          min_mu=worst, argmin=list(where), iterations_converged=converged)
    if len(forms) == 1:
        if lo >= 1.0 or (rho > 1.0 and converged):
            return report("infeasible", certificate={
                "type": "perron", "perron_root": rho, "bounds": [lo, hi],
                "perron_vector": [float(v) for v in vec]})
        return report("undecided", vec, {"type": "perron", "perron_root": rho,
                                         "bounds": [lo, hi]}, converged=converged)
    return _solve_lp(forms, n, eps0, report, perron={"perron_root": rho, "bounds": [lo, hi]})


def _solve_lp(forms, n, eps0, report, perron):
    # variables [xi_1..xi_n, s]; maximise s subject to
    #   (d_mj - eps0) xi_j - (K_m xi)_j >= s,  sum xi = 1,  xi >= 0
    rows, labels = [], []
    for m, (d, K) in forms.items():
        L = np.diag(d - eps0) - K
        for j in range(n):
            rows.append(np.append(-L[j], 1.0))
            labels.append((m, j))
    A_ub = np.array(rows)
    res = linprog(np.append(np.zeros(n), -1.0), A_ub=A_ub, b_ub=np.zeros(len(rows)),
                  A_eq=[np.append(np.ones(n), 0.0)], b_eq=[1.0],
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    if res.status != 0:
        return report("undecided", certificate={"type": "lp", "message": res.message, **perron})
    s = float(-res.fun)
    if s > VERIFY_TOL:
        xi = np.maximum(res.x[:n], 0.0)
        xi = xi / xi.sum()
        worst, where = _verify(forms, xi, eps0)
        if worst >= eps0 - VERIFY_TOL and np.all(xi > 0):
            return report("feasible", xi, {"type": "lp", "margin": s, "conservative": perron},
                          min_mu=worst, argmin=list(where))
        return report("undecided", xi, {"type": "lp", "margin": s},
                      min_mu=worst, argmin=list(where))
    if s < -VERIFY_TOL:
        duals = -np.asarray(res.ineqlin.marginals)
        active = [{"mode": m, "neuron": j, "weight": float(y)}
                  for (m, j), y in zip(labels, duals) if y > 1e-12]
        return report("infeasible", certificate={"type": "farkas", "best_margin": s,
                                                 "multipliers": active, "conservative": perron})
    return report("undecided", res.x[:n], {"type": "lp", "margin": s})


def max_feasible_eps0(system: SwitchingSystem, kind, modes=None, tol: float = 1e-6):
    """Largest ``eps0`` for which :func:`solve_xi` succeeds, by bisection."""
    idx = _visited_modes(system) if modes is None else list(modes)
    kind = NormKind.parse(kind)
    hi = min(float(np.min(linear_form(system.modes[m], system.gains, kind)[0])) for m in idx)
    if hi <= 0:
        return 0.0, None
    lo, best = 0.0, None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        rep = solve_xi(system, kind, mid, modes=idx)
        if rep.feasible:
            lo, best = mid, rep
        else:
            hi = mid
    return lo, best
