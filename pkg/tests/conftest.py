import functools
import time

import numpy as np
import pytest

from outersync.analysis import solve_xi
from outersync.engine import IntegratorConfig, simulate
from outersync.model import Mode
from outersync.presets import initial_pair, preset_paper, sec6_thresholds
from outersync.triggers import TriggerRule

SEED = 7

# two-neuron example: gains, shared decay rates, and the two coupling matrices
G2 = np.array([1.0017, 0.9984])
GAMMA2 = np.array([2.1048, 0.9234])
A2_FIRST = np.array([[1.0235, 0.2538], [0.5014, -0.1526]])
A2_SECOND = np.array([[-0.3253, 0.4384], [-2.0341, -0.1526]])


def two_neuron_modes():
    return Mode(GAMMA2, A2_FIRST, np.zeros(2)), Mode(GAMMA2, A2_SECOND, np.zeros(2))


@functools.lru_cache(maxsize=None)
def five_neuron(seed=SEED, horizon=500.0):
    return preset_paper("sec6-5neuron", seed=seed, horizon=horizon)


@functools.lru_cache(maxsize=None)
def five_neuron_xi(kind="l1", seed=SEED):
    system, params = five_neuron(seed)
    rep = solve_xi(system, kind, params.eps0_for(kind))
    assert rep.feasible, rep
    return np.array(rep.xi)


@functools.lru_cache(maxsize=None)
def five_neuron_run(protocol, kind="l1", thresholds=None, seed=SEED):
    """Cached full-horizon run; returns ``(trace, seconds)``."""
    system, params = five_neuron(seed)
    th = sec6_thresholds()
    spec = {None: None, "phi": th["phi"], "psi": th["psi"],
            "adaptive": params.adaptive(system.n)}[thresholds]
    rule = TriggerRule(protocol, kind, params.eps_c, params.eps_d, params.eps0_for(kind), spec)
    u0, v0 = initial_pair(system.n, seed)
    t0 = time.perf_counter()
    tr = simulate(system, rule, five_neuron_xi(kind, seed), u0, v0, IntegratorConfig(),
                  override=True)
    return tr, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def batched_rk4(gamma, A, I, held_u, held_v, u0, v0, dt, step=1e-5):
    """Classical RK4 over a batch of segments, integrating u and v separately.

    Shapes: gamma, I, held_*, u0, v0 are (B, n); A is (B, n, n); the
    activation is the unit logistic function.
    """
    from scipy.special import expit

    def rhs(h):
        return -gamma * h + np.einsum("bij,bj->bi", A, expit(h)) + I

    steps = int(np.ceil(dt / step - 1e-9))
    h = dt / steps
    out = []
    for y, held in ((u0.copy(), held_u), (v0.copy(), held_v)):
        for _ in range(steps):
            k1 = rhs(held)
            k2 = rhs(held)
            k3 = rhs(held)
            k4 = rhs(held)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y)
    return out


def random_segments(count=100, n=5, seed=2024):
    rng = np.random.default_rng(seed)
    return dict(gamma=rng.uniform(0.5, 1.5, (count, n)), A=rng.normal(0, 1, (count, n, n)),
                I=rng.normal(0, 0.5, (count, n)), u0=rng.uniform(-1, 1, (count, n)),
                v0=rng.uniform(-1, 1, (count, n)), held_u=rng.uniform(-1, 1, (count, n)),
                held_v=rng.uniform(-1, 1, (count, n)))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def report_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
