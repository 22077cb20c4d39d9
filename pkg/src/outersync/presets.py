"""Shipped example systems and their recommended run parameters."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .analysis import NormKind
from .errors import DomainError
from .model import ActivationSpec, Mode, SwitchSchedule, SwitchingSystem, poisson_schedule
from .triggers import AdaptiveDelta, ExpGamma, RationalDecay, ThresholdSpec

PRESETS = ("sec6-5neuron", "sec31-2neuron")
THRESHOLD_PRESETS = ("sec6-thresholds",)

# default eps0 targets for the 5-neuron preset, inside the per-norm feasible maxima
SEC6_EPS0 = {"l1": 0.05, "l2": 0.03, "linf": 0.015}


def _load(name: str) -> dict:
    fname = name.replace("-", "_") + ".json"
    return json.loads(resources.files("outersync.data").joinpath(fname).read_text())


def preset_checksum(name: str) -> str:
    """SHA-256 over the float64 bytes of every mode's (gamma, A, I)."""
    h = hashlib.sha256()
    for m in preset_modes(name):
        for arr in (m.gamma, m.A, m.I):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def preset_modes(name: str) -> tuple:
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {PRESETS}")
    data = _load(name)
    return tuple(Mode(m["gamma"], m["A"], m["I"]) for m in data["modes"])


def preset_activation(name: str) -> ActivationSpec:
    data = _load(name)
    n = data["n"]
    if name == "sec31-2neuron":
        g = np.array(data["gains"])
        return ActivationSpec("piecewise-linear", n, slope=g, lo=-1.0, hi=1.0)
    return ActivationSpec("sigmoid", n)


def sec6_thresholds() -> dict:
    """Global ``Phi`` and the five per-neuron ``Psi_i`` of the 5-neuron example."""
    phi = RationalDecay(8000.0, 0.0065, 6.5, 5.0)
    psi = (RationalDecay(27000.0, 0.007, 0.68, 6.0),
           RationalDecay(90000.0, 0.01, 1.27, 6.0),
           RationalDecay(80000.0, 0.012, 1.02, 6.0),
           ExpGamma(100.0, 0.01, 1.0, 700.0 * math.gamma(2)),
           RationalDecay(2100.0, 0.005, 0.5, 6.0))
    return {"phi": ThresholdSpec((phi,), name="sec6-thresholds/phi"),
            "psi": ThresholdSpec(psi, name="sec6-thresholds/psi")}


def threshold_preset(name: str, which: str) -> ThresholdSpec:
    if name != "sec6-thresholds":
        raise DomainError(f"unknown threshold preset {name!r}")
    return sec6_thresholds()[which]


@dataclass
class PresetParams:
    eps_c: float = 0.01
    eps_d: float = 0.02
    alpha: float = 0.2
    beta: float = 1.0
    window: float = 500.0
    horizon: float = 500.0
    switch_rate: float = 1.0
    eps0: dict = field(default_factory=lambda: dict(SEC6_EPS0))

    def eps0_for(self, kind) -> float:
        return self.eps0[NormKind.parse(kind).value]

    def adaptive(self, n: int) -> ThresholdSpec:
        return ThresholdSpec(adaptive=AdaptiveDelta(self.alpha, (self.beta,) * n, self.window),
                             name="adaptive-delta")

    def to_dict(self):
        return {"eps_c": self.eps_c, "eps_d": self.eps_d, "alpha": self.alpha,
                "beta": self.beta, "window": self.window, "horizon": self.horizon,
                "switch_rate": self.switch_rate, "eps0": dict(self.eps0)}


def preset_schedule(name: str, horizon: float, seed: int) -> SwitchSchedule:
    n_modes = len(preset_modes(name))
    if name == "sec31-2neuron":
        return SwitchSchedule.cyclic(1.0, horizon, n_modes)
    return poisson_schedule(1.0, horizon, n_modes, seed)


def preset_paper(name: str, seed: int = 7, horizon: float | None = None):
    """Return ``(system, params)`` for a shipped example.

    ``sec6-5neuron`` switches at the events of a rate-1 Poisson process with
    uniformly drawn modes; ``sec31-2neuron`` alternates its two intervals
    with unit dwell time.
    """
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {PRESETS}")
    params = PresetParams()
    if horizon is not None:
        params.horizon = float(horizon)
    if name == "sec31-2neuron":
        params.eps0 = {"l1": 0.04, "l2": 0.01, "linf": 0.01}
    system = SwitchingSystem(preset_modes(name), preset_schedule(name, params.horizon, seed),
                             preset_activation(name))
    return system, params


def initial_pair(n: int, seed: int):
    """Seeded initial values ``u0, v0 ~ U[-1, 1]^n``."""
    rng = np.random.default_rng([seed, 2])
    return rng.uniform(-1.0, 1.0, n), rng.uniform(-1.0, 1.0, n)
