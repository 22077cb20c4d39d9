"""Event-triggered out-synchronization of switched recurrent networks."""

from .analysis import (BoundSet, FeasibilityReport, NormKind, global_bounds, mu_component,
                       mu_vector, solve_xi, weighted_norm)
from .engine import EventRecord, HeldSamples, IntegratorConfig, hold_integrate, simulate
from .model import (ActivationSpec, Mode, SwitchSchedule, SwitchingSystem, TrajectoryState,
                    build_system, poisson_schedule)
from .presets import preset_paper
from .trace import SimulationTrace
from .triggers import ThresholdSpec, TriggerRule

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec", "BoundSet", "EventRecord", "FeasibilityReport", "HeldSamples",
    "IntegratorConfig", "Mode", "NormKind", "SimulationTrace", "SwitchSchedule",
    "SwitchingSystem", "ThresholdSpec", "TrajectoryState", "TriggerRule", "build_system",
    "global_bounds", "hold_integrate", "mu_component", "mu_vector", "poisson_schedule",
    "preset_paper", "simulate", "solve_xi", "weighted_norm",
]
