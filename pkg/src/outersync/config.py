"""Run configuration: loading, validation and defaults.

Configs are YAML or JSON (JSON is read by the same parser).  Schema::

    system:                      # a preset name or an inline definition
      preset: sec6-5neuron
      # modes: [{gamma: [...], A: [[...], ...], I: [...]}, ...]
      # activation: {kind: sigmoid | piecewise-linear | custom-table, slope, gains, lo, hi,
      #              table_x, table_y}
      # schedule: {kind: poisson, rate: 1.0, selection: uniform}
      #           {kind: cyclic, dwell: 1.0} | {kind: constant, mode: 0}
      #           {kind: explicit, breakpoints: [...], modes: [...]}
    rule:
      protocol: centralized-structure
      norm: l1
      eps_c: 0.01
      eps_d: 0.02
      eps0: 0.05                 # defaults to the preset's recommendation for the norm
      thresholds: sec6-thresholds    # or adaptive | {functions: [...]} | {family: adaptive-delta, ...}
    xi: [1, 1, 1, 1, 1]          # exactly one of xi / solve_xi; solve_xi defaults to eps0
    solve_xi: 0.05
    u0: [...]                    # default: seeded uniform on [-1, 1]^n
    v0: [...]
    horizon: 500
    seed: 7
    integrator: {micro_step: 1.0e-3, crossing_tol: 1.0e-10, output_dt: 0.1}
    out: out
    override: false

Every validation error carries the dotted path of the offending field and
its source line.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .analysis import NormKind, solve_xi
from .engine import IntegratorConfig
from .errors import ConfigError, OutersyncError
from .model import (ACTIVATION_KINDS, ActivationSpec, Mode, SwitchSchedule, SwitchingSystem,
                    poisson_schedule)
from .presets import (PRESETS, PresetParams, initial_pair, preset_modes, preset_paper,
                      threshold_preset)
from .triggers import (PROTOCOLS, AdaptiveDelta, ThresholdSpec, TriggerRule, make_threshold)

DEFAULTS = {
    "horizon": 500.0,
    "seed": 7,
    "out": "out",
    "override": False,
    "integrator": {"micro_step": 1e-3, "crossing_tol": 1e-10, "output_dt": 0.1,
                   "oracle_mode": False},
}
TOP_KEYS = {"system", "rule", "xi", "solve_xi", "u0", "v0", "horizon", "seed", "integrator",
            "out", "override"}


# ------------------------------------------------------------ located parsing

def _to_python(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            out[key] = _to_python(v, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_text(text: str):
    """Parse YAML/JSON text into ``(data, line_map)``."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"parse error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if node is None:
        return {}, {}
    lines = {}
    data = _to_python(node, "", lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=lines.get(""))
    return data, lines


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        """Source line of ``path``, or of its nearest recorded ancestor."""
        while path:
            if path in self.lines:
                return self.lines[path]
            m = re.match(r"^(.*)(\[\d+\]|\.[^.\[]+)$", path)
            if not m:
                break
            path = m.group(1)
        return self.lines.get("")

    def fail(self, path, msg):
        raise ConfigError(msg, path=path, line=self.line(path))

    def number(self, value, path, positive=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if not np.isfinite(value):
            self.fail(path, "must be finite")
        if positive and not value > 0:
            self.fail(path, f"must be positive, got {value}")
        return float(value)

    def vector(self, value, path, n=None, positive=False):
        if not isinstance(value, list):
            self.fail(path, "expected a list of numbers")
        out = [self.number(v, f"{path}[{i}]", positive) for i, v in enumerate(value)]
        if n is not None and len(out) != n:
            self.fail(path, f"expected {n} entries, got {len(out)}")
        return out

    def matrix(self, value, path, n):
        if not isinstance(value, list) or len(value) != n:
            self.fail(path, f"expected an {n}x{n} matrix")
        return [self.vector(row, f"{path}[{i}]", n) for i, row in enumerate(value)]


# ----------------------------------------------------------------- RunConfig

@dataclass
class RunConfig:
    system: dict
    rule: dict
    xi: list | None = None
    solve_xi: float | None = None
    u0: list | None = None
    v0: list | None = None
    horizon: float = 500.0
    seed: int = 7
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    out: str = "out"
    override: bool = False
    source: str | None = None

    def __post_init__(self):
        if (self.xi is None) == (self.solve_xi is None):
            raise ConfigError("give exactly one of xi and solve_xi", path="xi")

    # -- builders
    @property
    def preset(self) -> str | None:
        return self.system.get("preset")

    def params(self) -> PresetParams:
        p = PresetParams()
        p.horizon = self.horizon
        if self.preset == "sec31-2neuron":
            p.eps0 = {"l1": 0.04, "l2": 0.01, "linf": 0.01}
        return p

    def build_system(self) -> SwitchingSystem:
        if self.preset:
            system, _ = preset_paper(self.preset, seed=self.seed, horizon=self.horizon)
            return system
        sysd = self.system
        modes = tuple(Mode(m["gamma"], m["A"], m["I"]) for m in sysd["modes"])
        n = modes[0].n
        act = sysd.get("activation", {"kind": "sigmoid"})
        activation = ActivationSpec(act["kind"], n, **{k: v for k, v in act.items() if k != "kind"})
        return SwitchingSystem(modes, build_schedule(sysd.get("schedule", {}), self.horizon,
                                                     len(modes), self.seed), activation)

    def build_rule(self, n: int) -> TriggerRule:
        r = self.rule
        return TriggerRule(r["protocol"], r["norm"], r["eps_c"], r["eps_d"], r["eps0"],
                           build_thresholds(r.get("thresholds"), r["protocol"], n, self.params()))

    def initial(self, n: int):
        if self.u0 is not None and self.v0 is not None:
            return np.array(self.u0, float), np.array(self.v0, float)
        u0, v0 = initial_pair(n, self.seed)
        return (np.array(self.u0, float) if self.u0 is not None else u0,
                np.array(self.v0, float) if self.v0 is not None else v0)

    def resolve_xi(self, system: SwitchingSystem):
        """``(xi, feasibility report or None)``."""
        if self.xi is not None:
            return np.array(self.xi, float), None
        rep = solve_xi(system, self.rule["norm"], self.solve_xi)
        if not rep.feasible:
            raise ConfigError(f"no weights reach eps0 = {self.solve_xi} for norm "
                              f"{self.rule['norm']} (status {rep.status})", path="solve_xi")
        return np.array(rep.xi), rep

    def to_dict(self) -> dict:
        return {"system": copy.deepcopy(self.system), "rule": copy.deepcopy(self.rule),
                "xi": self.xi, "solve_xi": self.solve_xi, "u0": self.u0, "v0": self.v0,
                "horizon": self.horizon, "seed": self.seed,
                "integrator": self.integrator.to_dict(), "out": self.out,
                "override": self.override, "source": self.source}

    def replace(self, **changes) -> "RunConfig":
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        d.update(changes)
        return RunConfig(**d)


def build_schedule(sched: dict, horizon: float, n_modes: int, seed: int) -> SwitchSchedule:
    kind = sched.get("kind", "poisson")
    if kind == "poisson":
        return poisson_schedule(sched.get("rate", 1.0), horizon, n_modes, seed,
                                sched.get("selection", "uniform"))
    if kind == "cyclic":
        return SwitchSchedule.cyclic(sched.get("dwell", 1.0), horizon, n_modes)
    if kind == "constant":
        return SwitchSchedule.constant(horizon, sched.get("mode", 0))
    return SwitchSchedule(sched["breakpoints"], sched["modes"], horizon)


def build_thresholds(spec, protocol: str, n: int, params: PresetParams):
    if protocol not in ("centralized-state", "decentralized-state"):
        return None
    which = "phi" if protocol == "centralized-state" else "psi"
    if spec is None or spec == "sec6-thresholds":
        return threshold_preset("sec6-thresholds", which)
    if spec == "adaptive":
        return params.adaptive(n)
    if isinstance(spec, dict) and spec.get("preset"):
        return threshold_preset(spec["preset"], which)
    if isinstance(spec, dict) and spec.get("family") == "adaptive-delta":
        beta = spec.get("beta", params.beta)
        beta = tuple(np.broadcast_to(np.asarray(beta, float), (n,)))
        return ThresholdSpec(adaptive=AdaptiveDelta(spec.get("alpha", params.alpha), beta,
                                                    spec.get("window", params.window)),
                             name="adaptive-delta")
    fns = [make_threshold(f["family"], **{k: v for k, v in f.items() if k != "family"})
           for f in spec["functions"]]
    return ThresholdSpec(tuple(fns), name=spec.get("name", "custom"))


# ---------------------------------------------------------------- validation

def _validate_system(sysd, ctx: _Ctx):
    if sysd is None:
        return {"preset": "sec6-5neuron"}
    if isinstance(sysd, str):
        sysd = {"preset": sysd}
    if not isinstance(sysd, dict):
        ctx.fail("system", "expected a preset name or a mapping")
    if "preset" in sysd:
        if sysd["preset"] not in PRESETS:
            ctx.fail("system.preset", f"unknown preset {sysd['preset']!r}; choose from {PRESETS}")
        extra = set(sysd) - {"preset"}
        if extra:
            ctx.fail("system", f"a preset system takes no other keys, got {sorted(extra)}")
        return {"preset": sysd["preset"]}
    modes = sysd.get("modes")
    if not isinstance(modes, list) or not modes:
        ctx.fail("system.modes", "an inline system needs a non-empty list of modes")
    out_modes = []
    n = None
    for k, m in enumerate(modes):
        base = f"system.modes[{k}]"
        if not isinstance(m, dict):
            ctx.fail(base, "expected a mapping with gamma, A, I")
        for key in ("gamma", "A", "I"):
            if key not in m:
                ctx.fail(f"{base}.{key}", "missing")
        gamma = ctx.vector(m["gamma"], f"{base}.gamma", n)
        n = len(gamma)
        for i, g in enumerate(gamma):
            if not g > 0:
                ctx.fail(f"{base}.gamma[{i}]", f"self-decay rate must be positive, got {g}")
        out_modes.append({"gamma": gamma, "A": ctx.matrix(m["A"], f"{base}.A", n),
                          "I": ctx.vector(m["I"], f"{base}.I", n)})
    act = sysd.get("activation", {"kind": "sigmoid"})
    if not isinstance(act, dict) or act.get("kind") not in ACTIVATION_KINDS:
        ctx.fail("system.activation.kind", f"activation kind must be one of {ACTIVATION_KINDS}")
    try:
        ActivationSpec(act["kind"], n, **{k: v for k, v in act.items() if k != "kind"})
    except (OutersyncError, TypeError) as exc:
        ctx.fail("system.activation", str(exc))
    sched = sysd.get("schedule", {"kind": "poisson", "rate": 1.0})
    if not isinstance(sched, dict) or sched.get("kind", "poisson") not in (
            "poisson", "cyclic", "constant", "explicit"):
        ctx.fail("system.schedule.kind", "schedule kind must be poisson, cyclic, constant or explicit")
    for key in ("rate", "dwell"):
        if key in sched:
            ctx.number(sched[key], f"system.schedule.{key}", positive=True)
    return {"modes": out_modes, "activation": act, "schedule": sched}


def _validate_rule(rule, ctx: _Ctx, n: int | None, params: PresetParams):
    rule = dict(rule or {})
    protocol = rule.get("protocol", "centralized-structure")
    if protocol not in PROTOCOLS:
        ctx.fail("rule.protocol", f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    try:
        norm = NormKind.parse(rule.get("norm", "l1")).value
    except OutersyncError as exc:
        ctx.fail("rule.norm", str(exc))
    out = {"protocol": protocol, "norm": norm,
           "eps_c": ctx.number(rule.get("eps_c", params.eps_c), "rule.eps_c", True),
           "eps_d": ctx.number(rule.get("eps_d", params.eps_d), "rule.eps_d", True),
           "eps0": ctx.number(rule.get("eps0", params.eps0_for(norm)), "rule.eps0", True)}
    for key in ("eps_c", "eps_d"):
        if not out[key] < 1:
            ctx.fail(f"rule.{key}", "must lie in (0, 1)")
    if "thresholds" in rule:
        out["thresholds"] = rule["thresholds"]
    try:
        build_thresholds(out.get("thresholds"), protocol, n or 1, params)
    except (OutersyncError, KeyError, TypeError) as exc:
        ctx.fail("rule.thresholds", f"invalid thresholds: {exc}")
    return out


def config_from_dict(data: dict, lines: dict | None = None, source: str | None = None) -> RunConfig:
    ctx = _Ctx(lines or {})
    unknown = set(data) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        ctx.fail(key, f"unknown key {key!r}")
    system = _validate_system(data.get("system"), ctx)
    n = len(preset_modes(system["preset"])[0].gamma) if "preset" in system \
        else len(system["modes"][0]["gamma"])
    horizon = ctx.number(data.get("horizon", DEFAULTS["horizon"]), "horizon", True)
    seed = data.get("seed", DEFAULTS["seed"])
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        ctx.fail("seed", f"seed must be a non-negative integer, got {seed!r}")
    params = PresetParams()
    if system.get("preset") == "sec31-2neuron":
        params.eps0 = {"l1": 0.04, "l2": 0.01, "linf": 0.01}
    rule = _validate_rule(data.get("rule"), ctx, n, params)
    xi = data.get("xi")
    solve = data.get("solve_xi")
    if xi is not None and solve is not None:
        ctx.fail("xi", "give exactly one of xi and solve_xi")
    if xi is not None:
        xi = ctx.vector(xi, "xi", n, positive=True)
    else:
        solve = ctx.number(solve if solve is not None else rule["eps0"], "solve_xi", True)
    u0 = ctx.vector(data["u0"], "u0", n) if data.get("u0") is not None else None
    v0 = ctx.vector(data["v0"], "v0", n) if data.get("v0") is not None else None
    integ = dict(DEFAULTS["integrator"])
    given = data.get("integrator") or {}
    if not isinstance(given, dict):
        ctx.fail("integrator", "expected a mapping")
    for key, val in given.items():
        if key not in integ:
            ctx.fail(f"integrator.{key}", f"unknown integrator option {key!r}")
        integ[key] = bool(val) if key == "oracle_mode" else ctx.number(val, f"integrator.{key}", True)
    try:
        icfg = IntegratorConfig(**integ)
    except OutersyncError as exc:
        ctx.fail("integrator", str(exc))
    cfg = RunConfig(system, rule, xi, solve, u0, v0, horizon, seed, icfg,
                    str(data.get("out", DEFAULTS["out"])), bool(data.get("override", False)),
                    source)
    return cfg


def load_config(path) -> RunConfig:
    """Load and eagerly validate a YAML/JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    data, lines = parse_text(text)
    return config_from_dict(data, lines, source=str(path))


def default_config(**overrides) -> RunConfig:
    return config_from_dict(overrides)
