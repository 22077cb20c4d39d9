"""Simulation traces and their CSV / JSON serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import NormKind, norms
from .errors import TraceError

NORM_COLUMNS = ("w_norm_l1", "w_norm_l2", "w_norm_linf")


def csv_header(n: int) -> list[str]:
    return (["t"] + [f"u_{i}" for i in range(1, n + 1)] + [f"v_{i}" for i in range(1, n + 1)]
            + list(NORM_COLUMNS) + ["event_flag", "event_neuron"])


@dataclass
class SimulationTrace:
    """Snapshots, event log and held-sample history of one run.

    Snapshot rows are taken on the output grid and at every trigger time;
    ``held_w`` is the held difference vector after any resampling at that
    row, so ``held_w - w`` is the sampling error ``e``.  ``event_neurons``
    holds 1-based neuron indices (``0`` marks a centralized trigger).
    """

    t: np.ndarray
    u: np.ndarray
    w: np.ndarray
    held_w: np.ndarray
    event_flag: np.ndarray
    event_neurons: list
    events: list
    held_history: dict
    config_echo: dict
    rule: object = None
    xi: np.ndarray | None = None
    bounds: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t.size == 0:
            raise TraceError("a trace needs at least one snapshot")
        if np.any(np.diff(self.t) <= 0):
            raise TraceError("snapshot times must be strictly increasing")
        times = [e.t for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise TraceError("events must be time-ordered")

    @property
    def n(self) -> int:
        return self.u.shape[1]

    @property
    def v(self) -> np.ndarray:
        return self.u - self.w

    @property
    def triggers(self) -> list:
        return [e for e in self.events if e.kind != "mode-switch"]

    def trigger_times(self, neuron: int | None = None) -> np.ndarray:
        """Trigger times (excluding t = 0); per neuron for push-based rules."""
        if neuron is None:
            return np.array([e.t for e in self.triggers])
        return np.array([e.t for e in self.triggers if e.neuron in (None, neuron)])

    def counts(self) -> list[int]:
        """Per-neuron number of triggers (centralized triggers count for every neuron)."""
        return [int(self.trigger_times(i).size) for i in range(self.n)]

    def w_norms(self, kind, xi=None) -> np.ndarray:
        xi = np.ones(self.n) if xi is None else xi
        return norms(self.w, xi, NormKind.parse(kind))

    def gaps(self) -> dict:
        """Inter-event gaps: ``{"all": ...}`` for centralized rules, per neuron otherwise."""
        if self.rule is not None and self.rule.is_centralized:
            t = np.concatenate([[0.0], self.trigger_times()])
            return {"all": np.diff(t)}
        return {i: np.diff(np.concatenate([[0.0], self.trigger_times(i)]))
                for i in range(self.n)}

    def summary(self) -> dict:
        gaps = self.gaps()
        flat = np.concatenate([g for g in gaps.values()]) if gaps else np.array([])
        final = {c: float(x) for c, x in zip(NORM_COLUMNS, self._unweighted_norms()[-1])}
        initial = {c: float(x) for c, x in zip(NORM_COLUMNS, self._unweighted_norms()[0])}
        counts = self.counts()
        out = {
            "protocol": self.rule.protocol if self.rule is not None else None,
            "norm": self.rule.norm.value if self.rule is not None else None,
            "event_count": len(self.triggers),
            "per_neuron_counts": counts,
            "mean_per_neuron_count": float(np.mean(counts)),
            "mode_switches": sum(1 for e in self.events if e.kind == "mode-switch"),
            "min_gap": float(flat.min()) if flat.size else None,
            "mean_gap": float(flat.mean()) if flat.size else None,
            "max_gap": float(flat.max()) if flat.size else None,
            "initial_norms": initial,
            "final_norms": final,
            "horizon": float(self.t[-1]),
            "config": self.config_echo,
        }
        if self.meta.get("rule_problems"):
            out["rule_problems"] = list(self.meta["rule_problems"])
        if self.meta.get("oracle_max_dev") is not None:
            out["oracle_max_dev"] = self.meta["oracle_max_dev"]
        return out

    def _unweighted_norms(self) -> np.ndarray:
        ones = np.ones(self.n)
        return np.stack([norms(self.w, ones, k) for k in NormKind], axis=1)

    def to_csv(self, path) -> Path:
        """Write the snapshot table; the config echo goes in ``#`` comment lines first."""
        path = Path(path)
        nrm = self._unweighted_norms()
        v = self.v
        with path.open("w", newline="") as fh:
            fh.write("# config: " + json.dumps(self.config_echo, sort_keys=True) + "\n")
            wr = csv.writer(fh)
            wr.writerow(csv_header(self.n))
            for r in range(self.t.size):
                neurons = ";".join(str(i) for i in self.event_neurons[r])
                wr.writerow([repr(float(self.t[r]))]
                            + [repr(float(x)) for x in self.u[r]]
                            + [repr(float(x)) for x in v[r]]
                            + [repr(float(x)) for x in nrm[r]]
                            + [int(self.event_flag[r]), neurons])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path

    def events_to_json(self) -> list[dict]:
        return [e.to_dict() for e in self.events]


def read_csv(path):
    """Parse a trace CSV back into ``(config, header, rows)``."""
    lines = Path(path).read_text().splitlines()
    config = None
    body = []
    for line in lines:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    return config, rows[0], rows[1:]
