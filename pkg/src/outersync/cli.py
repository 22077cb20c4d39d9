"""Command line interface: ``outersync {simulate,feasibility,reproduce,compare,schedule}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .analysis import NormKind, global_bounds, solve_xi
from .config import RunConfig, config_from_dict, parse_text
from .engine import simulate
from .errors import ConfigError, OutersyncError
from .presets import PRESETS, preset_paper
from .trace import NORM_COLUMNS
from .triggers import PROTOCOLS

BIN_WIDTH = 50.0
RULE_ORDER = PROTOCOLS
ADAPTIVE = "decentralized-state+adaptive"


# ------------------------------------------------------------------- helpers

def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def out_dir(args_out: str | None, cfg_out: str | None = None) -> Path:
    """Output directory; ``OUTERSYNC_OUT`` overrides the flag and the config."""
    path = Path(os.environ.get("OUTERSYNC_OUT") or args_out or cfg_out or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_config(args) -> RunConfig:
    """Merge a config file (if any) with command line flags; flags win."""
    data, lines, source = {}, {}, None
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        data, lines = parse_text(text)
        source = args.config
    if getattr(args, "preset", None):
        data["system"] = {"preset": args.preset}
    rule = dict(data.get("rule") or {})
    for flag, key in (("rule", "protocol"), ("norm", "norm"), ("eps_c", "eps_c"),
                      ("eps_d", "eps_d"), ("eps0", "eps0"), ("thresholds", "thresholds")):
        val = getattr(args, flag, None)
        if val is not None:
            rule[key] = val
    data["rule"] = rule
    for flag in ("seed", "horizon", "out"):
        val = getattr(args, flag, None)
        if val is not None:
            data[flag] = val
    if getattr(args, "xi", None) is not None:
        data["xi"] = [float(x) for x in args.xi.split(",")]
        data.pop("solve_xi", None)
    if getattr(args, "solve_xi", None) is not None:
        data["solve_xi"] = args.solve_xi
        data.pop("xi", None)
    if getattr(args, "override", False):
        data["override"] = True
    integ = dict(data.get("integrator") or {})
    for flag in ("micro_step", "output_dt"):
        val = getattr(args, flag, None)
        if val is not None:
            integ[flag] = val
    if integ:
        data["integrator"] = integ
    return config_from_dict(data, lines, source)


def execute(cfg: RunConfig):
    """Run one configuration; returns ``(trace, system, bounds, feasibility)``."""
    system = cfg.build_system()
    rule = cfg.build_rule(system.n)
    xi, feas = cfg.resolve_xi(system)
    u0, v0 = cfg.initial(system.n)
    echo = cfg.to_dict()
    echo["resolved"] = {"xi": xi.tolist(), "u0": u0.tolist(), "v0": v0.tolist(),
                        "feasibility": feas.to_dict() if feas is not None else None}
    trace = simulate(system, rule, xi, u0, v0, cfg.integrator, override=cfg.override,
                     config_echo=echo)
    return trace, system, trace.bounds, feas


def diagnostics_for(trace, system, bounds) -> list[dict]:
    return [r.to_dict() for r in diag.run_all(trace, system, bounds)]


def fit_summary(trace, kind, window=(50.0, 450.0)):
    t, s = diag.sync_error_series(trace, None, kind)
    lo, hi = window
    if t[-1] < hi:
        lo, hi = 0.1 * t[-1], 0.9 * t[-1]
    try:
        rate, r2 = diag.rate_fit(t, s, (lo, hi))
    except OutersyncError:
        rate, r2 = None, None
    return {"window": [lo, hi], "rate": rate, "r_squared": r2,
            "final_over_initial": float(s[-1] / s[0]) if s[0] > 0 else None}


PLOT_TEMPLATE = """# gnuplot script: log synchronization error of {csv}
set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set logscale y
set xlabel 't'
set ylabel '||u - v||'
set terminal pngcairo size 900,600
set output '{png}'
plot '{csv}' using 1:(column('w_norm_l1')) with lines title 'l1', \\
     '' using 1:(column('w_norm_l2')) with lines title 'l2', \\
     '' using 1:(column('w_norm_linf')) with lines title 'linf'
"""


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    cfg = build_config(args)
    trace, system, bounds, _ = execute(cfg)
    out = out_dir(args.out, cfg.out)
    trace.to_csv(out / "trace.csv")
    summary = trace.summary()
    summary["bounds"] = bounds.to_dict()
    summary["fit"] = fit_summary(trace, cfg.rule["norm"])
    _dump(out / "summary.json", summary)
    _dump(out / "diagnostics.json", {"config": trace.config_echo,
                                     "reports": diagnostics_for(trace, system, bounds)})
    (out / "plot.gp").write_text(PLOT_TEMPLATE.format(csv="trace.csv", png="trace.png"))
    print(f"{trace.rule.protocol} [{trace.rule.norm.value}]: {summary['event_count']} triggers, "
          f"final/initial l1 = {summary['fit']['final_over_initial']:.3e}; wrote {out}")
    return 0


def cmd_feasibility(args) -> int:
    cfg = build_config(args)
    system = cfg.build_system()
    kind = cfg.rule["norm"]
    modes = None
    if args.interval is not None:
        if not 1 <= args.interval <= len(system.modes):
            raise ConfigError(f"--interval must lie in 1..{len(system.modes)}", path="interval")
        modes = [args.interval - 1]
    target = args.solve_xi if args.solve_xi is not None else cfg.rule["eps0"]
    rep = solve_xi(system, kind, target, modes=modes)
    body = rep.to_dict()
    if rep.feasible:
        body["bounds"] = global_bounds(system, np.array(rep.xi), kind, modes=modes).to_dict()
    body["config"] = cfg.to_dict()
    body["config"]["interval"] = args.interval
    out = out_dir(args.out, cfg.out)
    _dump(out / "feasibility.json", body)
    print(json.dumps({k: body[k] for k in ("kind", "eps0_target", "status", "xi")}))
    return 0


def _run_named(cfg: RunConfig, name: str):
    """Worker for reproduce/compare: one rule, returns a JSON-ready record."""
    if name == ADAPTIVE:
        run_cfg = cfg.replace(rule={**cfg.rule, "protocol": "decentralized-state",
                                    "thresholds": "adaptive"})
    else:
        run_cfg = cfg.replace(rule={**{k: v for k, v in cfg.rule.items() if k != "thresholds"},
                                    "protocol": name})
    trace, system, bounds, _ = execute(run_cfg)
    kind = run_cfg.rule["norm"]
    stats = diag.zeno_check(trace, bounds, trace.rule)
    counts = trace.counts()
    times = {i: trace.trigger_times(i) for i in range(trace.n)}
    edges = np.arange(0.0, trace.t[-1] + BIN_WIDTH, BIN_WIDTH)
    bins = np.mean([np.histogram(times[i], edges)[0] for i in range(trace.n)], axis=0)
    logs = {k: np.log10(np.maximum(trace.w_norms(k), 1e-320)).tolist() for k in NormKind}
    return {
        "rule": name, "norm": kind, "per_neuron_counts": counts,
        "mean_count": float(np.mean(counts)),
        "event_stats": stats.to_dict(),
        "fit": fit_summary(trace, kind),
        "diagnostics": {r["check"]: r["status"] for r in diagnostics_for(trace, system, bounds)},
        "rule_problems": trace.meta.get("rule_problems", []),
        "bins": bins.tolist(), "bin_edges": edges.tolist(),
        "t": trace.t.tolist(), "log10_error": {k.value: v for k, v in logs.items()},
        "config": trace.config_echo,
    }


def _fan_out(jobs, workers):
    if workers <= 1:
        return [_run_named(c, n) for c, n in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_named, *zip(*jobs)))


def ordering(records: dict) -> dict:
    """Structure rules fire more than state rules; push rules at least as often per neuron."""
    c = {k: records[k]["mean_count"] for k in RULE_ORDER}
    checks = {
        "centralized: structure > state":
            c["centralized-structure"] > c["centralized-state"],
        "decentralized: structure > state":
            c["decentralized-structure"] > c["decentralized-state"],
        "structure: decentralized mean >= centralized":
            c["decentralized-structure"] >= c["centralized-structure"],
        "state: decentralized mean >= centralized":
            c["decentralized-state"] >= c["centralized-state"],
    }
    return {"counts": c, "checks": checks, "holds": all(checks.values())}


def cmd_reproduce(args) -> int:
    if args.preset is None:
        args.preset = "sec6-5neuron"
    base = build_config(args)
    out = out_dir(args.out, base.out)
    kinds = [k.value for k in NormKind] if args.all_norms else [base.rule["norm"]]
    names = list(RULE_ORDER) + ([] if args.no_adaptive else [ADAPTIVE])
    jobs = []
    params = base.params()
    for kind in kinds:
        eps0 = args.eps0 if args.eps0 is not None else params.eps0_for(kind)
        cfg = base.replace(rule={**base.rule, "norm": kind, "eps0": eps0},
                           xi=None if args.xi is None else base.xi,
                           solve_xi=eps0 if args.xi is None else None, override=True)
        jobs += [(cfg, name) for name in names]
    records = _fan_out(jobs, args.jobs)
    by_norm = {}
    for (cfg, name), rec in zip(jobs, records):
        by_norm.setdefault(cfg.rule["norm"], {})[name] = rec
    result = {"config": base.to_dict(), "bin_width": BIN_WIDTH, "norms": {}}
    series_cols, series = ["t"], None
    for kind, recs in by_norm.items():
        table = {name: {k: rec[k] for k in ("per_neuron_counts", "mean_count", "event_stats",
                                             "fit", "diagnostics", "rule_problems", "bins")}
                 for name, rec in recs.items()}
        result["norms"][kind] = {"rules": table, "ordering": ordering(recs),
                                 "bin_edges": next(iter(recs.values()))["bin_edges"]}
        for name, rec in recs.items():
            if series is None:
                series = [rec["t"]]
            for k, vals in rec["log10_error"].items():
                series_cols.append(f"{name}[{kind}]:log10_{k}")
                series.append(vals if len(vals) == len(series[0]) else
                              np.interp(series[0], rec["t"], vals).tolist())
    _dump(out / "reproduce.json", result)
    with (out / "error_series.csv").open("w", newline="") as fh:
        fh.write("# config: " + json.dumps(base.to_dict(), sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(series_cols)
        wr.writerows(zip(*series))
    with (out / "trigger_bins.csv").open("w", newline="") as fh:
        fh.write("# config: " + json.dumps(base.to_dict(), sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["norm", "rule", "bin_start", "bin_end", "mean_triggers_per_neuron"])
        for kind, block in result["norms"].items():
            edges = block["bin_edges"]
            for name, row in block["rules"].items():
                for b, val in enumerate(row["bins"]):
                    wr.writerow([kind, name, edges[b], edges[b + 1], val])
    for kind, block in result["norms"].items():
        print(f"[{kind}]")
        for name, row in block["rules"].items():
            fit = row["fit"]
            print(f"  {name:32s} mean triggers/neuron {row['mean_count']:9.1f}  "
                  f"final/initial {fit['final_over_initial']:.3e}  r2 {fit['r_squared']:.3f}")
        print(f"  ordering holds: {block['ordering']['holds']}")
    print(f"wrote {out}")
    return 0


def cmd_compare(args) -> int:
    if args.preset is None and not args.config:
        args.preset = "sec6-5neuron"
    base = build_config(args)
    out = out_dir(args.out, base.out)
    names = args.rules.split(",") if args.rules else list(RULE_ORDER)
    for name in names:
        if name not in RULE_ORDER and name != ADAPTIVE:
            raise ConfigError(f"unknown rule {name!r}", path="rules")
    cfg = base.replace(override=True)
    records = _fan_out([(cfg, n) for n in names], args.jobs)
    rows = []
    for rec in records:
        st = rec["event_stats"]
        rows.append({"rule": rec["rule"], "norm": rec["norm"], "mean_count": rec["mean_count"],
                     "per_neuron_counts": rec["per_neuron_counts"], "min_gap": st["min_gap"],
                     "mean_gap": st["mean_gap"], "max_gap": st["max_gap"],
                     "lower_bound": st["theoretical_lower_bound"], "zeno": st["status"],
                     "final_over_initial": rec["fit"]["final_over_initial"],
                     "r_squared": rec["fit"]["r_squared"]})
    _dump(out / "compare.json", {"config": cfg.to_dict(), "rows": rows})
    with (out / "compare.csv").open("w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for r in rows:
            wr.writerow({**r, "per_neuron_counts": ";".join(map(str, r["per_neuron_counts"]))})
    for r in rows:
        print(f"{r['rule']:32s} mean {r['mean_count']:9.1f}  min gap {r['min_gap']:.4g}  "
              f"bound {r['lower_bound']:.4g}  {r['zeno']}")
    return 0


def cmd_schedule(args) -> int:
    cfg = build_config(args)
    system = cfg.build_system()
    sched = system.schedule
    out = out_dir(args.out, cfg.out)
    with (out / "schedule.csv").open("w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["start", "end", "mode"])
        for k in range(sched.n_intervals):
            wr.writerow([repr(float(sched.breakpoints[k])), repr(sched.interval_end(k)),
                         int(sched.mode_index[k]) + 1])
    counts = np.bincount(sched.mode_index, minlength=len(system.modes))
    _dump(out / "schedule.json", {"config": cfg.to_dict(), "intervals": int(sched.n_intervals),
                                  "horizon": sched.horizon, "mode_counts": counts.tolist(),
                                  "mean_dwell": float(sched.widths().mean())})
    print(f"{sched.n_intervals} intervals over [0, {sched.horizon}]; mode counts {counts.tolist()}")
    return 0


# -------------------------------------------------------------------- parser

def _common(p, rule=True):
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--preset", choices=PRESETS)
    if rule:
        p.add_argument("--rule", choices=PROTOCOLS)
        p.add_argument("--thresholds", help="sec6-thresholds or adaptive (state rules)")
    p.add_argument("--norm", choices=[k.value for k in NormKind])
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", help="output directory (OUTERSYNC_OUT overrides)")
    p.add_argument("--eps-c", dest="eps_c", type=float)
    p.add_argument("--eps-d", dest="eps_d", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--xi", help="comma separated weights")
    p.add_argument("--solve-xi", dest="solve_xi", type=float, metavar="EPS0",
                   help="solve for weights reaching this eps0")
    p.add_argument("--micro-step", dest="micro_step", type=float)
    p.add_argument("--output-dt", dest="output_dt", type=float)
    p.add_argument("--override", action="store_true",
                   help="run even if the rule's hypotheses fail")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="outersync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one rule and export the trace")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("feasibility", help="search for weights with mu >= eps0")
    _common(p)
    p.add_argument("--interval", type=int, help="restrict to one mode (1-based)")
    p.set_defaults(func=cmd_feasibility)
    p = sub.add_parser("reproduce", help="all four rules on the 5-neuron example")
    _common(p, rule=False)
    p.add_argument("--all-norms", action="store_true")
    p.add_argument("--no-adaptive", action="store_true",
                   help="skip the adaptive-threshold variant of the push state rule")
    p.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1))
    p.set_defaults(func=cmd_reproduce)
    p = sub.add_parser("compare", help="event statistics across rules")
    _common(p, rule=False)
    p.add_argument("--rules", help=f"comma separated subset of {', '.join(RULE_ORDER)}")
    p.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1))
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("schedule", help="emit a switching schedule")
    _common(p, rule=False)
    p.set_defaults(func=cmd_schedule)
    return parser


def run_command(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except OutersyncError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("path", "line", "problems"):
            if getattr(exc, attr, None):
                err[attr] = getattr(exc, attr)
        print(json.dumps(err), file=sys.stderr)
        return 2


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
