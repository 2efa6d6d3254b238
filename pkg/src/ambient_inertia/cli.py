"""Command-line front-end: ``simulate``, ``estimate``, ``verify`` and ``stats``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as _config
from . import pipeline, systems
from .errors import ConfigError, NumericalError

log = logging.getLogger("ambient_inertia")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def load_config(ref: str) -> _config.RunConfig:
    """A config file path, or the id of a bundled system or scenario."""
    if os.path.exists(ref):
        return _config.load(ref)
    if ref in systems.BUNDLED + systems.SCENARIOS:
        return systems.load_bundled(ref)
    raise ConfigError(f"{ref}: no such file or bundled system "
                      f"({', '.join(systems.BUNDLED + systems.SCENARIOS)})")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _apply_common(cfg, args):
    meas = {}
    if getattr(args, "window_s", None) is not None:
        meas["window_s"] = args.window_s
    if getattr(args, "preset_measurements", None) is not None:
        meas["preset"] = args.preset_measurements
        meas["names"] = None
    if meas:
        cfg = _config.with_overrides(cfg, measurement=meas)
    return cfg


def _write_run_record(out: Path, cfg, extra: dict) -> None:
    (out / "config.yaml").write_text(cfg.dumps())
    doc = pipeline.provenance(cfg)
    doc.update(extra)
    _write_json(out / "run.json", doc)


def _trace_name(seed: int, trial: int) -> str:
    return f"trace_seed{seed}_trial{trial:03d}.csv"


# --------------------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    out = _out_dir(args.out)
    seed = cfg.estimation.seed if args.seed is None else args.seed
    trials = cfg.estimation.trials if args.trials is None else args.trials
    names = pipeline.measurement_names(cfg)
    written = []
    for k in range(trials):
        t0 = time.perf_counter()
        trace = pipeline.simulate_config(cfg, seed=seed, trial=k, names=names, duration_s=args.duration_s)
        path = out / _trace_name(seed, k)
        trace.write(path)
        written.append(path.name)
        log.info("trial %d: %d samples, %d events, %.1f s", k, trace.t.size, len(trace.events),
                 time.perf_counter() - t0)
        for t_ev, label in trace.events:
            log.info("  event t=%g s: %s", t_ev, label)
    _write_run_record(out, cfg, {"command": "simulate", "seed": seed, "trials": trials,
                                 "traces": written})
    print(f"wrote {len(written)} trace(s) to {out}")
    return EXIT_OK


def _analytic_report(cfg, setup):
    from .estimator import EstimateReport, estimate

    meas = pipeline.analytic_variances(cfg, setup)
    w = estimate(setup.problem.with_measured(meas))
    return EstimateReport([w], param_set=setup.problem.names[0].split("_", 1)[0],
                          truth=setup.truth, meta={"analytic": True, "filtered": setup.filtered})


def cmd_estimate(args) -> int:
    from .estimator import trial_statistics, write_summary
    from .sde import SimTrace

    cfg = _apply_common(load_config(args.config), args)
    out = _out_dir(args.out)
    setup = pipeline.build_setup(cfg, filtered=args.filtered, param_set=args.param_set)
    seed = cfg.estimation.seed if args.seed is None else args.seed
    if args.analytic:
        rep = _analytic_report(cfg, setup)
        rep.to_csv(out / "estimates_analytic.csv")
        w = rep.windows[0]
        _write_json(out / "summary.json", {"analytic": True, "estimates": w.estimates,
                                           "truth": setup.truth, "cost": w.cost,
                                           "converged": w.converged, "message": w.message})
        _print_estimates(w.estimates, setup.truth)
        return EXIT_OK if w.converged else EXIT_NUMERICAL

    reports = []
    if args.traces:
        for k, path in enumerate(args.traces):
            trace = SimTrace.read_csv(path)
            reports.append(pipeline.estimate_trace(trace, setup))
    else:
        trials = cfg.estimation.trials if args.trials is None else args.trials
        for k in range(trials):
            trace = pipeline.simulate_config(cfg, seed=seed, trial=k, names=setup.names)
            reports.append(pipeline.estimate_trace(trace, setup))
            log.info("trial %d estimated (%d windows)", k, len(reports[-1].windows))
    files = []
    for k, rep in enumerate(reports):
        name = f"estimates_trial{k:03d}.csv"
        rep.to_csv(out / name)
        files.append(name)
    usable = [r for r in reports if r.windows]
    n_est = sum(len(r.windows) for r in usable)
    extra = {"param_set": setup.problem.names[0].split("_", 1)[0], "filtered": setup.filtered,
             "measurements": setup.observed, "truth": setup.truth, "reports": files,
             "n_windows": n_est,
             "non_converged": sum(not w.converged for r in usable for w in r.windows)}
    if n_est >= 4:
        stats = trial_statistics(usable, truth=setup.truth)
        write_summary(out / "summary.json", stats, extra)
        _print_stats(stats)
    else:
        _write_json(out / "summary.json", extra)
    _write_run_record(out, cfg, {"command": "estimate", "seed": seed,
                                 "filtered": setup.filtered})
    return EXIT_OK


def cmd_stats(args) -> int:
    from .estimator import trial_statistics, write_summary

    files = list(args.files)
    if args.out and not files:
        files = sorted(str(p) for p in Path(args.out).glob("estimates_trial*.csv"))
    if not files:
        raise ConfigError("no estimate files given")
    reports = [_read_estimates(p) for p in files]
    truth = None
    if args.config:
        cfg = load_config(args.config)
        truth = pipeline.truth_values(cfg, reports[0].names)
    stats = trial_statistics(reports, truth=truth)
    _print_stats(stats)
    if args.summary:
        write_summary(args.summary, stats, {"sources": files})
    return EXIT_OK


def _read_estimates(path):
    from .estimator import EstimateReport, WindowEstimate

    rows: dict[float, dict] = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["window_start_s", "param", "estimate"]:
            raise ConfigError(f"{path}: not an estimate trajectory file")
        for line in fh:
            t, name, val, cost, ok = line.strip().split(",")
            w = rows.setdefault(float(t), {"est": {}, "cost": float(cost), "ok": ok == "1"})
            w["est"][name] = float(val)
    windows = [WindowEstimate(t, w["est"], w["cost"], np.zeros(0), 0, w["ok"],
                              {n: False for n in w["est"]}) for t, w in sorted(rows.items())]
    return EstimateReport(windows)


def _print_estimates(est, truth):
    print(f"{'param':>8} {'estimate':>12} {'truth':>10}")
    for n, v in est.items():
        tv = truth.get(n)
        print(f"{n:>8} {v:12.6g} {'' if tv is None else format(tv, '10.4g'):>10}")


def _print_stats(stats):
    print(f"{'param':>8} {'n':>5} {'median':>10} {'q1':>10} {'q3':>10} {'lo adj':>10} "
          f"{'hi adj':>10} {'eps %':>8}")
    for n, s in stats.items():
        eps = "" if s.eps_pct is None else f"{s.eps_pct:8.3f}"
        print(f"{n:>8} {s.n:5d} {s.median:10.4g} {s.q1:10.4g} {s.q3:10.4g} "
              f"{s.lower_adjacent:10.4g} {s.upper_adjacent:10.4g} {eps:>8}")


def cmd_verify(args) -> int:
    from .verify import run_checks

    truth_cfg = load_config(args.system)
    model_cfg = load_config(args.config) if args.config else truth_cfg
    results = run_checks(truth_cfg, model_cfg, duration_s=args.duration_s, seed=args.seed or 1)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ambient-inertia",
                description="Inertia estimation from ambient measurement variances.")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, estimation=False):
        sp.add_argument("--config", required=True,
                        help="configuration file or bundled system id")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--window-s", type=float, default=None)
        sp.add_argument("--preset-measurements", choices=["terminals", "boundaries", "voltages"],
                        default=None)
        if estimation:
            sp.add_argument("--param-set", choices=["H", "D"], default=None)
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--filtered", dest="filtered", action="store_true", default=None)
            g.add_argument("--unfiltered", dest="filtered", action="store_false")
            sp.add_argument("--analytic", action="store_true",
                            help="use the model's own stationary variances as data")

    sp = sub.add_parser("simulate", parents=[verbose], help="simulate measurement traces")
    common(sp)
    sp.add_argument("--duration-s", type=float, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", parents=[verbose], help="estimate inertia or damping per window")
    common(sp, estimation=True)
    sp.add_argument("--traces", nargs="+", default=None,
                    help="trace CSV files (default: simulate --trials traces)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("verify", parents=[verbose], help="run oracle checks on a bundled system")
    sp.add_argument("system", help="bundled system id or configuration file (the truth)")
    sp.add_argument("--config", default=None,
                    help="model configuration to check against the truth (default: the same)")
    sp.add_argument("--duration-s", type=float, default=3600.0)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("stats", parents=[verbose], help="violin statistics of estimate files")
    sp.add_argument("files", nargs="*")
    sp.add_argument("--out", default=None, help="directory with estimates_trial*.csv")
    sp.add_argument("--config", default=None, help="configuration supplying the truth")
    sp.add_argument("--summary", default=None, help="write the statistics to this JSON file")
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
