"""Command-line front end.

Subcommands write into the output directory (``--out``, else the
``MCDETECT_OUT`` environment variable, else ``output_dir`` from the config):

* ``calibrate``  -> ``thresholds.json`` (+ ``false_alarms.json`` when a hold-out is configured)
* ``curves``     -> ``curves.csv`` (calibrates first unless ``thresholds_file`` is set)
* ``crb``        -> ``crb.csv``
* ``scan``       -> ``coupling_mismatch.csv``, ``peak_scan.csv``, ``peak_summary.json``
* ``selftest``   -> ``selftest.json``

Every run also writes ``config_resolved.json``.  Exit codes: 0 success,
2 configuration or precondition error, 3 numerical failure, 4 selftest failure.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .array_model import (
    beam_similarity,
    coupled_steering,
    manifold_basis,
    mismatch_curve,
    neighborhood_grid,
)
from .config import load_config, parse_config
from .crb import crb_actual, crb_linearized
from .errors import ConfigError, McDetectError, NumericalError
from .harness import (
    ThresholdTable,
    TrialSetup,
    binomial_interval,
    calibrate_thresholds,
    measure_false_alarms,
    run_curves,
    write_curves_csv,
)
from .scenario import amplitude_for_sinr, build_covariance
from .selftest import run_selftest

OUT_ENV = "MCDETECT_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_SELFTEST = 4

SUBCOMMANDS = ("calibrate", "curves", "crb", "scan", "selftest")


def _setup(cfg):
    return TrialSetup(cfg.env, cfg.pointing, cfg.mm, cfg.u0, cfg.phase)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


def _calibrate(cfg, out):
    table = calibrate_thresholds(cfg.detectors, _setup(cfg), cfg.pfa, cfg.n_calibration,
                                 cfg.master_seed, cfg.threads)
    with open(os.path.join(out, "thresholds.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table.to_json() + "\n")
    return table


def cmd_calibrate(cfg, out):
    table = _calibrate(cfg, out)
    print(f"thresholds for {len(table.entries)} detectors from {table.n_trials} trials")
    if cfg.n_holdout > 0:
        counts = measure_false_alarms(cfg.detectors, _setup(cfg), table, cfg.n_holdout,
                                      cfg.master_seed, cfg.threads)
        lo, hi = binomial_interval(cfg.n_holdout, cfg.pfa, 0.99)
        report = {label: {"false_alarms": c, "pfa_hat": c / cfg.n_holdout,
                          "inside_99": lo <= c <= hi}
                  for label, c in counts.items()}
        _write_json(os.path.join(out, "false_alarms.json"),
                    {"n_trials": cfg.n_holdout, "pfa": cfg.pfa, "interval_99": [lo, hi],
                     "detectors": report})
        for label, r in report.items():
            print(f"  {label}: {r['false_alarms']} false alarms, 99% interval [{lo}, {hi}]")
    return EXIT_OK


def _load_thresholds(cfg):
    try:
        with open(cfg.thresholds_file, encoding="utf-8") as fh:
            table = ThresholdTable.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load thresholds_file {cfg.thresholds_file}: {exc}") from exc
    missing = [k.label for k in cfg.detectors if k.label not in table.entries]
    if missing:
        raise ConfigError(f"thresholds_file lacks entries for {missing}")
    if not math.isclose(table.pfa, cfg.pfa, rel_tol=1e-12):
        raise ConfigError(f"thresholds_file pfa {table.pfa} differs from config pfa {cfg.pfa}")
    return table


def cmd_curves(cfg, out):
    table = _load_thresholds(cfg) if cfg.thresholds_file else _calibrate(cfg, out)
    curves = run_curves(cfg.detectors, _setup(cfg), cfg.sinr_grid_db, table, cfg.n_curves,
                        cfg.master_seed, cfg.threads)
    write_curves_csv(os.path.join(out, "curves.csv"), curves)
    print(f"curves for {len(curves)} detectors x {len(cfg.sinr_grid_db)} SINR points")
    return EXIT_OK


def cmd_crb(cfg, out):
    env = cfg.env
    order = cfg.crb_order
    direction = np.asarray(env.coupling.b_direction, dtype=complex)
    if order < direction.size:
        raise ConfigError(f"crb.order {order} is below the true coupling order {direction.size}")
    direction = np.concatenate([direction, np.zeros(order - direction.size, complex)])
    m = build_covariance(env)
    pm = coupled_steering(env.geometry, env.coupling, cfg.u0)
    basis = manifold_basis(env.geometry, cfg.pointing, order)
    delta_u = cfg.u0 - cfg.pointing.u_bar
    rows = []
    for s in cfg.sinr_grid_db:
        b = amplitude_for_sinr(s, m, pm, cfg.phase) * direction
        act = crb_actual(m, cfg.u0, b, env.geometry, order)
        lin = crb_linearized(m, delta_u, b, basis)
        rows.append((float(s), act.crb_value, lin.crb_value, float(act.db), float(lin.db)))
    _write_rows(os.path.join(out, "crb.csv"),
                ("sinr_db", "crb_actual", "crb_linearized", "crb_actual_db", "crb_linearized_db"),
                rows)
    print(f"CRB at {len(rows)} SINR points, delta_u = {delta_u:.6g}")
    return EXIT_OK


def cmd_scan(cfg, out):
    sc = cfg.scan
    g = cfg.env.geometry
    n = int(round((sc["theta_max_deg"] - sc["theta_min_deg"]) / sc["step_deg"]))
    theta = sc["theta_min_deg"] + sc["step_deg"] * np.arange(n + 1)
    u = np.sin(np.radians(theta))
    cos_s = mismatch_curve(g, cfg.env.coupling, u)
    _write_rows(os.path.join(out, "coupling_mismatch.csv"), ("theta_deg", "u", "cos_s"),
                zip(theta, u, cos_s))

    u0 = math.sin(math.radians(sc["target_deg"]))
    grid = neighborhood_grid(g, u0, sc["step_deg"])
    sim = beam_similarity(g, cfg.env.coupling, u0, grid)
    _write_rows(os.path.join(out, "peak_scan.csv"), ("theta_deg", "similarity"), zip(grid, sim))
    peak = float(grid[int(np.argmax(sim))])
    summary = {"target_deg": sc["target_deg"], "peak_theta_deg": peak,
               "displacement_deg": peak - float(np.degrees(np.arcsin(u0))),
               "min_cos_s": float(np.min(cos_s))}
    _write_json(os.path.join(out, "peak_summary.json"), summary)
    print(f"min cos_s {summary['min_cos_s']:.4f}; peak displacement "
          f"{summary['displacement_deg']:.3f} deg")
    return EXIT_OK


def cmd_selftest(cfg, out):
    results = run_selftest()
    _write_json(os.path.join(out, "selftest.json"),
                [{"check": name, "ok": ok, "detail": detail} for name, ok, detail in results])
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


COMMANDS = {"calibrate": cmd_calibrate, "curves": cmd_curves, "crb": cmd_crb,
            "scan": cmd_scan, "selftest": cmd_selftest}


def build_parser():
    ap = argparse.ArgumentParser(prog="mcdetect",
                                 description="Detection and bearing estimation under "
                                             "unknown mutual coupling.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", metavar="PATH", help="YAML experiment file (defaults if omitted)")
    ap.add_argument("--out", metavar="DIR", help=f"output directory (overrides ${OUT_ENV})")
    ap.add_argument("--threads", type=int, metavar="N", help="worker threads, 0 = auto")
    ap.add_argument("--seed", type=int, help="master seed override")
    return ap


def resolve(args):
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = {"master": args.seed}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = parse_config("", overrides)
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir
    return cfg, out


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg, out = resolve(args)
        os.makedirs(out, exist_ok=True)
        echo = cfg.echo()
        echo["output_dir"] = out
        _write_json(os.path.join(out, "config_resolved.json"), echo)
        return COMMANDS[args.subcommand](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (McDetectError, ValueError, KeyError) as exc:
        print(f"precondition violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
