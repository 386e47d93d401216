"""Command-line entry point.

Every command prints a JSON document on stdout. Failures print
``{"error": <category>, "message": ...}`` on stderr and exit with the
category's code (see :mod:`ttosc.errors`).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import Config, config_to_dict, load_config, save_config
from .errors import OracleMismatchError, TTOSCError
from .model import SystemConfig
from .workload import Workload, write_trace

INTERNAL_EXIT = 70


def _load(args) -> Config:
    return load_config(args.config) if args.config else Config()


def cmd_config_init(args):
    cfg = Config(SystemConfig.generate(M=args.cells, J=args.services, seed=args.seed))
    if args.output == "-":
        return config_to_dict(cfg)
    save_config(cfg, args.output)
    return {"written": args.output}


def cmd_run(args):
    cfg = _load(args)
    res = harness.run_scheme(cfg.system, args.scheme, args.episodes, args.seed,
                             solver=cfg.solver, training=cfg.training,
                             eval_episodes=args.eval_episodes, record_slots=not args.no_slots,
                             output_dir=args.output, log_every=args.log_every)
    train, ev = res.stats(harness.TRAIN), res.stats(harness.EVAL)
    return {"scheme": args.scheme, "seed": args.seed, "train_episodes": len(train),
            "eval_episodes": len(ev),
            "final_delay": res.final_delay() if (train or ev) else None,
            "output": args.output}


def cmd_sweep(args):
    cfg = _load(args)
    spec = harness.ExperimentSpec(args.scheme, args.episodes, tuple(args.seeds),
                                  args.eval_episodes, args.axis, tuple(args.values), args.output)
    rows = harness.sweep(cfg.system, spec, cfg.solver, cfg.training, args.log_every)
    return {"rows": [dict(zip(harness.SWEEP_FIELDS, r)) for r in rows], "output": args.output}


def cmd_bench(args):
    cfg = _load(args)
    return harness.bench(cfg.system, cfg.solver, cfg.training, frames=args.frames, seed=args.seed)


def cmd_oracle_check(args):
    report = harness.oracle_check(args.schedule, args.knapsack, args.seed)
    if not report["ok"]:
        raise OracleMismatchError(json.dumps(report))
    return report


def cmd_plotdata(args):
    written = harness.plotdata(args.input, args.output, args.window)
    return {k: str(v) for k, v in written.items()}


def cmd_trace(args):
    cfg = _load(args).system
    wl = Workload(cfg, harness.workload_seed(args.seed, harness.TRAIN, args.episode))
    trace = {t * cfg.K + k: N for t in range(args.frames) for k, N in enumerate(wl.frame(t))}
    write_trace(args.output, trace)
    return {"written": args.output, "slots": len(trace)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttosc", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON configuration (defaults if omitted)")
        return sp

    cfg = sub.add_parser("config", help="configuration helpers")
    csub = cfg.add_subparsers(dest="config_command", required=True)
    init = csub.add_parser("init", help="write a configuration with all defaults")
    init.add_argument("--output", default="ttosc.json", help="path, or - for stdout")
    init.add_argument("--cells", type=int, default=5)
    init.add_argument("--services", type=int, default=20)
    init.add_argument("--seed", type=int, default=0)
    init.set_defaults(func=cmd_config_init)

    run = with_config(sub.add_parser("run", help="train or roll out one scheme"))
    run.add_argument("--scheme", choices=harness.SCHEMES, default="ttosc")
    run.add_argument("--episodes", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--eval-episodes", type=int, default=0)
    run.add_argument("--output", help="directory for CSV metrics")
    run.add_argument("--no-slots", action="store_true", help="skip the per-slot table")
    run.add_argument("--log-every", type=int, default=0)
    run.set_defaults(func=cmd_run)

    sw = with_config(sub.add_parser("sweep", help="one run per (value, seed)"))
    sw.add_argument("--axis", choices=harness.SWEEP_AXES, required=True)
    sw.add_argument("--values", type=float, nargs="+", required=True)
    sw.add_argument("--scheme", choices=harness.SCHEMES, default="ttosc")
    sw.add_argument("--seeds", type=int, nargs="+", default=[0])
    sw.add_argument("--episodes", type=int, default=1)
    sw.add_argument("--eval-episodes", type=int, default=1)
    sw.add_argument("--output", help="directory for sweep.csv and per-run metrics")
    sw.add_argument("--log-every", type=int, default=0)
    sw.set_defaults(func=cmd_sweep)

    b = with_config(sub.add_parser("bench", help="time both decision timescales"))
    b.add_argument("--frames", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    oc = sub.add_parser("oracle-check", help="solver and knapsack vs. brute force")
    oc.add_argument("--schedule", type=int, default=50)
    oc.add_argument("--knapsack", type=int, default=200)
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)

    pd = sub.add_parser("plotdata", help="aggregate run CSVs into figure tables")
    pd.add_argument("--input", required=True)
    pd.add_argument("--output", required=True)
    pd.add_argument("--window", type=int, default=100)
    pd.set_defaults(func=cmd_plotdata)

    tr = with_config(sub.add_parser("trace", help="export an arrival trace as CSV"))
    tr.add_argument("--output", required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--episode", type=int, default=0)
    tr.add_argument("--frames", type=int, default=1)
    tr.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except TTOSCError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:        # noqa: BLE001 - report, do not traceback
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return INTERNAL_EXIT
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
