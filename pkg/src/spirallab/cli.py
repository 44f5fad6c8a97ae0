"""Command line entry point ``spirallab``."""

import argparse
import json
import os
import sys

from .errors import ConfigError, ParameterError, SpiralLabError
from .harness import (AsymptoticsParams, compare_asymptotics, load_config, resolve_threads,
                      run_asymptotics, run_experiment, selftest)
from .simulator import SimConfig, run


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker threads (fallback: $SPIRALLAB_THREADS)")
    common.add_argument("--seed", type=int, metavar="INT", help="override the RNG seed")
    common.add_argument("--snapshot-every", type=int, metavar="INT", help="snapshot stride in steps")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    p = argparse.ArgumentParser(prog="spirallab", parents=[common],
                                description="Spiral waves in nonlocal oscillatory media.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="run one simulation from a JSON SimConfig")
    s.add_argument("config")
    s = sub.add_parser("asymptotics", parents=[common], help="run the asymptotic pipeline")
    s.add_argument("config")
    s = sub.add_parser("sweep", parents=[common], help="run an experiment config")
    s.add_argument("config")
    s = sub.add_parser("compare", parents=[common], help="join simulation and asymptotics summaries")
    s.add_argument("sim")
    s.add_argument("asym")
    sub.add_parser("selftest", parents=[common], help="bundled reference checks")
    return p


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _say(args, msg):
    if not args.quiet:
        print(msg, flush=True)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        threads = resolve_threads(args.threads)
        if args.command == "simulate":
            d = _read_json(args.config)
            d = d.get("config", d)              # accept a run summary as config
            if args.seed is not None:
                d["rng_seed"] = args.seed
            cfg = SimConfig.from_dict(d)
            out = args.out or "sim_out"
            summ = run(cfg, args.snapshot_every or 0, out, workers=threads)
            _say(args, json.dumps(summ["measurement"], indent=1))
        elif args.command == "asymptotics":
            d = _read_json(args.config)
            d = d.get("resolved_config", d)
            summ = run_asymptotics(AsymptoticsParams.from_dict(d), args.out or "asym_out")
            _say(args, f"omega={summ['omega']:.10g} lam={summ['lam']:.10g} "
                       f"kappa_pred={summ['kappa_pred']}")
        elif args.command == "sweep":
            cfg = load_config(args.config)
            paths = run_experiment(cfg, out_dir=args.out, threads=threads, seed=args.seed,
                                   snapshot_every=args.snapshot_every, quiet=args.quiet)
            _say(args, json.dumps(paths, indent=1))
        elif args.command == "compare":
            out_csv = os.path.join(args.out, "comparison.csv") if args.out else None
            if args.out:
                os.makedirs(args.out, exist_ok=True)
            rows, st = compare_asymptotics(args.sim, args.asym, out_csv)
            for r in rows:
                _say(args, f"{r.value:10.4g} kappa {r.kappa_measured:.5g} / {r.kappa_predicted:.5g}"
                           f" = {r.ratio:.4g}")
            if st:
                _say(args, json.dumps(st))
        else:
            res = selftest(quiet=args.quiet)
            return 0 if res["passed"] else 1
    except (ConfigError, ParameterError) as exc:
        print(f"spirallab: usage error: {exc}", file=sys.stderr)
        return 2
    except SpiralLabError as exc:
        print(f"spirallab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
