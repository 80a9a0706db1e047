"""
Command line entry point.

    pulds bench    --scenario soft_landing --runs 1000 --sets 3
    pulds episode  --scenario interception --sys 2 --cnt 2 --seed 7
    pulds info     --scenario interception --mode optimistic --controls zeros
    pulds validate --scenario my_scenario.json

Exit status is 0 on success, 1 on usage or scenario errors and 2 on runtime
failures. Output files go to --out, else $PULDS_OUTPUT_DIR, else ./pulds_out.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .estimation import reducible_from_prior
from .info_metrics import MODES, info_accumulate, info_multistep
from .lds_model import (
    _BUILTINS,
    ScenarioError,
    build_scenario,
    load_scenario,
)
from .tensor_stats import joint_covariance, pack_psd_check, psd_report

OUTPUT_ENV = "PULDS_OUTPUT_DIR"
DEFAULT_OUT = "pulds_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def load_config(path_or_name):
    """Builtin scenario by name, or a JSON scenario file."""
    if str(path_or_name) in _BUILTINS:
        return build_scenario(str(path_or_name))
    path = Path(path_or_name)
    if not path.is_file():
        raise ScenarioError([f"{path_or_name}: neither a builtin scenario {sorted(_BUILTINS)} nor a readable file"])
    return load_scenario(path)


def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUT
    return Path(out)


def _scenario(args):
    sc = load_config(args.scenario)
    if getattr(args, "seed", None) is not None:
        sc = dataclasses.replace(sc, base_seed=args.seed)
    return sc


def _variants(args):
    if args.exact:
        return [harness.EXACT]
    if args.sys is None and args.cnt is None:
        return list(harness.TABLE_VARIANTS)
    if args.sys is None or args.cnt is None:
        raise UsageError("--sys and --cnt must be given together")
    return [harness.Variant(args.sys, args.cnt)]


def cmd_bench(args):
    sc = _scenario(args)
    out = _out_dir(args)

    def progress(var, s, st):
        print(f"{var.label:>11} set {s}: cost {st.cost_mean:.4g} +- {st.cost_disp:.4g} "
              f"(max {st.cost_max:.4g}), miss {st.miss_mean:.4g}, excluded {st.excluded}")

    harness.run_benchmark(
        sc, _variants(args), sets=args.sets, runs=args.runs, out_dir=out,
        variance=args.variance, traces=args.traces, reiterate=args.reiterate,
        progress=None if args.quiet else progress,
    )
    print(f"wrote {out / (sc.name + '_table.csv')}")
    return 0


def cmd_episode(args):
    sc = _scenario(args)
    var = _variants(args)
    if len(var) != 1:
        raise UsageError("episode needs --exact or both --sys and --cnt")
    seed = sc.base_seed if args.seed is None else args.seed
    ep = harness.run_episode(sc, var[0], seed, reiterate=args.reiterate)
    out = _out_dir(args)
    path = out / f"{sc.name}_{var[0].label.replace('/', '_')}_seed{seed}.csv"
    harness.write_trace(path, ep)
    print(f"{var[0].label} seed {seed}: cost {ep.cost:.6g}, miss {ep.miss:.6g}, "
          f"probes {int(ep.was_probe.sum())}, flagged {ep.flagged}")
    print(f"wrote {path}")
    return 0


def _read_controls(spec, K, m):
    if spec == "zeros":
        return np.zeros((K, m))
    try:
        u = np.loadtxt(spec, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read controls from {spec}: {exc}")
    if u.shape != (K, m):
        if u.shape == (m, K):
            u = u.T
        else:
            raise UsageError(f"{spec}: expected {K} rows of {m} controls, got shape {u.shape}")
    return u


def cmd_info(args):
    sc = _scenario(args)
    m = sc.model
    controls = _read_controls(args.controls, m.horizon, m.m)
    state = reducible_from_prior(sc.prior.x0_mean, sc.prior.x0_cov, m.Fbar, m.Gbar, sc.moments)
    I_z, logdet = info_multistep(m, state, controls, args.mode)
    info = info_accumulate(I_z, sc.prior.P, args.mode, logdet)
    rows = [{"k": k + 1, "I_z": info.I_z[k], "I_cum": info.I_cum[k], "I_sigma": info.I_sigma[k],
             "logdet": info.logdet[k]} for k in range(len(I_z))]
    cols = ["k", "I_z", "I_cum", "I_sigma", "logdet"]
    print(",".join(cols))
    for r in rows:
        print(",".join(harness.fmt(r[c]) for c in cols))
    if args.out:
        harness.write_csv(Path(args.out) / f"{sc.name}_info_{args.mode}.csv", cols, rows)
    return 0


def cmd_validate(args):
    sc = load_config(args.scenario)
    ok_m, lo_m = pack_psd_check(sc.moments)
    ok_j, lo_j = psd_report(joint_covariance(sc.prior.x0_cov, sc.moments.uncertainty_block().with_cross()))
    print(f"scenario {sc.name}: n={sc.model.n} m={sc.model.m} l={sc.model.l} "
          f"horizon={sc.model.horizon} uncertain parameters={sc.prior.P}")
    print(f"parameter moments PSD: {ok_m} (min eigenvalue {lo_m:.6g})")
    print(f"joint (x, F, G) covariance PSD: {ok_j} (min eigenvalue {lo_j:.6g})")
    return 0 if (ok_m and ok_j) else 1


def build_parser():
    p = _Parser(prog="pulds", description="Estimation and dual control of LDS with random parameters.")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress details")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--scenario", default="interception", help="builtin name or JSON scenario file")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUT})")
        if seed:
            sp.add_argument("--seed", type=int, help="base seed (overrides the scenario)")

    def variant(sp):
        sp.add_argument("--sys", type=int, choices=(0, 1, 2))
        sp.add_argument("--cnt", type=int, choices=(0, 1, 2))
        sp.add_argument("--exact", action="store_true", help="exact known parameters baseline")
        sp.add_argument("--reiterate", action="store_true", help="one extra dual information pass")

    b = sub.add_parser("bench", help="variant grid to CSV/JSON tables")
    common(b)
    variant(b)
    b.add_argument("--runs", type=int)
    b.add_argument("--sets", type=int)
    b.add_argument("--traces", action="store_true", help="write a trace CSV per episode")
    b.add_argument("--variance", action="store_true", help="report variance instead of standard deviation")
    b.add_argument("-q", "--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("episode", help="single seeded episode with traces")
    common(e)
    variant(e)
    e.set_defaults(func=cmd_episode)

    i = sub.add_parser("info", help="predicted information content along a control sequence")
    common(i, seed=False)
    i.add_argument("--mode", choices=MODES, default="optimistic")
    i.add_argument("--controls", default="zeros", help="'zeros' or a CSV file with one row per step")
    i.set_defaults(func=cmd_info)

    v = sub.add_parser("validate", help="check a scenario file and report PSD status")
    common(v, seed=False)
    v.set_defaults(func=cmd_validate)
    return p


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "runs", None) is not None and args.runs < 1:
            raise UsageError("--runs must be >= 1")
        if getattr(args, "sets", None) is not None and args.sets < 1:
            raise UsageError("--sets must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"pulds: error: {exc}", file=sys.stderr)
        return 1
    except ScenarioError as exc:
        print("pulds: invalid scenario:", file=sys.stderr)
        for prob in exc.problems:
            print(f"  - {prob}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - top level reporting
        print(f"pulds: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
