"""Command-line front end: build, verify, bounds, composite, experiment, eval.

Exit codes: 0 ok, 1 internal error, 2 bad input, 3 infeasible construction,
4 verification-gate failure. NARROWNET_THREADS caps worker parallelism in
the experiment runner. Existing output files are never overwritten without
--force.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .builder import build_manifest, build_with_plan
from .composite import (
    GraphError,
    build_composite,
    load_graph_file,
)
from .experiment import ExperimentConfig, run_rate_study
from .network import FormatError, NetworkError, load_network, save_network, stats
from .partition import InfeasibleConstructionError, SobolevViolationError, make_plan
from .reference import make_reference
from .targets import LIBRARY_NAMES, TargetError, make_target
from .verify import ORACLE_GATE, check_bounds, default_resolution, verify_network

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_GATE = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


def _check_overwrite(path, force):
    if os.path.exists(path) and not force:
        raise CliError(f"refusing to overwrite {path} without --force")


def _manifest_path(net_path: str) -> str:
    base = net_path[:-5] if net_path.endswith(".json") else net_path
    return base + ".manifest.json"


def _eps_range(value):
    eps = float(value)
    if not 0.0 < eps < 1.0:
        raise argparse.ArgumentTypeError(f"eps must lie in (0,1), got {value}")
    return eps


def cmd_build(args):
    target = make_target(args.target, args.d, args.beta)
    net, plan = build_with_plan(target, args.eps,
                                width_budget=args.width_budget,
                                n_override=args.n_override)
    manifest = build_manifest(net, plan, target_name=args.target)
    _check_overwrite(args.out, args.force)
    mpath = _manifest_path(args.out)
    _check_overwrite(mpath, args.force)
    save_network(net, args.out)
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    s = stats(net)
    print(f"wrote {args.out} and {mpath}")
    print(f"  H = {s.width}  L = {s.depth}  W = {s.weight_count}  "
          f"N = {plan.n}  delta = {plan.delta:.6g}")
    if plan.capped:
        print(f"  note: N capped from formula value {plan.n_formula} "
              "(desk-scale width budget)")
    return EXIT_OK


def cmd_verify(args):
    net = load_network(args.net)
    mpath = _manifest_path(args.net)
    eps = args.eps
    reference = None
    target = None
    if os.path.exists(mpath):
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
        name = args.target or manifest.get("target")
        target = make_target(name, manifest["d"], manifest["beta"])
        eps = eps if eps is not None else manifest.get("eps")
        plan = make_plan(manifest["eps"], manifest["beta"], manifest["d"],
                         scale=manifest.get("sobolev_scale", 1.0),
                         n_override=manifest["N"])
        reference = make_reference(target, plan)
    elif args.target:
        if args.d is None or args.beta is None:
            raise CliError("--d and --beta are required without a manifest")
        target = make_target(args.target, args.d, args.beta)
    else:
        raise CliError("no manifest found; pass --target (and --d/--beta)")
    report = verify_network(net, target, eps=eps, reference=reference,
                            resolution=args.resolution, n_random=args.samples,
                            seed=args.seed)
    out = args.out or (args.net + ".report.json")
    _check_overwrite(out, args.force)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    print(report.to_json())
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_bounds(args):
    entries = []
    for name in sorted(os.listdir(args.series_dir)):
        if not name.endswith(".manifest.json"):
            continue
        with open(os.path.join(args.series_dir, name), encoding="utf-8") as fh:
            m = json.load(fh)
        from .network import NetworkStats

        entries.append((m["eps"], NetworkStats(**m["measured_stats"]),
                        m["d"], m["beta"]))
    if len(entries) < 3:
        raise CliError(f"need >= 3 manifests in {args.series_dir}, found {len(entries)}")
    dims = {(d, beta) for _, _, d, beta in entries}
    if len(dims) != 1:
        raise CliError("manifests mix (d, beta) settings")
    d, beta = dims.pop()
    checks = check_bounds([(e, s) for e, s, _, _ in entries], d, beta)
    print(f"{'name':<18}{'measured':>12}{'threshold':>12}{'pass':>6}")
    for c in checks:
        print(f"{c.name:<18}{c.measured:>12.4f}{c.threshold:>12.4f}"
              f"{'yes' if c.passed else 'NO':>6}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_GATE


def cmd_composite(args):
    graph = load_graph_file(args.graph, args.beta)
    build = build_composite(graph, args.eps, width_budget=args.width_budget)
    _check_overwrite(args.out, args.force)
    save_network(build.net, args.out)
    s = stats(build.net)
    manifest = {
        "graph": os.path.abspath(args.graph),
        "eps": args.eps,
        "beta": args.beta,
        "budgets": {str(k): v for k, v in build.budgets.items()},
        "measured_stats": {"depth": s.depth, "width": s.width,
                           "weight_count": s.weight_count},
    }
    mpath = _manifest_path(args.out)
    _check_overwrite(mpath, args.force)
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {args.out}; H = {s.width}, L = {s.depth}, W = {s.weight_count}")
    return EXIT_OK


def cmd_experiment(args):
    with open(args.config, encoding="utf-8") as fh:
        if args.config.endswith(".toml"):
            try:
                import tomllib
            except ImportError:  # py310
                import tomli as tomllib
            doc = tomllib.loads(fh.read())
        else:
            doc = json.load(fh)
    config = ExperimentConfig.from_dict(doc)
    result = run_rate_study(config)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "cells.csv")
    json_path = os.path.join(args.out_dir, "summary.json")
    dat_path = os.path.join(args.out_dir, "medians.dat")
    for path in (csv_path, json_path, dat_path):
        _check_overwrite(path, args.force)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_json())
    with open(dat_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_gnuplot())
    print(result.to_json())
    return EXIT_OK


def cmd_eval(args):
    net = load_network(args.net)
    point = np.array([float(v) for v in args.point.split(",")])
    from .network import eval_forward

    value = eval_forward(net, point)
    print(" ".join(repr(float(v)) for v in value))
    return EXIT_OK


def cmd_export_info(args):
    doc = {
        "version": __version__,
        "format_version": 1,
        "targets": list(LIBRARY_NAMES),
        "default_resolutions": {d: default_resolution(d) for d in (1, 2, 3)},
        "oracle_gate": ORACLE_GATE,
        "exit_codes": {"ok": 0, "internal": 1, "bad_input": 2,
                       "infeasible": 3, "gate_failure": 4},
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="narrownet",
        description="Constructive narrow ReLU approximators: build, verify, measure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a narrow approximator for a library target")
    p.add_argument("--target", required=True, help="library target name")
    p.add_argument("--d", type=int, required=True, help="input dimension")
    p.add_argument("--beta", type=int, required=True, help="smoothness order")
    p.add_argument("--eps", type=_eps_range, required=True, help="sup-norm accuracy in (0,1)")
    p.add_argument("--out", required=True, help="network file to write")
    p.add_argument("--width-budget", type=int, default=None,
                   help="desk-scale width cap (default depends on d)")
    p.add_argument("--n-override", type=int, default=None,
                   help="fix the grid size N instead of the formula value")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="sup-error sweep and wiring oracle for a built network")
    p.add_argument("--net", required=True)
    p.add_argument("--target", default=None, help="override the manifest target")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--beta", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report path (default <net>.report.json)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bounds", help="growth-exponent checks over a series of manifests")
    p.add_argument("--series-dir", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("composite", help="build an approximator for a composition graph")
    p.add_argument("--graph", required=True, help="graph JSON file")
    p.add_argument("--beta", type=int, required=True)
    p.add_argument("--eps", type=_eps_range, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width-budget", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("experiment", help="run the regression rate study")
    p.add_argument("--config", required=True, help="JSON (or TOML) experiment config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("eval", help="evaluate a network file at a point")
    p.add_argument("--net", required=True)
    p.add_argument("--point", required=True, help="comma-separated coordinates")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-info", help="print tool metadata as JSON")
    p.set_defaults(func=cmd_export_info)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TargetError, GraphError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (InfeasibleConstructionError, SobolevViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
