"""Command line interface.

Exit codes for ``simulate``: 0 success, 2 configuration error, 3 solver
non-convergence, 4 conservation gate failure (anode/cathode imbalance
beyond 1 % of the injected current). Other failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import (ConfigError, ConvergenceError, NastranParseError,
                     ScenarioError, TensfieldError)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONSERVATION = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensfield",
        description="Finite-element current-density simulation for "
                    "transcutaneous electrode stimulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the scenarios in a config file")
    sim.add_argument("config", type=Path)
    sim.add_argument("--only", metavar="LABEL",
                     help="run only the scenario with this label")
    sim.add_argument("--threads", type=int, default=1, metavar="N",
                     help="run scenarios concurrently (default 1)")

    ph = sub.add_parser("phantom", help="phantom mesh utilities")
    ph_sub = ph.add_subparsers(dest="phantom_command", required=True)
    ph_write = ph_sub.add_parser("write",
                                 help="generate a phantom and write it as "
                                      "NASTRAN bulk data")
    ph_write.add_argument("spec", type=Path,
                          help='JSON file: {"head": {...}} or {"slab": {...}}')
    ph_write.add_argument("out", type=Path, help="output .nas path")

    val = sub.add_parser("validate", help="parse and validate a NASTRAN mesh")
    val.add_argument("mesh", type=Path)

    rep = sub.add_parser("report", help="report utilities")
    rep_sub = rep.add_subparsers(dest="report_command", required=True)
    cmp_ = rep_sub.add_parser("compare",
                              help="compare scenario JSON reports")
    cmp_.add_argument("reports", nargs="+", type=Path, metavar="REPORT.json")
    cmp_.add_argument("--out", type=Path, default=Path("comparison"),
                      metavar="PREFIX",
                      help="prefix for PREFIX.csv and PREFIX.png "
                           "(default: comparison)")
    return parser


def _cmd_simulate(args) -> int:
    from .scenario import load_config, run_config

    try:
        scenarios = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    failed_conservation = False
    try:
        results = run_config(scenarios, only=args.only, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConvergenceError):
            return EXIT_NO_CONVERGENCE
        return EXIT_ERROR

    for result in results:
        cons = result.conservation
        print(f"[{result.label}] solved in {result.iterations} iterations, "
              f"residual {result.residual:.3e}")
        for report in result.reports:
            x, y, z = report.argmax_mm
            print(f"  {report.region}: max |J| = {report.max_j:.6g} A/m^2 "
                  f"at ({x:.4g}, {y:.4g}, {z:.4g}) mm, "
                  f"mean {report.mean_j:.6g}")
        print(f"  conservation: imbalance {cons.imbalance_fraction:.3%}, "
              f"leakage {cons.leakage_fraction:.3%} "
              f"({'ok' if cons.passed else 'FAILED'})")
        for path in result.written:
            print(f"  wrote {path}")
        if not cons.passed:
            failed_conservation = True
    return EXIT_CONSERVATION if failed_conservation else EXIT_OK


def _cmd_phantom_write(args) -> int:
    from .mesh import write_nastran
    from .phantom import HeadPhantomSpec, SlabSpec, make_head_phantom, make_slab

    try:
        raw = json.loads(args.spec.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if "head" in raw:
            kwargs = dict(raw["head"])
            for key in ("size", "nerve_span_y"):
                if key in kwargs:
                    kwargs[key] = tuple(kwargs[key])
            bundle = make_head_phantom(HeadPhantomSpec(**kwargs))
        elif "slab" in raw:
            slab = raw["slab"]
            layers = tuple((l["name"], l["thickness"], l.get("sigma"))
                           for l in slab["layers"])
            bundle = make_slab(SlabSpec(
                length=slab["length"], width=slab["width"],
                height=slab["height"], pitch=slab["pitch"], layers=layers))
        else:
            print('config error: spec must contain "head" or "slab"',
                  file=sys.stderr)
            return EXIT_CONFIG
    except (TypeError, KeyError) as exc:
        print(f"config error: bad phantom spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TensfieldError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    write_nastran(bundle.mesh, args.out)
    mesh = bundle.mesh
    print(f"wrote {args.out}: {mesh.node_count} nodes, "
          f"{mesh.element_count} elements, "
          f"{len(mesh.region_names)} regions")
    print("note: named electrode patches are not representable in bulk "
          "data; select electrodes by box when loading this file")
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .mesh import parse_nastran, validate_mesh

    try:
        mesh = parse_nastran(args.mesh.read_text())
    except OSError as exc:
        print(f"cannot read mesh: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NastranParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = validate_mesh(mesh)
    print(report.summary())
    for defect in report.defects[:50]:
        print(f"  {defect.kind}: ids {defect.ids}")
    if len(report.defects) > 50:
        print(f"  ... and {len(report.defects) - 50} more")
    return EXIT_OK if report.is_valid else EXIT_ERROR


def _cmd_report_compare(args) -> int:
    from .figures import save_comparison_figure
    from .scenario import compare_report, load_result_reports

    try:
        reports = {}
        for path in args.reports:
            label, regions = load_result_reports(path)
            reports[label] = regions
        table = compare_report(reports)
    except TensfieldError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(table.format_text())
    csv_path = args.out.with_suffix(".csv")
    fig_path = args.out.with_suffix(".png")
    table.to_csv(csv_path)
    save_comparison_figure(table, fig_path)
    print(f"wrote {csv_path}")
    print(f"wrote {fig_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "phantom":
            return _cmd_phantom_write(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "report":
            return _cmd_report_compare(args)
    except TensfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
