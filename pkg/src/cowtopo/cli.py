"""Command line entry point: ``cowtopo {evaluate,rank,topo-report,phantom}``.

Exit status: 0 on success, 1 when some cases failed (the rest are still
reported), 2 on invocation errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    InvocationError,
    Settings,
    cmd_evaluate,
    cmd_phantom,
    cmd_rank,
    cmd_topology_report,
    parse_corruption,
)
from .labels import DEFAULT_LABEL_MAP, label_map_from_config, load_label_map
from .phantom import PhantomSpec, spec_lattice

DEFAULTS = {
    "task": "multiclass",
    "connectivity": 26,
    "adjacency": 26,
    "jobs": 1,
    "zero_overlap": "fn",
    "ipsilateral": True,
    "roi": None,
    "label_map": None,
}


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    g.add_argument("--config", help="JSON file with default option values")
    g.add_argument("--connectivity", type=int, choices=(6, 18, 26), help="component connectivity (default 26)")
    g.add_argument("--label-map", help="JSON label map {\"labels\": {name: id}}")
    g.add_argument("--roi", help="ROI file, one JSON record per line")
    g.add_argument("--task", choices=("binary", "multiclass"), help="metric suite (default multiclass)")
    g.add_argument("--jobs", type=int, help="cases evaluated in parallel (default 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="cowtopo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("-o", "--out", required=True, help="report directory")
    p.add_argument("--team", help="team name (default: prediction directory name)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("rank", parents=[common], help="leaderboard from evaluation reports")
    p.add_argument("reports", nargs="+", help="metrics.json files, one per team")
    p.add_argument("-o", "--out", required=True, help="report directory")
    p.add_argument("--columns", nargs="+", metavar="NAME[:max|min]", help="ranked columns (default per task)")
    p.add_argument("--per-case", action="store_true", help="rank within each case, then average")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("topo-report", parents=[common], help="detection and topology matching report")
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("-o", "--out", required=True, help="report directory")
    p.add_argument("--adjacency", type=int, choices=(6, 18, 26), help="contact neighbourhood (default 26)")
    p.add_argument(
        "--zero-overlap",
        choices=("fn", "fn+fp"),
        help="booking of a present but non-overlapping class (default fn)",
    )
    p.add_argument("--any-side-pcom", action="store_true", help="accept Pcom contacts on either side")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("phantom", parents=[common], help="write synthetic CoW fixtures")
    p.add_argument("-o", "--out", required=True, help="existing output directory")
    p.add_argument("--id", default="phantom", help="case id (default 'phantom')")
    p.add_argument("--spec", help="JSON phantom spec; toggle flags are ignored")
    p.add_argument("--lattice", action="store_true", help="write the full variant lattice as phantom-NNN")
    p.add_argument("--dims", type=int, nargs=3)
    p.add_argument("--spacing", type=float, nargs=3)
    p.add_argument("--acom", choices=("present", "absent", "double"))
    p.add_argument("--third-a2", action="store_true")
    p.add_argument("--no-r-pcom", action="store_true")
    p.add_argument("--no-l-pcom", action="store_true")
    for name in ("r-a1", "l-a1", "r-p1", "l-p1"):
        p.add_argument(f"--{name}", choices=("normal", "hypoplastic", "aplastic"))
    p.add_argument("--r-fetal", action="store_true")
    p.add_argument("--l-fetal", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--corrupt",
        action="append",
        default=[],
        metavar="SPEC",
        help="break:CLS[:GAP[:POS]] | drop:CLS | blob:CLS[:R[:DX,DY,DZ]] | "
        "swap:A:B:X,Y,Z:SX,SY,SZ | dilate:CLS:N (repeatable, applied in order)",
    )
    return parser


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise InvocationError("config file must hold a JSON object")
    return config


def _option(args, config, name):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, config.get(name.replace("_", "-"), DEFAULTS.get(name)))


def _settings(args, config) -> Settings:
    if args.label_map:
        label_map = load_label_map(args.label_map)
    elif isinstance(config.get("label_map"), str):
        label_map = load_label_map(config["label_map"])
    elif "labels" in config:
        label_map = label_map_from_config(config)
    else:
        label_map = DEFAULT_LABEL_MAP
    ipsilateral = False if getattr(args, "any_side_pcom", False) else config.get("ipsilateral", True)
    return Settings(
        task=_option(args, config, "task"),
        connectivity=int(_option(args, config, "connectivity")),
        adjacency=int(_option(args, config, "adjacency")),
        label_map=label_map,
        zero_overlap=_option(args, config, "zero_overlap"),
        ipsilateral=bool(ipsilateral),
        jobs=int(_option(args, config, "jobs")),
    )


def _phantom_specs(args) -> dict[str, PhantomSpec]:
    if args.lattice:
        overrides = {}
        if args.dims:
            overrides["dims"] = tuple(args.dims)
        if args.spacing:
            overrides["spacing"] = tuple(args.spacing)
        return {f"phantom-{i:03d}": s for i, s in enumerate(spec_lattice(**overrides))}
    if args.spec:
        with open(args.spec) as fh:
            spec = PhantomSpec.from_dict(json.load(fh))
    else:
        fields = {
            "dims": tuple(args.dims) if args.dims else None,
            "spacing": tuple(args.spacing) if args.spacing else None,
            "acom": args.acom,
            "third_a2": args.third_a2,
            "r_pcom": not args.no_r_pcom,
            "l_pcom": not args.no_l_pcom,
            "r_a1": args.r_a1,
            "l_a1": args.l_a1,
            "r_p1": args.r_p1,
            "l_p1": args.l_p1,
            "r_fetal": args.r_fetal,
            "l_fetal": args.l_fetal,
            "seed": args.seed,
        }
        spec = PhantomSpec(**{k: v for k, v in fields.items() if v is not None})
    return {args.id: spec}


def _report_failures(failures):
    for f in failures:
        print(f"{f['case']}: {f['error']}", file=sys.stderr)


def run(args) -> int:
    config = _load_config(args.config)
    settings = _settings(args, config)
    roi = _option(args, config, "roi")
    figures = not getattr(args, "no_figures", False)

    if args.command == "evaluate":
        result, status = cmd_evaluate(
            args.gt_dir,
            args.pred_dir,
            args.out,
            roi_file=roi,
            settings=settings,
            team=args.team or config.get("team"),
            figures=figures,
        )
        _report_failures(result.failures)
        print(f"{len(result.cases)} cases evaluated, {len(result.failures)} failed -> {args.out}/metrics.json")
        return status

    if args.command == "rank":
        columns = args.columns or config.get("columns")
        per_case = args.per_case or bool(config.get("per_case", False))
        board = cmd_rank(args.reports, args.out, columns=columns, per_case=per_case, figures=figures)
        for row in board.to_records():
            print(f"{row['position']:>3}  {row['team']}  {row['average_rank']:.4g}")
        return 0

    if args.command == "topo-report":
        rep, status = cmd_topology_report(
            args.gt_dir, args.pred_dir, args.out, roi_file=roi, settings=settings, figures=figures
        )
        _report_failures(rep.failures)
        print(f"{len(rep.cases)} cases analysed, {len(rep.failures)} failed -> {args.out}/topology.json")
        return status

    if args.command == "phantom":
        corruptions = [parse_corruption(c) for c in args.corrupt]
        written = cmd_phantom(args.out, _phantom_specs(args), corruptions, settings.label_map)
        print(f"{len(written)} files written to {args.out}")
        return 0
    raise AssertionError(args.command)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (InvocationError, ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cowtopo {args.command}: error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
