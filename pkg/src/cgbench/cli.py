"""Command-line entry point: gen, perturb, match, group, bench, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as cio
from .bench import BenchConfig, markdown_summary, make_pair, read_csv, run_benchmark
from .features import extract_and_match
from .geometry import RigidTransform
from .grouping import METHODS, GrouperParams, GroupingContext, run_method
from .synthdata import (
    SyntheticPair,
    add_gaussian_noise,
    bumpy_cloud,
    downsample_random,
    make_partial_pair,
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return __version__


def _emit(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text)


def _method_list(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    if text.strip() == "all":
        return list(METHODS)
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown method {', '.join(bad) or text!r}; valid: {', '.join(METHODS)}")
    return names


def build_parser() -> Parser:
    p = Parser(prog="cgbench", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen", help="write a synthetic pair directory")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--inlier-ratio", type=float,
                   help="fabricate a labelled correspondence set with this inlier ratio")
    g.add_argument("--n", type=int, help="correspondences (with --inlier-ratio) or cloud points")
    g.add_argument("--sigma-pr", type=float, default=None, help="noise std in pr")
    g.add_argument("--keep-ratio", type=float, help="random decimation of the target")
    g.add_argument("--overlap", type=float, help="target overlap of two partial views")

    q = sub.add_parser("perturb", help="add noise to and/or decimate a PLY cloud")
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--sigma-pr", type=float, default=0.0)
    q.add_argument("--keep-ratio", type=float, default=1.0)

    m = sub.add_parser("match", help="detect, describe and match a cloud pair")
    m.add_argument("--in", dest="inp", nargs="+", required=True,
                   help="pair directory, or source.ply target.ply")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--nms-radius-pr", type=float, default=3.0)
    m.add_argument("--support-radius-pr", type=float, default=15.0)
    m.add_argument("--descriptor", choices=("reference", "oracle"), default="reference")
    m.add_argument("--pose", help="ground-truth pose file (oracle descriptor)")

    gr = sub.add_parser("group", help="run one grouping method on a correspondence JSON")
    gr.add_argument("--method", required=True, choices=METHODS, metavar="{" + ",".join(METHODS) + "}")
    gr.add_argument("--in", dest="inp", required=True)
    gr.add_argument("--out", required=True)
    gr.add_argument("--config", help="JSON file of grouper parameter overrides")
    gr.add_argument("--seed", type=int)
    gr.add_argument("--pr", type=float, help="resolution used for pr-scaled thresholds")
    gr.add_argument("--pair", help="pair directory: source resolution sets pr")

    b = sub.add_parser("bench", help="run a nuisance sweep and write reports")
    b.add_argument("--config", help="benchmark config JSON (flags override)")
    b.add_argument("--out", help="output directory for report.{csv,json,md}, or - for CSV on stdout")
    b.add_argument("--method", type=_method_list, help="comma-separated methods or 'all'")
    b.add_argument("--seed", type=int)
    b.add_argument("--jobs", type=int)
    b.add_argument("--eps-pr", type=float)
    b.add_argument("--tau-reg", type=float)
    b.add_argument("--nms-radius-pr", type=float)
    b.add_argument("--support-radius-pr", type=float)
    b.add_argument("--inlier-ratio", type=float)
    b.add_argument("--n", type=int)
    b.add_argument("--sigma-pr", type=float)
    b.add_argument("--load-pair", help="evaluate a stored pair directory instead of generating")

    r = sub.add_parser("report", help="markdown summary of a raw CSV report")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    if args.out == "-":
        raise UsageError("gen writes a directory; --out - is not supported")
    if args.inlier_ratio is not None:
        if args.keep_ratio is not None or args.overlap is not None:
            raise UsageError("--inlier-ratio cannot be combined with --keep-ratio/--overlap")
        sigma = 0.5 if args.sigma_pr is None else args.sigma_pr
        cfg = BenchConfig(nuisance="inlier_ratio", levels=[args.inlier_ratio],
                          n_corr=args.n or 1000, pos_sigma_pr=sigma)
        pair = make_pair(cfg, args.inlier_ratio, args.seed)
        cio.save_pair(args.out, pair)
        return 0

    rng = np.random.default_rng(args.seed)
    model = bumpy_cloud(args.n or 2000, args.seed)
    gt = RigidTransform.random(rng, max_translation=1.0)
    applied = []
    if args.overlap is not None:
        pair = make_partial_pair(model, args.overlap, gt, args.seed + 1)
        source, target = pair.source, pair.target
        applied.append(("overlap", args.overlap))
    else:
        source, target = model, model.transformed(gt)
    if args.keep_ratio is not None:
        target = downsample_random(target, args.keep_ratio, args.seed + 2)
        applied.append(("density", args.keep_ratio))
    if args.sigma_pr:
        target = add_gaussian_noise(target, args.sigma_pr, args.seed + 3)
        applied.append(("noise", args.sigma_pr))
    nuisance, level = applied[0] if applied else ("none", 0.0)
    meta = {"nuisance": "+".join(a for a, _ in applied) or nuisance, "level": level,
            "seed": args.seed, "pr": model.resolution}
    meta.update({k: v for k, v in applied})
    cio.save_pair(args.out, SyntheticPair(source, target, gt, None, meta))
    return 0


def cmd_perturb(args):
    cloud = cio.read_ply(args.inp)
    if args.keep_ratio != 1.0:
        cloud = downsample_random(cloud, args.keep_ratio, args.seed)
    if args.sigma_pr:
        cloud = add_gaussian_noise(cloud, args.sigma_pr, args.seed + 1)
    _emit(cio.ply_text(cloud), args.out)
    return 0


def cmd_match(args):
    gt = None
    if len(args.inp) == 1:
        pair = cio.load_pair(args.inp[0])
        source, target, gt = pair.source, pair.target, pair.gt
    elif len(args.inp) == 2:
        source, target = cio.read_ply(args.inp[0]), cio.read_ply(args.inp[1])
    else:
        raise UsageError("--in takes a pair directory or two PLY files")
    if args.pose:
        gt = cio.read_pose(args.pose)
    cset = extract_and_match(source, target, nms_radius_pr=args.nms_radius_pr,
                             support_radius_pr=args.support_radius_pr, descriptor=args.descriptor,
                             gt=gt, seed=args.seed)
    _emit(cio.correspondences_text(cset), args.out)
    return 0


def cmd_group(args):
    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(overrides, dict):
        raise ValueError("grouper config must be a JSON object")
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    params = GrouperParams.from_dict(overrides)
    source = target = None
    pr = args.pr
    if args.pair:
        pair = cio.load_pair(args.pair)
        source, target = pair.source, pair.target
        if pr is None:
            pr = float(pair.meta.get("pr", source.resolution))
    cset = cio.load_correspondences(args.inp, source, target)
    if pr is None:
        pr = 1.0
    ctx = GroupingContext(pr, source, target)
    result = run_method(args.method, cset, params, ctx)
    _emit(json.dumps(result.to_json()) + "\n", args.out)
    return 0


def cmd_bench(args):
    if args.load_pair and args.inlier_ratio is not None:
        raise UsageError("--inlier-ratio conflicts with --load-pair")
    if args.load_pair and (args.n is not None or args.sigma_pr is not None):
        raise UsageError("--n/--sigma-pr describe generated data and conflict with --load-pair")
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(cfg, dict):
        raise ValueError("bench config must be a JSON object")
    flag_map = {
        "method": "methods", "seed": "rng_seed", "jobs": "jobs", "eps_pr": "epsilon_pr",
        "tau_reg": "tau_reg", "nms_radius_pr": "nms_radius_pr",
        "support_radius_pr": "support_radius_pr", "inlier_ratio": "inlier_ratio",
        "n": "n_corr", "sigma_pr": "pos_sigma_pr", "load_pair": "pair_dir",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag)
        if val is not None:
            cfg[key] = val
    if args.out and args.out != "-":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.update(csv_path=str(out / "report.csv"), json_path=str(out / "report.json"),
                   md_path=str(out / "report.md"))
    elif args.out == "-":
        cfg.update(csv_path=None, json_path=None, md_path=None)
    config = BenchConfig.from_dict(cfg)
    if not args.out and not (config.csv_path or config.json_path or config.md_path):
        raise UsageError("no output: give --out or set csv_path/json_path/md_path in the config")
    report = run_benchmark(config)
    if args.out == "-":
        _emit(report.csv_text(), "-")
    failures = sum(1 for r in report.rows if r.error)
    if failures:
        print(f"{failures} method run(s) failed; see the JSON report", file=sys.stderr)
    return 0


def cmd_report(args):
    _emit(markdown_summary(read_csv(Path(args.inp).read_text())), args.out)
    return 0


COMMANDS = {"gen": cmd_gen, "perturb": cmd_perturb, "match": cmd_match, "group": cmd_group,
            "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cgbench {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"cgbench {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
