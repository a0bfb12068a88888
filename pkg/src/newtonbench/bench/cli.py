"""Command-line front end.

Subcommands: gen (datasets), bench (training runs), ablate (lambda sweep),
check (numeric self-tests), slice (gradient slices). Exit codes: 0 success,
2 bad configuration, 3 numeric failure.
"""

import argparse
import sys

import numpy as np

from ..errors import (
    ConfigError,
    NonFiniteResult,
    SingularMatrix,
    SolverFailure,
    TooLarge,
)
from . import checks, datagen, report, slices, trainers

DEFAULT_LAMBDAS = "0.001,0.003,0.01,0.03,0.1,0.3,1,3,10,30,100,300,1000"


def _emit(text, out):
    if out:
        report.write_text(out, text)
    else:
        sys.stdout.write(text)


def _parse_floats(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated float list, got {text!r}")


def _cfg_overrides(args, task):
    keys = (
        "method",
        "seed",
        "steps",
        "batch",
        "n",
        "grid",
        "sigma",
        "samples",
        "tau",
        "beta",
        "lam",
        "data_path",
    )
    over = {"task": task}
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    return over


def _cmd_gen(args):
    if args.kind == "rank":
        ds = datagen.gen_ranking_data(args.seed, args.n, args.count, args.feature_dim)
        datagen.save_rank_dataset(ds, args.out)
    else:
        ds = datagen.gen_grid_data(args.seed, args.grid, args.count, args.feature_dim)
        datagen.save_grid_dataset(ds, args.out)
    print(f"wrote {args.count} records to {args.out}", file=sys.stderr)
    return 0


def _cmd_bench(args):
    task = args.kind
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        seed_list = list(range(args.seeds))
    else:
        seed_list = [args.seed if args.seed is not None else 0]
    if args.mode:
        modes = [args.mode]
    else:
        modes = [
            m
            for m in trainers.MODES
            if not (args.method == "ss_algorithm" and m == "nl_hessian")
        ]
    over = _cfg_overrides(args, task)
    mode_runs = {}
    echo = None
    for mode in modes:
        runs = []
        lam = None
        for seed in seed_list:
            cfg = trainers.ExperimentConfig(**{**over, "mode": mode, "seed": seed})
            lam = cfg.lam
            if echo is None:
                echo = trainers.config_echo(cfg)
            rep = trainers.run_experiment(cfg)
            print(
                f"[{mode} seed={seed}] final={rep.final} ({rep.wall_clock:.1f}s)",
                file=sys.stderr,
            )
            runs.append(rep)
        mode_runs[mode] = (lam, runs)
    echo["mode"] = "+".join(modes)
    echo["seed"] = seed_list[0]
    echo["seeds"] = seed_list
    if args.lam is None:
        echo["lam"] = "preset"
    doc = report.build_report(task, echo, mode_runs)
    report.validate_report(doc)
    text = report.render_tsv(doc) if args.format == "tsv" else report.render_json(doc)
    _emit(text, args.out)
    return 0


def _cmd_ablate(args):
    lam_grid = _parse_floats(args.lambdas)
    over = _cfg_overrides(args, "rank")
    over.pop("lam", None)
    cfg = trainers.ExperimentConfig(**over)
    reports, columns = trainers.ablate_lambda(cfg, lam_grid)
    for rep in reports:
        print(
            f"[{rep.config['mode']} lam={rep.config['lam']}] "
            f"final={rep.final} ({rep.wall_clock:.1f}s)",
            file=sys.stderr,
        )
    _emit(report.ablation_tsv(lam_grid, columns), args.out)
    return 0


def _cmd_check(args):
    if args.what == "grad":
        out = checks.check_grad(seed=args.seed)
    elif args.what == "lemmas":
        out = checks.check_lemmas(seed=args.seed)
    else:
        out = checks.check_oracles(seed=args.seed, grids_per_size=args.grids)
    for key in sorted(out):
        if key == "per_method":
            for method in sorted(out[key]):
                print(f"{method}: {out[key][method]:.3e}")
        else:
            print(f"{key}: {out[key]}")
    return 0 if out["ok"] else 3


def _cmd_slice(args):
    if args.base is not None:
        base = np.asarray(_parse_floats(args.base))
        if base.size < 2:
            raise ConfigError("--base needs at least two values")
    else:
        base = np.linspace(2.0, -2.0, args.n)
    grad_fn = slices.ranking_grad_fn(
        args.method, base.size, tau=args.tau, beta=args.beta
    )
    table = slices.gradient_slice(
        grad_fn, base, args.coord, args.lo, args.hi, args.steps, fisher_lambda=args.lam
    )
    _emit(slices.slice_tsv(table, args.coord), args.out)
    return 0


def _add_common_run_flags(p, task):
    p.add_argument("--mode", choices=trainers.MODES)
    p.add_argument("--lambda", dest="lam", type=float, help="Tikhonov strength")
    seeding = p.add_mutually_exclusive_group()
    seeding.add_argument("--seed", type=int)
    seeding.add_argument("--seeds", type=int, help="fan out over seeds 0..k-1")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    if task == "rank":
        p.add_argument("--n", type=int, help="ranking length")
        p.add_argument("--tau", type=float, help="relaxation temperature")
        p.add_argument("--beta", type=float, help="sorting-network steepness")
    else:
        p.add_argument("--grid", type=int, help="grid side length")
        p.add_argument("--sigma", type=float, help="smoothing noise scale")
        p.add_argument("--samples", type=int, help="smoothing sample count")
    p.add_argument("--data", dest="data_path", help="JSON-lines dataset to reuse")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "tsv"), default="json")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="newtonbench",
        description="Curvature-corrected training benchmarks for hard losses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen_sub = gen.add_subparsers(dest="kind", required=True)
    for kind in ("rank", "path"):
        g = gen_sub.add_parser(kind)
        if kind == "rank":
            g.add_argument("--n", type=int, default=5, help="ranking length")
        else:
            g.add_argument("--grid", type=int, default=4, help="grid side length")
        g.add_argument("--count", type=int, default=384)
        g.add_argument("--seed", type=int, default=0)
        g.add_argument("--feature-dim", type=int, default=6)
        g.add_argument("--out", required=True)
        g.set_defaults(fn=_cmd_gen)

    bench = sub.add_parser("bench", help="run a training benchmark")
    bench_sub = bench.add_subparsers(dest="kind", required=True)
    rank = bench_sub.add_parser("rank")
    rank.add_argument("--method", choices=trainers.RANK_METHODS, default="neuralsort")
    _add_common_run_flags(rank, "rank")
    rank.set_defaults(fn=_cmd_bench)
    path = bench_sub.add_parser("path")
    path.add_argument("--method", choices=trainers.PATH_METHODS, default="ss_loss")
    _add_common_run_flags(path, "path")
    path.set_defaults(fn=_cmd_bench)

    ablate = sub.add_parser("ablate", help="sweep the damping strength")
    ablate_sub = ablate.add_subparsers(dest="what", required=True)
    lam = ablate_sub.add_parser("lambda")
    lam.add_argument("--method", choices=trainers.RANK_METHODS, default="neuralsort")
    lam.add_argument(
        "--lambdas", default=DEFAULT_LAMBDAS, help="comma-separated ascending values"
    )
    lam.add_argument("--seed", type=int)
    lam.add_argument("--steps", type=int)
    lam.add_argument("--batch", type=int)
    lam.add_argument("--n", type=int)
    lam.add_argument("--tau", type=float)
    lam.add_argument("--beta", type=float)
    lam.add_argument("--data", dest="data_path")
    lam.add_argument("--out")
    lam.set_defaults(fn=_cmd_ablate)

    check = sub.add_parser("check", help="numeric self-tests")
    check_sub = check.add_subparsers(dest="what", required=True)
    for what in ("grad", "lemmas", "oracles"):
        c = check_sub.add_parser(what)
        c.add_argument("--seed", type=int, default=0)
        if what == "oracles":
            c.add_argument("--grids", type=int, default=100, help="grids per size")
        c.set_defaults(fn=_cmd_check)

    sl = sub.add_parser("slice", help="gradient slice tables")
    sl_sub = sl.add_subparsers(dest="what", required=True)
    grad = sl_sub.add_parser("grad")
    grad.add_argument("--method", choices=trainers.RANK_METHODS, default="neuralsort")
    grad.add_argument("--coord", type=int, required=True)
    grad.add_argument("--n", type=int, default=5)
    grad.add_argument("--base", help="comma-separated base vector")
    grad.add_argument("--lo", type=float, default=-20.0)
    grad.add_argument("--hi", type=float, default=20.0)
    grad.add_argument("--steps", type=int, default=101)
    grad.add_argument(
        "--lambda", dest="lam", type=float, help="apply the Fisher transform"
    )
    grad.add_argument("--tau", type=float)
    grad.add_argument("--beta", type=float)
    grad.add_argument("--out")
    grad.set_defaults(fn=_cmd_slice)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteResult, SingularMatrix, SolverFailure, TooLarge) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
