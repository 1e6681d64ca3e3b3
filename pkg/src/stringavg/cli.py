"""Command-line entry point: ``stringavg {solve,batch,gen,verify}``."""

from __future__ import annotations

import argparse
import dataclasses
import glob
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import experiment as ex
from .linear import write_coo, write_vector
from .operators import Property, check_property
from .problems import (APPENDIX_NAMES, RandomQcSpec, build_appendix_problem,
                       generate_random_qc, write_manifest)
from .strings import InequalityViolation
from .tomography import PhantomSpec, build_projection_matrix

log = logging.getLogger("stringavg")


def _apply_overrides(cfg, args):
    changes = {}
    problem = dict(cfg.problem)
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "tol", None):
        changes["tolerances"] = tuple(args.tol)
    if getattr(args, "max_iters", None):
        changes["max_iters"] = args.max_iters
    if getattr(args, "seed", None) is not None:
        problem["seed"] = args.seed
    if getattr(args, "small", False) and cfg.kind == "random-qc":
        problem["n"], problem["M"] = ex.SMALL_PRESET["n"], ex.SMALL_PRESET["M"]
    if getattr(args, "broyden_classical", False) and cfg.kind == "appendix":
        problem["broyden_classical"] = True
    if not changes and problem == cfg.problem:
        return cfg
    relabel = {"label": ""} if ("mode" in changes or problem != cfg.problem) else {}
    return dataclasses.replace(cfg, problem=problem, **changes, **relabel)


def _summary_line(res):
    tols = " ".join(f"{t:g}:{'-' if k is None else k}" for t, k in res.iterations_to_tol.items())
    return (f"{res.config.label}: {res.status.value} k={res.iterations} [{tols}] "
            f"violation={res.trace.rows[-1].violation:.3e}")


def cmd_solve(args):
    cfg = _apply_overrides(ex.load_config(args.config), args)
    res = ex.run_experiment(cfg, args.out)
    print(_summary_line(res))
    return res.exit_code


def _run_one(cfg_out):
    cfg, out = cfg_out
    return ex.run_experiment(cfg, out)


def cmd_batch(args):
    paths = sorted(glob.glob(os.path.join(args.directory, "*.ini")))
    if not paths:
        raise ex.ConfigError(f"{args.directory}: no *.ini configs found")
    cfgs = [_apply_overrides(ex.load_config(p), args) for p in paths]
    if args.pair:
        cfgs = [c.with_mode(m) for c in cfgs for m in ("ue", "we")]
    jobs = [(c, args.out) for c in cfgs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for r in results:
        print(_summary_line(r))
    tols = [None] + list(results[0].config.tolerances)
    for tol in tols:
        cmp = ex.batch_compare(results, tol)
        name = "comparison.csv" if tol is None else f"comparison_tol{tol:g}.csv"
        text = cmp.to_csv()
        print(f"# {name}\n{text}", end="")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, name), "w", newline="\n") as fh:
                fh.write(text)
    return 0


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_gen(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    modes = ("ue", "we")
    if args.what == "appendix":
        names = APPENDIX_NAMES if args.name == "all" else (args.name,)
        for name in names:
            inst = build_appendix_problem(name, broyden_classical=args.broyden_classical)
            write_manifest(os.path.join(out, f"{inst.name}.manifest"), inst)
            for m in modes:
                cfg = ex.ExperimentConfig("appendix", {"name": name, "broyden_classical":
                                                       args.broyden_classical}, mode=m)
                _write(os.path.join(out, cfg.label + ".ini"), ex.dump_config(cfg))
    elif args.what == "random-qc":
        n, M, count = ((ex.SMALL_PRESET[k] for k in ("n", "M", "count")) if args.small
                       else (ex.FULL_QC[k] for k in ("n", "M", "count")))
        count = args.count or count
        first = args.seed or 0
        for seed in range(first, first + count):
            inst = generate_random_qc(RandomQcSpec(n, M, seed))
            write_manifest(os.path.join(out, f"{inst.name}.manifest"), inst)
            for m in modes:
                cfg = ex.ExperimentConfig("random-qc", {"n": n, "M": M, "seed": seed}, mode=m,
                                          tolerances=(1e-4,))
                _write(os.path.join(out, cfg.label + ".ini"), ex.dump_config(cfg))
    else:
        spec = PhantomSpec()
        proj = build_projection_matrix(spec)
        write_coo(os.path.join(out, "A.coo"), proj.A)
        write_vector(os.path.join(out, "b.txt"), proj.b)
        write_vector(os.path.join(out, "x_true.txt"), proj.x_true)
        write_vector(os.path.join(out, "views.txt"), proj.view_of_row)
        _write(os.path.join(out, "geometry.manifest"), proj.manifest())
        for m in modes:
            cfg = ex.ExperimentConfig(
                "linear", {"matrix": "A.coo", "rhs": "b.txt", "solution": "x_true.txt",
                           "blocks_file": "views.txt", "strategy": "residual"},
                E=spec.views, mode=m, tolerances=(1e-8,), max_iters=50,
                label=f"tomography-{m}")
            _write(os.path.join(out, cfg.label + ".ini"), ex.dump_config(cfg))
    print(f"wrote {args.what} files to {out}")
    return 0


def cmd_verify(args):
    cfg = _apply_overrides(ex.load_config(args.config), args)
    op, x0, _ = ex.build_operator(cfg)
    ok = True
    z = op.reference
    if z is None:
        print("SKIP QNE checks: no reference solution")
    else:
        rng = np.random.default_rng(args.seed or 0)
        scale = max(1.0, float(np.linalg.norm(x0 - z)) / np.sqrt(op.dim))
        samples = [x0 + scale * rng.standard_normal(op.dim) for _ in range(args.samples)]
        for t, T in enumerate(op.pool):
            rep = check_property(T, Property.QNE, samples, [z])
            ok &= rep.passed
            print(f"{'PASS' if rep.passed else 'FAIL'} QNE operator {t}: "
                  f"{len(rep.violations)} violations in {rep.sample_count} samples")
    run = dataclasses.replace(cfg, mode="ue", assert_fejer=z is not None, label="verify")
    try:
        res = ex.run_experiment(run)
        print(f"PASS sigma_max >= 1 and Fejer monotonicity over {res.iterations} iterations")
    except InequalityViolation as exc:
        ok = False
        print(f"FAIL {exc}")
    return 0 if ok else 4


def build_parser():
    ap = argparse.ArgumentParser(prog="stringavg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--mode", choices=("ue", "we"))
        p.add_argument("--tol", type=float, action="append")
        p.add_argument("--max-iters", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--small", action="store_true")
        p.add_argument("--broyden-classical", action="store_true")

    p = sub.add_parser("solve", help="run a single config")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("batch", help="run every *.ini in a directory and compare UE/WE")
    p.add_argument("directory")
    p.add_argument("--pair", action="store_true", help="run each config in both modes")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("gen", help="emit problem files and paired configs")
    p.add_argument("what", choices=("appendix", "random-qc", "tomography"))
    p.add_argument("name", nargs="?", default="all")
    p.add_argument("--count", type=int)
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="run the property checks on a problem")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=200)
    common(p)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
