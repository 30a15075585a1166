"""Command line entry point: ``manifit {fit,sweep,project,gen,sizes}``.

Exit codes: 0 success, 2 configuration error, 3 pipeline stage failure.
The output directory comes from ``--out-dir``, else ``$MANIFIT_OUT_DIR``,
else ``./manifit-out``.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .atlas import read_atlas
from .errors import ConfigError, StageError
from .geometry import NoiseModel, read_cloud, sample_noisy, write_cloud
from .outman import OutputManifold, project_to_manifold
from .pipeline import (PipelineConfig, load_config, noise_regime_holds, reference_sample_sizes,
                       run_pipeline, sweep)

OUT_DIR_ENV = "MANIFIT_OUT_DIR"
DEFAULT_OUT_DIR = "manifit-out"


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = yaml.safe_load(val)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        unknown = set(overrides) - set(PipelineConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cfg.replace(**overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _cmd_fit(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    rep = run_pipeline(cfg, out_dir=out)
    m = rep.metrics
    print(f"hausdorff={m['hausdorff']:.4g} reach={float(m['reach']):.4g} "
          f"discs={m['n_discs']} total={rep.timings['total']:.1f}s -> {out}")
    tau = cfg.tau_hat if cfg.tau_hat is not None else cfg.tau
    if not noise_regime_holds(m["n"], m["D"], tau, m["sigma_hat"]):
        print(f"warning: n - D = {m['n'] - m['D']} is below tau^2 D / sigma_hat^2; "
              "sigma_hat may overestimate the noise", file=sys.stderr)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [yaml.safe_load(v) for v in args.values.split(",") if v.strip()] if args.values else []
    res = sweep(cfg, args.vary, values, out_dir=_out_dir(args), parallel=args.parallel)
    failed = sum(1 for m in res["metrics"] if m["status"] != "ok")
    slope = "nan" if res["slope"] is None else "%.4g" % res["slope"]
    print(f"{len(values)} runs, {failed} failed, slope={slope}")
    return 0


def _cmd_project(args) -> int:
    atlas = read_atlas(args.atlas)
    pts, _ = read_cloud(args.input)
    if pts.shape[1] != atlas.n:
        raise ConfigError(f"cloud has n={pts.shape[1]}, atlas has n={atlas.n}")
    om = OutputManifold(atlas, args.c)
    tol = args.tol_rel * om.r
    out_pts = np.empty_like(pts)
    extra = np.empty((len(pts), 2))
    failed = 0
    for i, x in enumerate(pts):
        try:
            res = project_to_manifold(om, x, tol, args.max_iter)
            out_pts[i] = res.point
            extra[i] = res.final_residual, res.iterations
            failed += not res.converged
        except StageError:
            out_pts[i] = x
            extra[i] = np.nan, -1
            failed += 1
    out = Path(args.output) if args.output else _out_dir(args) / "projected.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cloud(out, out_pts, extra)
    if failed:
        print(f"{failed} of {len(pts)} points did not converge", file=sys.stderr)
    print(f"wrote {len(pts)} points to {out}")
    return 0


def _cmd_gen(args) -> int:
    cfg = _config(args)
    M = cfg.manifold()
    count = args.count if args.count is not None else cfg.N0
    cloud = sample_noisy(M, NoiseModel(cfg.sigma, cfg.seed), count)
    out = Path(args.output) if args.output else _out_dir(args) / "cloud.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cloud(out, cloud.points)
    print(f"wrote {count} points to {out}")
    return 0


def _cmd_sizes(args) -> int:
    cfg = _config(args)
    M = cfg.manifold()
    tau = cfg.tau_hat if cfg.tau_hat is not None else float(M.reach)
    r_c = (max(tau / (8 * cfg.d ** 2), cfg.r_c_sigma * cfg.sigma) if cfg.r_c == "auto"
           else float(cfg.r_c))
    n0, n = reference_sample_sizes(M.volume, cfg.d, cfg.n, tau, r_c, cfg.sigma,
                                   eta=args.eta, C=args.C)
    print(f"N0 = {n0:.4g}  N = {n:.4g}  (C = {args.C:g}, eta = {args.eta:g}; configured "
          f"N0 = {cfg.N0}, N2 = {cfg.N2})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifit", description="Fit a smooth manifold to noisy samples.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML file with PipelineConfig fields")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override one config field (repeatable)")
            sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out-dir", help=f"output directory (env {OUT_DIR_ENV})")

    sp = sub.add_parser("fit", help="run the pipeline once and write atlas, Rnet and metrics")
    common(sp)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("sweep", help="one run per value of a parameter")
    common(sp)
    sp.add_argument("--vary", required=True, help="sigma, N, D or k")
    sp.add_argument("--values", default="", help="comma separated values")
    sp.add_argument("--parallel", type=int, default=1, help="worker processes")
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("project", help="Newton-project a point cloud onto a saved output manifold")
    common(sp, config=False)
    sp.add_argument("--atlas", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.add_argument("--tol-rel", type=float, default=1e-9, help="tolerance in units of r")
    sp.add_argument("--max-iter", type=int, default=12)
    sp.add_argument("--c", type=float, default=0.25, help="tube constant c in c r / d")
    sp.set_defaults(func=_cmd_project)

    sp = sub.add_parser("gen", help="write a noisy sample of the configured manifold")
    common(sp)
    sp.add_argument("--count", type=int)
    sp.add_argument("--output")
    sp.set_defaults(func=_cmd_gen)

    sp = sub.add_parser("sizes", help="print the asymptotic sample-size bound for the configuration")
    common(sp)
    sp.add_argument("--C", type=float, default=1.0, help="value for every universal constant")
    sp.add_argument("--eta", type=float, default=0.01, help="failure probability")
    sp.set_defaults(func=_cmd_sizes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        # unreadable or malformed input files count as configuration problems
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
