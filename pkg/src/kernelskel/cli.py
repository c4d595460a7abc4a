"""Command-line interface: ``kernelskel <subcommand> [flags]``.

Subcommands: proxy-select, compress, h2-build, exp1 ... exp5. Global flags
(``--seed``, ``--threads``, ``--out-dir``, ``--config``) may appear before or
after the subcommand. Relative output paths are resolved against ``--out-dir``.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .compress import compress_hybrid, compress_proxy, diagnostics
from .experiments import (EXPERIMENTS, InfeasibleConfig, check_h2_feasible, config_from_mapping,
                          h2_run, parse_pair, parse_points, read_config_file, run_experiment,
                          write_csv)
from .geometry import Box, DomainPair, PointSet, ShellRegion, read_points, write_points
from .kernels import parse_kernel
from .linalg import save_matrix
from .proxy import ProxySet, SaturationError, default_near_band, parse_scheme, select_proxy

REPORT_COLUMNS = ("row_index", "err_Yp", "err_Y0", "ratio_max", "ratio_avg")
STATS_COLUMNS = ("N", "S_N", "S_inadm", "S_total", "E", "build_seconds")
_GLOBAL_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": ".", "config": None}


def _global_flags(parser, suppress: bool):
    d = (lambda name: argparse.SUPPRESS) if suppress else (lambda name: _GLOBAL_DEFAULTS[name])
    parser.add_argument("--seed", type=int, default=d("seed"), help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=d("threads"),
                        help="BLAS threads (default 1)")
    parser.add_argument("--out-dir", default=d("out_dir"), help="directory for outputs")
    parser.add_argument("--config", default=d("config"), help="key=value configuration file")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kernelskel", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("proxy-select", parents=[common], help="select proxy points for a pair")
    s.add_argument("--kernel", required=True)
    s.add_argument("--pair", required=True, help="far-apart:<d>, nearby:<d>, cube:..., level:...")
    s.add_argument("--scheme", default="id", help="id, id-adaptive, random:<n> or surface:<n>")
    s.add_argument("--out", required=True, help="point file for the proxies")

    s = sub.add_parser("compress", parents=[common], help="compress K(X0, .) with proxies")
    s.add_argument("--kernel", required=True)
    s.add_argument("--pair", required=True)
    s.add_argument("--x0", required=True, help="point file or random:<n> / grid:<n>")
    s.add_argument("--proxy", required=True, help="point file or scheme")
    s.add_argument("--y0", default="grid:10000", help="probe targets (file or gen-spec)")
    s.add_argument("--eps", type=float, default=1e-6,
                   help="relative tolerance; the ID threshold is eps*sqrt(#targets)")
    s.add_argument("--c", type=float, default=2.0, help="entry bound C of the sRRQR")
    s.add_argument("--hybrid", action="store_true", help="literal near targets plus far proxies")
    s.add_argument("--near", default=None,
                   help="near band half-width around the source center (hybrid)")
    s.add_argument("--report", required=True, help="per-row error CSV")
    s.add_argument("--weights", default=None, help="write W as a binary matrix file")
    s.add_argument("--skeleton", default=None, help="write the skeleton points")

    s = sub.add_parser("h2-build", parents=[common], help="build and audit an H2 matrix")
    s.add_argument("--kernel", required=True)
    s.add_argument("--n", type=float, required=True)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--adm", choices=("strong", "weak"), default="strong")
    s.add_argument("--mode", choices=("proxy", "hybrid", "srrqr"), default="proxy")
    s.add_argument("--scheme", default="id")
    s.add_argument("--tau", type=float, default=1e-6)
    s.add_argument("--c", type=float, default=2.0)
    s.add_argument("--leaf-cap", type=int, default=300)
    s.add_argument("--allow-large", action="store_true", help="permit N above 1e5")
    s.add_argument("--stats", required=True, help="stats CSV")

    for name in EXPERIMENTS:
        s = sub.add_parser(name, parents=[common], help=f"run {name}")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config field (repeatable)")
    return p


def _path(args, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _load_proxy(args, k, pair) -> ProxySet:
    if Path(args.proxy).exists():
        return ProxySet(read_points(args.proxy), "file", pair)
    return select_proxy(k, pair, parse_scheme(args.proxy))


def cmd_proxy_select(args) -> int:
    pair = parse_pair(args.pair)
    k = parse_kernel(args.kernel, pair)
    t0 = time.perf_counter()
    ps = select_proxy(k, pair, parse_scheme(args.scheme))
    dt = time.perf_counter() - t0
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points(out, ps.points)
    print(f"|Yp|={len(ps)} rounds={ps.diagnostics.get('rounds', 0)} seconds={dt:.3f}")
    return 0


def _near_band(args, pair) -> Box:
    if args.near is None:
        return default_near_band(pair)
    h = float(args.near)
    c = pair.source.center
    band = Box(tuple(c - h), tuple(c + h))
    if not band.contains_box(pair.target.inner) or not pair.target.outer.contains_box(band):
        raise ValueError("near band must contain the inner box and fit in the outer box")
    return band


def cmd_compress(args) -> int:
    pair = parse_pair(args.pair)
    k = parse_kernel(args.kernel, pair)
    X0 = parse_points(args.x0, pair.source, args.seed)
    Y0 = parse_points(args.y0, pair.target, args.seed + 1)
    if args.hybrid:
        band = _near_band(args, pair)
        near = ShellRegion(band, pair.target.inner)
        far_pair = DomainPair(pair.source, ShellRegion(pair.target.outer, band), "weak")
        proxy = _load_proxy(args, k, far_pair)
        res, split = compress_hybrid(k, X0, Y0, near, proxy, C=args.c, tol=args.eps)
        extra = f" near={len(split.near)} far={len(split.far)}"
        probe = PointSet(Y0.points[split.far]) if len(split.far) else Y0
    else:
        proxy = _load_proxy(args, k, pair)
        res = compress_proxy(k, X0, proxy, C=args.c, tol=args.eps)
        extra = ""
        probe = Y0
    rep = diagnostics(k, X0, res, probe)
    rows = [(i, rep.err_Yp[i], rep.err_Y0[i], rep.ratio_max[i], rep.ratio_avg[i])
            for i in range(len(X0))]
    write_csv(_path(args, args.report), REPORT_COLUMNS, rows, None,
              {"rank": res.rank, "proxy_count": len(proxy), "seed": args.seed})
    if args.weights:
        save_matrix(_path(args, args.weights), res.W)
    if args.skeleton:
        write_points(_path(args, args.skeleton), X0[res.x_rep])
    ok = ~np.isnan(rep.ratio_max)
    rmax = float(rep.ratio_max[ok].max()) if ok.any() else 0.0
    print(f"rank={res.rank} |Yp|={len(proxy)} max_error={rep.max_pointwise:.3g} "
          f"max_ratio={rmax:.3g}{extra}")
    return 0


def cmd_h2_build(args) -> int:
    k = parse_kernel(args.kernel)
    N = int(args.n)
    check_h2_feasible(k, args.adm, args.mode, N, args.allow_large)
    _, s = h2_run(k, N, args.dim, args.adm, args.mode, parse_scheme(args.scheme), args.tau,
                  args.c, args.seed, args.leaf_cap)
    write_csv(_path(args, args.stats), STATS_COLUMNS,
              [(N, s.S_N, s.S_inadm, s.S_total, s.E, s.build_seconds)], None,
              {"kernel": k.name, "adm": args.adm, "mode": args.mode, "seed": args.seed,
               "E_sampled": s.E_sampled})
    print(f"N={N} S_N={s.S_N:.4g} S_inadm={s.S_inadm:.4g} S_total={s.S_total:.4g} "
          f"E={s.E:.3g} build_seconds={s.build_seconds:.3g}")
    return 0


def cmd_experiment(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        values[key] = val
    values.update(experiment=args.command, seed=str(args.seed), out_dir=args.out_dir)
    cfg = config_from_mapping(values)
    res = run_experiment(cfg)
    print(res.summary)
    for p in res.paths:
        print(f"wrote {p}")
    return 0


COMMANDS = {"proxy-select": cmd_proxy_select, "compress": cmd_compress,
            "h2-build": cmd_h2_build, **{e: cmd_experiment for e in EXPERIMENTS}}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.config and args.command not in EXPERIMENTS:
        print("error: --config applies to exp1..exp5", file=sys.stderr)
        return 2
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (InfeasibleConfig, SaturationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
