"""Experiment runners: configuration, seeding and CSV output for exp1 to exp5.

Every CSV starts with ``# schema-version: 1`` followed by ``# experiment``,
``# seed`` and ``# config-hash`` comment lines, then one header row. Floats
are written with ``repr`` (shortest round-trip form), so identical configs
give byte-identical files apart from timing columns.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .compress import (compress_proxy, default_threshold, diagnostics, evaluate_approx,
                       id_compress, refine_weights)
from .geometry import (Box, DomainPair, GridApprox, PointSet, RandomUniform, ShellRegion,
                       cube_pair, far_apart_pair, generate_points, nearby_pair, read_points)
from .h2 import Mode, audit, build_h2, build_tree, level_domain_pair, uniform_cloud
from .kernels import Kernel, assemble, parse_kernel
from .linalg import FixedRank, Threshold, aca, truncated_svd
from .proxy import IdSelectParams, Random, Surface, default_near_band, parse_scheme, select_proxy

SCHEMA_VERSION = 1
EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4", "exp5")
EXP2_METHODS = ("proxy-id", "proxy-random", "refined-id", "direct-srrqr", "svd", "aca")
# H² runs above this size need allow_large
DESK_MAX_N = 100_000
_CHUNK = 8192


class InfeasibleConfig(ValueError):
    """The configuration asks for something the method cannot do."""


# ---------------------------------------------------------------- parsing

def parse_pair(spec: str) -> DomainPair:
    """Domain pair from text.

    ``far-apart:<d>``, ``nearby:<d>``,
    ``cube:<x_half>,<outer_half>,<inner_half>:<d>[:weak]`` or
    ``level:<k>:<L>:<d>[:weak]`` (the level-k pair of a tree on ``[0, L]^d``).
    """
    head, *rest = spec.strip().split(":")
    try:
        if head == "far-apart":
            return far_apart_pair(int(rest[0]) if rest else 2)
        if head == "nearby":
            return nearby_pair(int(rest[0]) if rest else 2)
        if head == "cube":
            x, o, i = (float(v) for v in rest[0].split(","))
            kind = rest[2] if len(rest) > 2 else "strong"
            return cube_pair(x, o, i, int(rest[1]), kind)
        if head == "level":
            kind = rest[3] if len(rest) > 3 else "strong"
            return level_domain_pair(int(rest[0]), float(rest[1]), int(rest[2]), kind)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad pair spec {spec!r}: {exc}") from None
    raise ValueError(f"unknown pair spec {spec!r}")


def parse_points(spec: str, region, seed: int = 0) -> PointSet:
    """``random:<n>``, ``grid:<n>`` in ``region``, or a point file path."""
    head, _, arg = spec.partition(":")
    if head == "random" and arg:
        return generate_points(region, RandomUniform(int(arg), seed))
    if head == "grid" and arg:
        return generate_points(region, GridApprox(int(arg)))
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"point spec {spec!r} is neither a generator nor a file")
    return read_points(path)


def _is_gen_spec(spec: str) -> bool:
    head, _, arg = spec.partition(":")
    return head in ("random", "grid") and arg.isdigit()


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment run. Unused fields are ignored by a runner."""

    experiment: str
    kernel: str = "inv-dist"
    dim: int = 2
    admissibility: str = "strong"
    pair: str | None = None
    x0: str = "random:1000"
    y0_counts: tuple = (4000, 16000, 64000)
    n_list: tuple = (5000, 10000)
    tol: float = 1e-6
    C: float = 2.0
    scheme: str = "id"
    mode: str = "proxy"
    methods: tuple = EXP2_METHODS
    random_count: int = 2000
    probe_count: int = 10000
    leaf_cap: int = 300
    repeats: int = 3
    allow_large: bool = False
    seed: int = 0
    out_dir: str = "."

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        sizes = [self.random_count, self.probe_count, self.leaf_cap, self.repeats,
                 *self.y0_counts, *self.n_list]
        if any(int(s) < 1 for s in sizes):
            raise ValueError("sizes must be positive")
        if self.C < 1.0:
            raise ValueError("C must be at least 1")
        unknown = set(self.methods) - set(EXP2_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if not _is_gen_spec(self.x0) and not Path(self.x0).exists():
            raise FileNotFoundError(f"x0 file {self.x0!r} does not exist")

    def config_hash(self) -> str:
        """Hash of every field except the output directory."""
        d = asdict(self)
        d.pop("out_dir")
        text = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _coerce(f, text: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind.startswith("tuple"):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if f.name == "methods":
            return tuple(parts)
        return tuple(int(float(p)) for p in parts)
    if kind.startswith("bool"):
        if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"{f.name}: expected a boolean, got {text!r}")
        return text.lower() in ("1", "true", "yes")
    if kind.startswith("int"):
        return int(float(text))
    if kind.startswith("float"):
        return float(text)
    return text


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from string values (config files, command-line overrides)."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    kw = {}
    for key, text in values.items():
        name = key.strip().replace("-", "_")
        if name not in known:
            raise ValueError(f"unknown config key {key!r}")
        kw[name] = _coerce(known[name], str(text).strip()) if isinstance(text, str) else text
    return ExperimentConfig(**kw)


def read_config_file(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------- CSV

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, columns, rows, cfg: ExperimentConfig | None = None, meta: dict | None = None):
    """Write the schema header, the column row and ``rows`` (sequences or dicts)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema-version: {SCHEMA_VERSION}\n")
        if cfg is not None:
            fh.write(f"# experiment: {cfg.experiment}\n")
            fh.write(f"# seed: {cfg.seed}\n")
            fh.write(f"# config-hash: {cfg.config_hash()}\n")
        for key, val in (meta or {}).items():
            fh.write(f"# {key}: {_fmt(val)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in vals])
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """``(header comments, rows as dicts of strings)``."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
        else:
            lines.append(line)
    return meta, list(csv.DictReader(lines))


# ---------------------------------------------------------------- helpers

@dataclass
class ExperimentResult:
    paths: list
    summary: str
    data: dict = field(default_factory=dict)


def _median_time(fn, repeats: int):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def _pair_of(cfg: ExperimentConfig, default: str) -> DomainPair:
    return parse_pair(cfg.pair or f"{default}:{cfg.dim}")


def _kernel(cfg: ExperimentConfig, pair: DomainPair | None = None) -> Kernel:
    return parse_kernel(cfg.kernel, pair)


def _source_points(cfg: ExperimentConfig, pair: DomainPair) -> PointSet:
    return parse_points(cfg.x0, pair.source, cfg.seed)


def _scheme(cfg: ExperimentConfig):
    return parse_scheme(cfg.scheme)


def low_rank_errors(k: Kernel, X, Y, L: np.ndarray, R: np.ndarray) -> tuple[float, float]:
    """Average entrywise error ``||K(X, Y) - L R||_F / sqrt(|X| |Y|)`` and the max error.

    The average is the RMS over entries, the block version of the per-row
    ``||e_i(Y)||_2 / sqrt(|Y|)``. Assembled in column chunks.
    """
    X = X.points if isinstance(X, PointSet) else X
    Y = Y.points if isinstance(Y, PointSet) else Y
    sq, mx = 0.0, 0.0
    for c0 in range(0, Y.shape[0], _CHUNK):
        E = assemble(k, X, Y[c0:c0 + _CHUNK]) - L @ R[:, c0:c0 + _CHUNK]
        sq += float(np.einsum("ij,ij->", E, E))
        mx = max(mx, float(np.abs(E).max()))
    return math.sqrt(sq / (X.shape[0] * Y.shape[0])), mx


def error_field(k: Kernel, X0, res, probe) -> np.ndarray:
    """Mean over non-skeleton rows of ``|e_i(y)|`` at every probe point."""
    X = X0.points if isinstance(X0, PointSet) else X0
    Y = probe.points if isinstance(probe, PointSet) else probe
    rest = np.ones(X.shape[0], dtype=bool)
    rest[res.x_rep] = False
    out = np.zeros(Y.shape[0])
    if not rest.any():
        return out
    Xr = X[res.x_rep]
    for c0 in range(0, Y.shape[0], _CHUNK):
        Yc = Y[c0:c0 + _CHUNK]
        e = assemble(k, X[rest], Yc) - res.W[rest] @ assemble(k, Xr, Yc)
        out[c0:c0 + _CHUNK] = np.abs(e).mean(axis=0)
    return out


def _out(cfg: ExperimentConfig, name: str) -> Path:
    return Path(cfg.out_dir) / name


# ---------------------------------------------------------------- exp1

EXP1_COLUMNS = ("method", "rank", "proxy_count", "row_index", "err_Yp", "err_Y0",
                "ratio_max", "ratio_avg")


def run_exp1(cfg: ExperimentConfig) -> ExperimentResult:
    """Per-row entrywise ratios and the error-representation deviation."""
    pair = _pair_of(cfg, "far-apart")
    k = _kernel(cfg, pair)
    X0 = _source_points(cfg, pair)
    scheme = _scheme(cfg)
    ps = select_proxy(k, pair, scheme)
    res = compress_proxy(k, X0, ps, tol=cfg.tol, C=cfg.C)
    probe = generate_points(pair.target, GridApprox(cfg.probe_count))
    rep = diagnostics(k, X0, res, probe)
    method = f"proxy-{cfg.scheme}"
    rows = [(method, res.rank, len(ps), i, rep.err_Yp[i], rep.err_Y0[i], rep.ratio_max[i],
             rep.ratio_avg[i]) for i in range(len(X0))]
    ok = ~np.isnan(rep.ratio_max)
    rmax = float(rep.ratio_max[ok].max()) if ok.any() else 0.0
    ravg = float(rep.ratio_avg[ok].max()) if ok.any() else 0.0
    meta = {"representation_deviation": rep.representation_deviation,
            "probe_count": len(probe)}
    p = write_csv(_out(cfg, "exp1_ratios.csv"), EXP1_COLUMNS, rows, cfg, meta)
    data = {"proxy_count": len(ps), "rank": res.rank, "deviation": rep.representation_deviation,
            "ratio_max": rmax, "ratio_avg": ravg, "probe_count": len(probe), "report": rep}
    summary = (f"exp1 {k.name} |Yp|={len(ps)} rank={res.rank} "
               f"deviation={rep.representation_deviation:.3g} max_ratio={rmax:.3g} "
               f"(bound {len(ps) * cfg.C:g}) max_avg_ratio={ravg:.3g}")
    return ExperimentResult([p], summary, data)


# ---------------------------------------------------------------- exp2

EXP2_ERROR_COLUMNS = ("method", "rank", "y0_count", "avg_entry_error", "max_abs_error")
EXP2_TIME_COLUMNS = ("method", "rank", "y0_count", "seconds_step1", "seconds_total")


def _exp2_method(method, k, X0, Y0, r, proxy_id, proxy_rand, cfg):
    """``(L, R, seconds_step1, seconds_total)`` with ``K(X0, Y0) ~ L R``."""
    X, Y = X0.points, Y0.points
    reps = cfg.repeats
    if method in ("proxy-id", "proxy-random", "refined-id"):
        ps = proxy_rand if method == "proxy-random" else proxy_id
        stop = FixedRank(r) if method == "proxy-random" else Threshold(
            default_threshold(len(ps), cfg.tol))
        res, t1 = _median_time(lambda: compress_proxy(k, X0, ps, stop=stop, C=cfg.C), reps)
        if method == "refined-id":
            base = res
            res, t_ref = _median_time(lambda: refine_weights(base, k, X0, Y0), reps)
            t1 += t_ref
        (L, R), t2 = _median_time(lambda: evaluate_approx(res, k, X0, Y0, factors=True), reps)
        return L, R, t1, t1 + t2
    if method == "direct-srrqr":
        def run():
            skel, U, _, _ = id_compress(k, X, Y, FixedRank(r), cfg.C)
            return skel, U
        (skel, U), t = _median_time(run, reps)
        return U, assemble(k, X[skel], Y), t, t
    if method == "svd":
        def run():
            return truncated_svd(assemble(k, X, Y), r)
        s, t = _median_time(run, reps)
        return s.U * s.s, s.Vt, t, t
    if method == "aca":
        def run():
            return aca(lambda i: assemble(k, X[i:i + 1], Y)[0],
                       lambda j: assemble(k, X, Y[j:j + 1])[:, 0],
                       (X.shape[0], Y.shape[0]), FixedRank(r))
        a, t = _median_time(run, reps)
        return a.U, a.V, t, t
    raise ValueError(f"unknown method {method!r}")


def run_exp2(cfg: ExperimentConfig) -> ExperimentResult:
    """Error and runtime against |Y0| for the proxy methods and the baselines at equal rank."""
    pair = _pair_of(cfg, "far-apart")
    k = _kernel(cfg, pair)
    X0 = _source_points(cfg, pair)
    proxy_id = select_proxy(k, pair, _scheme(cfg))
    base = compress_proxy(k, X0, proxy_id, tol=cfg.tol, C=cfg.C)
    r = base.rank
    proxy_rand = None
    if "proxy-random" in cfg.methods:
        proxy_rand = select_proxy(k, pair, Random(cfg.random_count, cfg.seed))
    err_rows, time_rows = [], []
    data = {"rank": r, "proxy_count": len(proxy_id), "errors": {}, "times": {}}
    for n in cfg.y0_counts:
        Y0 = generate_points(pair.target, RandomUniform(int(n), cfg.seed + 1))
        for m in cfg.methods:
            L, R, t1, tt = _exp2_method(m, k, X0, Y0, r, proxy_id, proxy_rand, cfg)
            avg_e, max_e = low_rank_errors(k, X0, Y0, L, R)
            rank = L.shape[1]
            err_rows.append((m, rank, int(n), avg_e, max_e))
            time_rows.append((m, rank, int(n), t1, tt))
            data["errors"][(m, int(n))] = avg_e
            data["times"][(m, int(n))] = (t1, tt)
    meta = {"proxy_count": len(proxy_id), "proxy_seconds": proxy_id.diagnostics.get("seconds")}
    p1 = write_csv(_out(cfg, "exp2_errors.csv"), EXP2_ERROR_COLUMNS, err_rows, cfg,
                   {"proxy_count": len(proxy_id)})
    p2 = write_csv(_out(cfg, "exp2_times.csv"), EXP2_TIME_COLUMNS, time_rows, cfg, meta)
    summary = f"exp2 {k.name} d={pair.dim} rank={r} |Yp|={len(proxy_id)} sizes={list(cfg.y0_counts)}"
    return ExperimentResult([p1, p2], summary, data)


# ---------------------------------------------------------------- exp3

EXP3_COLUMNS = ("method", "proxy_count", "rank", "y0_count", "avg_entry_error", "max_abs_error")


def run_exp3(cfg: ExperimentConfig) -> ExperimentResult:
    """Random and surface proxies at half, equal and twice the ID-selected count.

    ID proxies use the threshold rule; the others are compressed to the same
    rank ``|X_rep|`` so only the proxy set differs.
    """
    pair = _pair_of(cfg, "far-apart")
    k = _kernel(cfg, pair)
    X0 = _source_points(cfg, pair)
    pid = select_proxy(k, pair, IdSelectParams(C=cfg.C))
    n_id = len(pid)
    base = compress_proxy(k, X0, pid, tol=cfg.tol, C=cfg.C)
    runs = [("id", pid, base)]
    for frac in (0.5, 1.0, 2.0):
        n = max(1, int(round(frac * n_id)))
        for name, scheme in (("random", Random(n, cfg.seed)), ("surface", Surface(n))):
            ps = select_proxy(k, pair, scheme)
            runs.append((name, ps, compress_proxy(k, X0, ps, stop=FixedRank(base.rank), C=cfg.C)))
    Ys = {int(n): generate_points(pair.target, RandomUniform(int(n), cfg.seed + 1))
          for n in cfg.y0_counts}
    rows, data = [], {}
    for name, ps, res in runs:
        for n, Y0 in Ys.items():
            L, R = evaluate_approx(res, k, X0, Y0, factors=True)
            avg_e, max_e = low_rank_errors(k, X0, Y0, L, R)
            rows.append((name, len(ps), res.rank, n, avg_e, max_e))
            data[(name, len(ps), n)] = avg_e
    p = write_csv(_out(cfg, "exp3_errors.csv"), EXP3_COLUMNS, rows, cfg, {"id_count": n_id})
    return ExperimentResult([p], f"exp3 {k.name} |Yp_id|={n_id} rank={base.rank}", data)


# ---------------------------------------------------------------- exp4

def exp4_probe(pair: DomainPair, band: Box, n_near: int, n_far: int):
    """Fine grid between the inner box and ``band``, coarse grid beyond it."""
    near = generate_points(ShellRegion(band, pair.target.inner), GridApprox(n_near))
    far = generate_points(ShellRegion(pair.target.outer, band), GridApprox(n_far)).points
    # the band's boundary belongs to the fine grid
    return near.points, far[~band.contains(far)]


def run_exp4(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean error field near the source box with default and adaptive candidates."""
    pair = _pair_of(cfg, "nearby")
    k = _kernel(cfg, pair)
    X0 = _source_points(cfg, pair)
    band = default_near_band(pair)
    near, far = exp4_probe(pair, band, cfg.probe_count, max(1, cfg.probe_count // 4))
    probe = np.concatenate([near, far])
    region = np.array(["near"] * len(near) + ["far"] * len(far))
    runs = [("id", IdSelectParams(C=cfg.C)),
            ("id-adaptive", IdSelectParams(C=cfg.C, adaptive=(0.5, None)))]
    rows, data = [], {}
    d = pair.dim
    cols = ("method", "rank", "proxy_count", "region") + tuple(f"y{j + 1}" for j in range(d)) + (
        "mean_abs_error",)
    for name, params in runs:
        ps = select_proxy(k, pair, params)
        res = compress_proxy(k, X0, ps, tol=cfg.tol, C=cfg.C)
        f = error_field(k, X0, res, probe)
        for i in range(len(probe)):
            rows.append((name, res.rank, len(ps), region[i], *probe[i], f[i]))
        data[name] = {"proxy_count": len(ps), "rank": res.rank,
                      "near_max": float(f[:len(near)].max()), "max": float(f.max())}
    p = write_csv(_out(cfg, "exp4_field.csv"), cols, rows, cfg,
                  {"near_band": f"{band.lo}..{band.hi}"})
    summary = " ".join(f"{m}: |Yp|={v['proxy_count']} rank={v['rank']} near_max={v['near_max']:.3g} "
                       f"max={v['max']:.3g};" for m, v in data.items())
    return ExperimentResult([p], f"exp4 {k.name} {summary}", data)


# ---------------------------------------------------------------- exp5

EXP5_COLUMNS = ("method", "rank", "kernel", "adm", "N", "S_N", "S_inadm", "S_coupling",
                "S_basis", "S_total", "S_stored", "E", "E_sampled", "build_seconds")


def check_h2_feasible(k: Kernel, adm: str, mode: str, N: int, allow_large: bool = False):
    mode = Mode(mode)
    if N > DESK_MAX_N and not allow_large:
        raise InfeasibleConfig(f"N={N} exceeds the desk-scale limit {DESK_MAX_N}; "
                               "set allow_large to run it")
    if adm == "weak" and k.singular_on_diagonal and mode is Mode.PROXY:
        raise InfeasibleConfig(
            f"{k.name} is singular on touching boxes, so weak admissibility has no "
            "proxy-point representation; use mode=hybrid")
    if mode is Mode.HYBRID and adm != "weak":
        raise InfeasibleConfig("hybrid mode applies to weak admissibility only")


def h2_run(k: Kernel, N: int, dim: int, adm: str, mode: str, scheme, tau: float, C: float,
           seed: int, leaf_cap: int = 300, repeats: int = 1):
    """Build and audit one H² matrix; the build time is the median over ``repeats``."""
    pts, box = uniform_cloud(N, dim, seed)
    tree = build_tree(pts, leaf_cap, box)

    def build():
        return build_h2(k, tree, scheme, tau=tau, C=C, mode=mode, kind=adm)
    times = []
    for _ in range(repeats):
        H = build()
        times.append(H.stats.build_seconds)
    stats = audit(H, seed=seed)
    stats.seconds["total"] = statistics.median(times)
    return H, stats


def run_exp5(cfg: ExperimentConfig) -> ExperimentResult:
    """H² storage, error and build time over a list of sizes."""
    k = _kernel(cfg)
    for N in cfg.n_list:
        check_h2_feasible(k, cfg.admissibility, cfg.mode, int(N), cfg.allow_large)
    scheme = _scheme(cfg)
    rows, data = [], {}
    method = f"h2-{cfg.admissibility}-{Mode(cfg.mode).value}"
    for N in cfg.n_list:
        _, s = h2_run(k, int(N), cfg.dim, cfg.admissibility, cfg.mode, scheme, cfg.tol, cfg.C,
                      cfg.seed, cfg.leaf_cap, cfg.repeats)
        rank = max(v[2] for v in s.level_ranks.values()) if s.level_ranks else 0
        rows.append((method, rank, k.name, cfg.admissibility, int(N), s.S_N, s.S_inadm,
                     s.S_coupling, s.S_basis, s.S_total, s.S_stored, s.E, s.E_sampled,
                     s.build_seconds))
        data[int(N)] = s
    p = write_csv(_out(cfg, "exp5_h2.csv"), EXP5_COLUMNS, rows, cfg,
                  {"timing_columns": "build_seconds"})
    parts = [f"N={N} E={s.E:.3g} S_total={s.S_total:.4g} t={s.build_seconds:.3g}s"
             for N, s in data.items()]
    return ExperimentResult([p], f"exp5 {k.name} {method} " + "; ".join(parts), data)


RUNNERS = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3, "exp4": run_exp4,
           "exp5": run_exp5}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg)
