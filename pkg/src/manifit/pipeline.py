"""Configuration and end-to-end orchestration of the fitting pipeline."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import yaml
from scipy.spatial import cKDTree

from .atlas import WeightedAtlas, compute_weights, write_atlas
from .discs import Disc, find_disc, fine_tune_disc
from .errors import ConfigError, StageError
from .geometry import (INFINITE_REACH, NoiseModel, PointCloud, SyntheticManifold,
                       make_manifold, sample_noisy, unit_ball_volume, write_cloud)
from .outman import (OutputManifold, derivative_diagnostics, estimate_output_geometry,
                     project_to_manifold)
from .refine import (RefinedNet, average_cells, boost_net, build_atlas, build_lattice,
                     cells_to_net, greedy_net)
from .subspace import estimate_sigma, fit_pca_subspace, suggest_D

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "RunReport",
    "RunArtifacts",
    "load_config",
    "build_output_manifold",
    "run_pipeline",
    "sweep",
    "power_law_slope",
    "METRIC_COLUMNS",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
METRIC_COLUMNS = [
    "status", "kind", "d", "n", "sigma", "sigma_hat", "D", "N_used", "r_c", "r",
    "n_rnet", "n_discs", "rnet_max_dist", "hausdorff", "reach", "max_residual_true",
    "deriv_first", "deriv_second", "deriv_third", "newton_converged_frac",
    "newton_max_step_ratio", "error",
]
SWEEPABLE = {"sigma", "N", "D", "k"}
Auto = Union[float, str]


class PipelineError(StageError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@dataclass
class PipelineConfig:
    """Every knob of a run. Radii and D accept "auto"."""

    kind: str = "circle"
    d: int = 1
    n: int = 10
    tau: float = 1.0              # radius of the synthetic manifold (= its reach for round kinds)
    eps: float = 0.1              # perturbation amplitude, graph-perturbed sphere only
    embedding_seed: Optional[int] = 7
    sigma: float = 0.02
    N0: int = 10000               # samples for PCA and first-stage discs
    N2: int = 100000              # samples for the cell averages (split across boosting candidates)
    D: Union[int, str] = "auto"
    r_p: Auto = "auto"
    r_c: Auto = "auto"
    r: Auto = "auto"
    C_r: float = 3.0              # r = C_r sqrt(d) sigma_hat
    r_c_sigma: float = 20.0       # auto r_c = max(tau_hat / (8 d^2), r_c_sigma * sigma_hat)
    tau_hat: Optional[float] = None
    k: int = 3
    boost_candidates: int = 9     # 1 disables boosting
    boost_eps_c: float = 10.0     # eps = boost_eps_c d sigma_hat^2 / tau_hat
    grid_per_dim: Optional[int] = None
    c: float = 0.25               # net separation c r / d and tube width
    center_sep_frac: float = 2 / 3  # first-stage centers: greedy net with separation frac * r
    delta2_c: float = 1.0         # fine-tune slab budget delta2_c * radius^2 / tau_hat
    min_cell_count: int = 5
    newton_tol_rel: float = 1e-9
    newton_max_iter: int = 12
    probe_count: int = 400
    reach_points: int = 400
    deriv_probes: int = 200
    seed: int = 0

    def manifold(self) -> SyntheticManifold:
        kw = {"eps": self.eps} if self.kind == "graph-perturbed-sphere" else {}
        return make_manifold(self.kind, self.d, self.n, self.tau,
                             embedding_seed=self.embedding_seed, **kw)

    def validate(self) -> None:
        if self.kind not in ("circle", "sphere", "flat-torus", "graph-perturbed-sphere"):
            raise ConfigError(f"unknown manifold kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise ConfigError("d and n must be positive")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError("sigma must be finite and nonnegative")
        if self.N0 < 2 or self.N2 < 1:
            raise ConfigError("sample counts must be positive")
        if self.D != "auto" and not (isinstance(self.D, int) and self.d < self.D <= self.n):
            raise ConfigError(f"need d < D <= n, got D={self.D!r}")
        if self.k < 3:
            raise ConfigError("bump exponent k must be at least 3")
        if self.boost_candidates not in (1,) and self.boost_candidates < 3:
            raise ConfigError("boost_candidates must be 1 (off) or at least 3")
        for name in ("r_p", "r_c", "r"):
            v = getattr(self, name)
            if v != "auto" and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be a positive number or 'auto'")
        fixed = [getattr(self, nm) for nm in ("r", "r_c", "r_p")]
        nums = [v for v in fixed if v != "auto"]
        if len(nums) >= 2 and all(v != "auto" for v in fixed) and not fixed[0] < fixed[1] < fixed[2]:
            raise ConfigError("radii must satisfy r < r_c < r_p")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def replace(self, **kw) -> "PipelineConfig":
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg


def load_config(path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        return PipelineConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _seeds(master: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(master)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(count)]


@dataclass
class RunArtifacts:
    """In-memory products of a run, for tests and demos."""

    manifold: SyntheticManifold
    rnet: RefinedNet
    atlas: WeightedAtlas
    om: OutputManifold
    geometry: Any
    queries: Optional[np.ndarray] = None
    query_results: list = field(default_factory=list)


@dataclass
class RunReport:
    metrics: dict
    timings: dict
    artifacts: Optional[RunArtifacts] = None

    def csv_row(self) -> list[str]:
        return [_fmt(self.metrics.get(c, "")) for c in METRIC_COLUMNS]


def _fmt(v) -> str:
    if v is INFINITE_REACH:
        return "inf"
    if isinstance(v, float):
        return "%.10g" % v
    return str(v)


def _resolve_radii(cfg: PipelineConfig, sigma_hat: float, tau_hat: float):
    d = cfg.d
    r = cfg.C_r * math.sqrt(d) * sigma_hat if cfg.r == "auto" else float(cfg.r)
    r_c = max(tau_hat / (8 * d * d), cfg.r_c_sigma * sigma_hat) if cfg.r_c == "auto" else float(cfg.r_c)
    r_p = 2 * r_c if cfg.r_p == "auto" else float(cfg.r_p)
    if not 0 < r < r_c < r_p:
        raise ConfigError(f"radii must satisfy 0 < r < r_c < r_p, got "
                          f"r={r:.4g}, r_c={r_c:.4g}, r_p={r_p:.4g}")
    return r_p, r_c, r


def _grid_per_dim(cfg: PipelineConfig) -> int:
    """Odd grid (so each disc center is a grid node) fine enough to resolve the
    c r / (2d) separation of the atlas centers."""
    if cfg.grid_per_dim is not None:
        return cfg.grid_per_dim
    g = max(2 * cfg.d + 10, math.ceil(8 * cfg.d / cfg.c))
    return g + 1 - g % 2


def _rnet_candidate(discs, lattices, samples, coords, r_c, min_count) -> RefinedNet:
    tree = cKDTree(coords)
    cells = []
    for disc, lat in zip(discs, lattices):
        cand = tree.query_ball_point(disc.center, r_c / math.sqrt(2) * (1 + 1e-9))
        if not cand:
            continue
        cells.extend(average_cells(disc, lat, samples, sample_coords=coords,
                                   candidates=np.asarray(cand), min_count=min_count))
    return cells_to_net(cells)


def build_output_manifold(cfg: PipelineConfig, manifold: Optional[SyntheticManifold] = None,
                          timings: Optional[dict] = None):
    """Run the fitting stages and return (manifold, rnet, atlas, om, info)."""
    timings = {} if timings is None else timings
    seeds = _seeds(cfg.seed, 4 + max(cfg.boost_candidates, 1))
    if manifold is None:
        manifold = cfg.manifold()
    tau_hat = float(cfg.tau_hat if cfg.tau_hat is not None else manifold.reach)
    info: dict = {"tau_hat": tau_hat}

    t = time.perf_counter()
    X0 = sample_noisy(manifold, NoiseModel(cfg.sigma, seeds[0]), cfg.N0)
    X2 = sample_noisy(manifold, NoiseModel(cfg.sigma, seeds[1]), cfg.N2)
    timings["sample"] = time.perf_counter() - t

    # stage 1: subspace and sigma
    t = time.perf_counter()
    D = suggest_D(manifold.volume, tau_hat, cfg.d, cfg.n) if cfg.D == "auto" else cfg.D
    try:
        fit = fit_pca_subspace(X0, D)
    except ValueError as exc:
        raise PipelineError("subspace", str(exc)) from None
    sigma_hat = estimate_sigma(X0, fit).sigma_hat if D < cfg.n else cfg.sigma
    if sigma_hat < 1e-10 * tau_hat:
        sigma_hat = 0.0  # rounding residue of noiseless data
    info.update(D=D, sigma_hat=sigma_hat)
    r_p, r_c, r = _resolve_radii(cfg, sigma_hat, tau_hat)
    info.update(r_p=r_p, r_c=r_c, r=r)
    coords0 = fit.subspace.coords(X0.points)
    timings["subspace"] = time.perf_counter() - t

    # stage 2: first-stage discs in the subspace
    t = time.perf_counter()
    centers = greedy_net(coords0, cfg.center_sep_frac * r).points
    tree0 = cKDTree(coords0)
    discs = []
    delta2 = cfg.delta2_c * r_c * r_c / tau_hat
    for x in centers:
        local = coords0[tree0.query_ball_point(x, r_p)]
        try:
            disc, _ = find_disc(local, x, r_p, cfg.d)
        except StageError:
            continue
        near = local[np.linalg.norm(local - x, axis=1) <= r_c]
        disc = fine_tune_disc(near, Disc(x, disc.frame, r_c), delta2)
        discs.append(disc)
    if not discs:
        raise PipelineError("discs", "no first-stage disc could be fitted")
    info["n_first_discs"] = len(discs)
    timings["discs"] = time.perf_counter() - t

    # stage 3: refined net, boosting, second-stage atlas
    t = time.perf_counter()
    lattices = [build_lattice(dsc, sigma_hat) for dsc in discs]
    coords2 = fit.subspace.coords(X2.points)
    k = cfg.boost_candidates
    chunks = np.array_split(np.arange(cfg.N2), k)
    try:
        cands = [_rnet_candidate(discs, lattices, X2.points[ch], coords2[ch], r_c,
                                 cfg.min_cell_count) for ch in chunks]
        if k == 1:
            rnet = cands[0]
        else:
            rnet = boost_net(cands, cfg.boost_eps_c * cfg.d * sigma_hat ** 2 / tau_hat)
    except StageError as exc:
        raise PipelineError("refine", str(exc)) from None
    # thin the best-supported cell averages first
    order = np.argsort(-rnet.per_point_counts, kind="stable")
    net3 = greedy_net(rnet.points.points[order], cfg.c * r / cfg.d)
    try:
        family = build_atlas(net3, rnet.points, r, cfg.d, tau_hat, c=cfg.c,
                             delta2=cfg.delta2_c * r * r / tau_hat)
    except StageError as exc:
        raise PipelineError("refine", f"{exc} (r={r:.4g}, net size {len(net3)})") from None
    info.update(n_rnet=len(rnet), n_discs=len(family), dropped=len(family.dropped),
                infeasible=family.n_infeasible, min_separation=family.min_separation)
    timings["refine"] = time.perf_counter() - t

    # stage 4: weights
    t = time.perf_counter()
    try:
        atlas = compute_weights(family.discs, _grid_per_dim(cfg), cfg.k)
    except StageError as exc:
        raise PipelineError("atlas", str(exc)) from None
    timings["atlas"] = time.perf_counter() - t
    om = OutputManifold(atlas, cfg.c)
    info["seeds"] = seeds
    return manifold, rnet, atlas, om, info


def run_pipeline(cfg: PipelineConfig, out_dir=None, keep_artifacts: bool = False,
                 query_count: int = 0) -> RunReport:
    """Fit, evaluate against the synthetic truth, and write atlas / Rnet / metrics files."""
    cfg.validate()
    timings: dict = {}
    t_all = time.perf_counter()
    manifold, rnet, atlas, om, info = build_output_manifold(cfg, timings=timings)

    t = time.perf_counter()
    tol = cfg.newton_tol_rel * om.r
    try:
        geo = estimate_output_geometry(om, manifold, cfg.probe_count, seed=info["seeds"][2],
                                       tol=tol, reach_points=cfg.reach_points,
                                       max_iter=cfg.newton_max_iter)
    except StageError as exc:
        raise PipelineError("outman", str(exc)) from None
    truth = manifold.sample(np.random.default_rng(info["seeds"][3]), cfg.probe_count)
    max_res = 0.0
    for x in truth:
        try:
            max_res = max(max_res, float(np.linalg.norm(om.G(x))))
        except StageError:
            max_res = math.inf
    probes = geo.samples[: cfg.deriv_probes]
    der = derivative_diagnostics(om, probes, tau_hat=info["tau_hat"], seed=cfg.seed)
    ratios = [q for res in geo.results for q in res.step_ratios()]
    timings["outman"] = time.perf_counter() - t

    queries, qres = None, []
    if query_count:
        rng = np.random.default_rng(info["seeds"][3] + 1)
        clean = manifold.sample(rng, query_count)
        queries = clean + cfg.sigma * rng.standard_normal(clean.shape)
        qres = [project_to_manifold(om, q, tol, max_iter=cfg.newton_max_iter) for q in queries]
    timings["total"] = time.perf_counter() - t_all

    metrics = {
        "status": "ok", "kind": cfg.kind, "d": cfg.d, "n": cfg.n, "sigma": float(cfg.sigma),
        "sigma_hat": float(info["sigma_hat"]), "D": info["D"], "N_used": cfg.N0 + cfg.N2,
        "r_c": float(info["r_c"]), "r": float(info["r"]), "n_rnet": info["n_rnet"],
        "n_discs": info["n_discs"],
        "rnet_max_dist": float(np.max(manifold.distance(rnet.points.points))),
        "hausdorff": geo.hausdorff_to_truth, "reach": geo.reach_lower,
        "max_residual_true": max_res, "deriv_first": der.first_over_delta,
        "deriv_second": der.second_over_delta, "deriv_third": der.third_over_delta,
        "newton_converged_frac": 1.0 - geo.failures / cfg.probe_count,
        "newton_max_step_ratio": max(ratios) if ratios else 0.0, "error": "",
    }
    report = RunReport(metrics, timings)
    if keep_artifacts:
        report.artifacts = RunArtifacts(manifold, rnet, atlas, om, geo, queries, qres)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_atlas(out / "atlas.txt", atlas)
        write_cloud(out / "rnet.txt", rnet.points.points)
        _write_metrics(out / "metrics.csv", [report.csv_row()])
        _write_timings(out / "timings.csv", [timings])
    return report


def _write_metrics(path, rows: Sequence[Sequence[str]], extra_lines: Sequence[str] = ()):
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    w.writerows(rows)
    for line in extra_lines:
        buf.write(line + "\n")
    Path(path).write_text(buf.getvalue())


def _write_timings(path, rows: Sequence[dict]):
    keys = ["sample", "subspace", "discs", "refine", "atlas", "outman", "total"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in rows:
        w.writerow(["%.3f" % row.get(k, float("nan")) for k in keys])
    Path(path).write_text(buf.getvalue())


def noise_regime_holds(n: int, D: int, tau: float, sigma_hat: float) -> bool:
    """Whether n - D >= tau^2 D / sigma_hat^2, under which sigma_hat is trustworthy."""
    if sigma_hat <= 0:
        return False
    return n - D >= tau * tau * D / sigma_hat ** 2


def reference_sample_sizes(volume: float, d: int, n: int, tau: float, r_c: float,
                           sigma: float, eta: float = 0.01, C: float = 1.0) -> tuple[float, float]:
    """Sample counts (N0, N) of the asymptotic sample-size bound, for comparison only.

    Every universal constant is set to ``C``; Delta = C d sigma^2 / tau.
    """
    if sigma <= 0 or not 0 < eta < 1:
        raise ValueError("need sigma > 0 and 0 < eta < 1")
    m = C * volume / (unit_ball_volume(d) * r_c ** d)
    n0 = m * math.log(m) if m > 1 else 1.0
    delta = C * d * sigma ** 2 / tau
    n_total = ((n * tau * delta / d + tau * tau) * (d / delta) ** 2
               * (r_c * math.sqrt(d) / math.sqrt(tau * delta)) ** d
               * n0 * math.log(max(n0, math.e)) ** 3 * math.log(1 / eta))
    return n0, n_total


def power_law_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _apply(cfg: PipelineConfig, vary: str, value) -> PipelineConfig:
    if vary == "sigma":
        return cfg.replace(sigma=float(value))
    if vary == "N":
        return cfg.replace(N2=int(value))
    if vary == "D":
        return cfg.replace(D=int(value))
    return cfg.replace(k=int(value))


def _run_row(args):
    cfg, vary, value = args
    try:
        rep = run_pipeline(_apply(cfg, vary, value))
        return rep.csv_row(), rep.timings, rep.metrics
    except (StageError, ValueError) as exc:
        m = {c: "" for c in METRIC_COLUMNS}
        m.update(status="failed", kind=cfg.kind, d=cfg.d, n=cfg.n, error=str(exc).replace("\n", " "))
        if vary == "sigma":
            m["sigma"] = float(value)
        return [_fmt(m[c]) for c in METRIC_COLUMNS], {}, m


def sweep(cfg: PipelineConfig, vary: str, values: Sequence, out_dir=None,
          parallel: int = 1) -> dict:
    """One run per value; failed runs become rows with status=failed.

    Returns {"rows", "metrics", "slope"}; the slope is the power-law exponent
    of hausdorff against the swept value over successful rows (None if fewer
    than two).
    """
    if vary not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {vary!r}; choose from {sorted(SWEEPABLE)}")
    jobs = [(cfg, vary, v) for v in values]
    for _, _, v in jobs:  # reject malformed values before any work
        _apply(cfg, vary, v)
    if parallel > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(parallel) as ex:
            results = list(ex.map(_run_row, jobs))
    else:
        results = [_run_row(j) for j in jobs]
    rows = [r[0] for r in results]
    metrics = [r[2] for r in results]
    ok = [(float(v), m["hausdorff"]) for v, m in zip(values, metrics)
          if m["status"] == "ok" and m["hausdorff"] > 0]
    slope = power_law_slope(*zip(*ok)) if len(ok) >= 2 else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        extra = [f"# slope hausdorff~{vary}^p: p=" + ("%.6g" % slope if slope is not None else "nan")] \
            if values else []
        _write_metrics(out / "sweep.csv", rows, extra)
        _write_timings(out / "sweep_timings.csv", [r[1] for r in results])
    return {"rows": rows, "metrics": metrics, "slope": slope}
