"""Experiment configuration and the four commands behind the CLI.

Every command writes its artifacts into ``config.out_dir`` and returns a
:class:`RunArtifact`. Nothing time- or host-dependent goes into the files,
so the same config and seed reproduce them byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as dio
from .delaunay import triangulate
from .optimize import (
    DEFAULT_TOTAL_POPULATION,
    ConstantDensity,
    LossSpec,
    RunSchedule,
    SineDensity,
    efficiencies,
    evaluate,
    gradcheck,
    run_optimization,
)
from .plotting import plot_area_histogram, plot_loss, plot_weff
from .svg import SvgStyle, write_svg
from .voronoi import Boundary, DiagramSnapshot, default_omega

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "RunArtifact",
    "load_config",
    "initial_sites",
    "default_capacities",
    "cmd_tessellate",
    "cmd_variance",
    "cmd_hospital",
    "cmd_gradcheck",
    "run_experiment",
]

EXPERIMENTS = ("tessellate", "variance_unbounded", "variance_bounded", "hospital", "gradcheck")
GRADCHECK_MAX_POINTS = 100


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    n_points: Optional[int] = None
    seed: int = 0
    m: int = 1400
    r: int = 1
    learning_rate: float = 1e-3
    omega: Optional[float] = None
    boundary: Optional[list] = None
    points: Optional[list] = None
    capacities: Optional[list] = None
    total_population: float = DEFAULT_TOTAL_POPULATION
    density: dict = field(default_factory=lambda: {"kind": "sine", "frequency": 10.0, "offset": 2.0})
    mask_unbounded: bool = True
    clamp_to_boundary: bool = False
    loss: str = "area_variance"
    h: float = 1e-6
    rtol: float = 1e-5
    atol: float = 1e-8
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in data:
            raise ConfigError("missing required key 'experiment'")
        data = dict(data)
        # a string means a points file, relative to the config file
        if isinstance(data.get("points"), str):
            p = Path(data["points"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            try:
                data["points"] = dio.load_points(p).tolist()
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read points: {exc}") from exc
        if data.get("boundary") == "unit_square":
            data["boundary"] = Boundary.unit_square().vertices.tolist()
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)

        need(self.experiment in EXPERIMENTS,
             f"experiment must be one of {', '.join(EXPERIMENTS)}, got {self.experiment!r}")
        need(is_int(self.seed) and self.seed >= 0, "seed must be a non-negative integer")
        need(is_int(self.m) and self.m >= 0, "m (steps) must be a non-negative integer")
        need(is_int(self.r) and self.r >= 1, "r (retriangulation period) must be a positive integer")
        need(is_num(self.learning_rate) and self.learning_rate > 0, "learning_rate must be positive")
        need(self.omega is None or (is_num(self.omega) and self.omega > 0), "omega must be positive")
        need(is_num(self.total_population) and self.total_population > 0,
             "total_population must be positive")
        for name in ("h", "rtol", "atol"):
            v = getattr(self, name)
            need(is_num(v) and v > 0, f"{name} must be positive")
        need(isinstance(self.mask_unbounded, bool), "mask_unbounded must be true or false")
        need(isinstance(self.clamp_to_boundary, bool), "clamp_to_boundary must be true or false")
        need(isinstance(self.out_dir, str) and self.out_dir, "out_dir must be a non-empty string")
        need(self.loss in ("area_variance", "hospital_mse"),
             "loss must be 'area_variance' or 'hospital_mse'")

        if self.points is None:
            need(is_int(self.n_points) and self.n_points > 0,
                 "n_points must be a positive integer (or give 'points')")
        else:
            try:
                pts = np.array(self.points, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"points: {exc}") from exc
            need(pts.ndim == 2 and pts.shape[1] == 2 and len(pts) > 0,
                 "points must be a non-empty list of [x, y] pairs")
            need(bool(np.all(np.isfinite(pts))), "points must be finite")
            need(self.n_points is None or self.n_points == len(pts),
                 "n_points disagrees with the number of points given")
            self.n_points = len(pts)

        if self.boundary is not None:
            try:
                self.boundary_polygon()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"boundary: {exc}") from exc
            if self.points is not None:
                need(bool(self.boundary_polygon().contains(np.array(self.points, float), strict=True).all()),
                     "all points must lie strictly inside the boundary")

        self.density_function()

        exp = self.experiment
        if exp in ("variance_bounded", "hospital"):
            need(self.boundary is not None, f"{exp} requires a boundary")
        if exp == "variance_unbounded":
            need(self.boundary is None, "variance_unbounded takes no boundary")
        if exp in ("variance_bounded", "variance_unbounded", "hospital", "gradcheck"):
            need(self.n_points >= 3, f"{exp} needs at least 3 points")
        if exp == "hospital" or (exp == "gradcheck" and self.loss == "hospital_mse"):
            need(self.boundary is not None, "the hospital loss requires a boundary")
        if exp == "gradcheck":
            need(self.n_points <= GRADCHECK_MAX_POINTS,
                 f"gradcheck is limited to {GRADCHECK_MAX_POINTS} points")
        if self.capacities is not None:
            caps = np.array(self.capacities, dtype=float)
            need(caps.shape == (self.n_points,), "need one capacity per point")
            need(bool(np.all(np.isfinite(caps) & (caps > 0))), "capacities must be positive")

    def boundary_polygon(self) -> Optional[Boundary]:
        if self.boundary is None:
            return None
        return Boundary(np.array(self.boundary, dtype=float))

    def density_function(self):
        d = self.density
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("density must be an object with a 'kind'")
        params = {k: v for k, v in d.items() if k != "kind"}
        try:
            if d["kind"] == "sine":
                return SineDensity(**params)
            if d["kind"] == "constant":
                return ConstantDensity(**params)
        except TypeError as exc:
            raise ConfigError(f"density: {exc}") from exc
        raise ConfigError(f"unknown density kind {d['kind']!r}")

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None) -> "ExperimentConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        if seed is not None:
            data["seed"] = seed
        if out_dir is not None:
            data["out_dir"] = str(out_dir)
        cfg = ExperimentConfig(**data)
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(data, base_dir=path.parent)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunArtifact:
    out_dir: Path
    files: dict
    losses: np.ndarray
    initial_sites: np.ndarray
    final_sites: np.ndarray
    areas: np.ndarray
    weff: Optional[np.ndarray] = None
    report: Optional[dict] = None


def _rng_and_sites(cfg: ExperimentConfig):
    rng = dio.rng_for_seed(cfg.seed)
    if cfg.points is not None:
        return rng, np.array(cfg.points, dtype=float)
    box = cfg.boundary_polygon()
    return rng, dio.uniform_points(cfg.n_points, cfg.seed, box, rng=rng)


def initial_sites(cfg: ExperimentConfig) -> np.ndarray:
    return _rng_and_sites(cfg)[1]


def default_capacities(rng: np.random.Generator, n: int, total: float) -> np.ndarray:
    """Uniform draws in [0.5, 1.5], rescaled to sum to ``total``."""
    caps = rng.uniform(0.5, 1.5, n)
    return caps * (total / caps.sum())


def _snapshot(coords, boundary, omega) -> DiagramSnapshot:
    _, diagram, _ = evaluate(coords, triangulate(coords), lambda t, d: None, boundary, omega, clip_edges=True)
    return diagram.snapshot()


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _omega(cfg, coords, boundary) -> float:
    return cfg.omega if cfg.omega is not None else default_omega(coords, boundary)


def cmd_tessellate(cfg: ExperimentConfig) -> RunArtifact:
    """One diagram, no optimization: ``diagram.json`` and ``diagram.svg``."""
    out = _out(cfg)
    _, sites = _rng_and_sites(cfg)
    boundary = cfg.boundary_polygon()
    snap = _snapshot(sites, boundary, _omega(cfg, sites, boundary))
    files = {
        "diagram_json": dio.write_json(out / "diagram.json", dio.snapshot_to_dict(snap)),
        "diagram_svg": write_svg(out / "diagram.svg", snap),
    }
    return RunArtifact(out, files, np.zeros(0), sites, sites, snap.areas)


def _loss_rows(losses):
    return [(k, float(v)) for k, v in enumerate(losses)]


def _masked_variance(snap: DiagramSnapshot, bounded: bool) -> float:
    a = snap.areas if bounded else snap.areas[~snap.unbounded]
    return float(np.var(a)) if len(a) else float("nan")


def cmd_variance(cfg: ExperimentConfig) -> RunArtifact:
    """Equalise cell areas; writes the loss trace, before/after maps and
    area histograms."""
    out = _out(cfg)
    _, sites = _rng_and_sites(cfg)
    boundary = cfg.boundary_polygon()
    omega = _omega(cfg, sites, boundary)
    spec = LossSpec("area_variance", mask_unbounded=cfg.mask_unbounded)
    before = _snapshot(sites, boundary, omega)
    res = run_optimization(
        sites, spec, RunSchedule(cfg.m, cfg.r), boundary, omega,
        lr=cfg.learning_rate, clamp=cfg.clamp_to_boundary,
    )
    after = res.snapshot
    bounded = boundary is not None
    keep = np.ones(len(after.areas), bool) if bounded else ~after.unbounded
    keep0 = np.ones(len(before.areas), bool) if bounded else ~before.unbounded

    v0, v1 = _masked_variance(before, bounded), _masked_variance(after, bounded)
    result = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "n_points": len(sites),
        "steps": cfg.m,
        "retriangulate_every": cfg.r,
        "learning_rate": float(cfg.learning_rate),
        "omega": float(omega),
        "initial_loss": float(res.losses[0]) if len(res.losses) else None,
        "final_loss": float(res.losses[-1]) if len(res.losses) else None,
        "initial_variance": v0,
        "final_variance": v1,
        "variance_ratio": v1 / v0 if v0 > 0 else None,
        "mean_final_area": float(np.mean(after.areas[keep])),
        "retriangulations": res.retriangulations,
        "stale_retriangulation_steps": [int(s) for s in res.stale_steps],
        "initial_sites": sites,
        "final_sites": res.sites,
        "final_areas": after.areas,
        "final_unbounded": [bool(u) for u in after.unbounded],
    }
    hist_counts, hist_edges = np.histogram(after.areas[keep], bins=40)
    files = {
        "loss_csv": dio.write_csv(out / "loss.csv", ("step", "loss"), _loss_rows(res.losses)),
        "result_json": dio.write_json(out / "result.json", result),
        "areas_csv": dio.write_csv(
            out / "areas.csv", ("site", "initial_area", "final_area", "unbounded"),
            [(i, float(a0), float(a1), int(u)) for i, (a0, a1, u)
             in enumerate(zip(before.areas, after.areas, after.unbounded))],
        ),
        "histogram_csv": dio.write_csv(
            out / "area_histogram.csv", ("bin_lo", "bin_hi", "count"),
            [(float(lo), float(hi), int(c)) for lo, hi, c
             in zip(hist_edges[:-1], hist_edges[1:], hist_counts)],
        ),
        "initial_svg": write_svg(out / "initial.svg", before),
        "final_svg": write_svg(out / "final.svg", after),
        "loss_plot": plot_loss(out / "loss.svg", res.losses, title="area variance"),
        "histogram_plot": plot_area_histogram(
            out / "area_histogram.svg", after.areas[keep], before.areas[keep0],
            target=(boundary.area / len(sites)) if bounded else None,
        ),
    }
    return RunArtifact(out, files, res.losses, sites, res.sites, after.areas, report=result)


def cmd_hospital(cfg: ExperimentConfig) -> RunArtifact:
    """Move hospitals until capacity matches the population they serve."""
    out = _out(cfg)
    rng, sites = _rng_and_sites(cfg)
    boundary = cfg.boundary_polygon()
    omega = _omega(cfg, sites, boundary)
    density = cfg.density_function()
    if cfg.capacities is not None:
        caps = np.array(cfg.capacities, dtype=float)
    else:
        caps = default_capacities(rng, len(sites), cfg.total_population)
    spec = LossSpec("hospital_mse", capacities=caps, density=density)

    trace = []

    def record(step, tape, diagram, value):
        trace.append([w.value for w in efficiencies(tape, diagram, caps, density)])

    before = _snapshot(sites, boundary, omega)
    res = run_optimization(
        sites, spec, RunSchedule(cfg.m, cfg.r), boundary, omega,
        lr=cfg.learning_rate, clamp=cfg.clamp_to_boundary, on_step=record,
    )
    _, diagram, _ = evaluate(res.sites, triangulate(res.sites), lambda t, d: None, boundary, omega)
    final_w = np.array([float(w) for w in efficiencies(None, diagram, caps, density)])
    weff = np.array(trace + [final_w.tolist()], dtype=float).reshape(-1, len(sites))
    after = res.snapshot

    dev0 = float(np.mean((weff[0] - 1.0) ** 2))
    dev1 = float(np.mean((final_w - 1.0) ** 2))
    result = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "n_points": len(sites),
        "steps": cfg.m,
        "retriangulate_every": cfg.r,
        "learning_rate": float(cfg.learning_rate),
        "capacities": caps,
        "capacity_total": float(caps.sum()),
        "initial_mse": dev0,
        "final_mse": dev1,
        "mse_reduction": dev0 / dev1 if dev1 > 0 else None,
        "retriangulations": res.retriangulations,
        "stale_retriangulation_steps": [int(s) for s in res.stale_steps],
        "initial_sites": sites,
        "final_sites": res.sites,
        "final_areas": after.areas,
        "final_weff": final_w,
    }
    header = ("step",) + tuple(f"w{j}" for j in range(len(sites)))
    style = SvgStyle(markers=caps)
    files = {
        "loss_csv": dio.write_csv(out / "loss.csv", ("step", "loss"), _loss_rows(res.losses)),
        "weff_csv": dio.write_csv(
            out / "weff.csv", header, [(k,) + tuple(float(v) for v in row) for k, row in enumerate(weff)]
        ),
        "result_json": dio.write_json(out / "result.json", result),
        "initial_svg": write_svg(out / "initial.svg", before, style),
        "final_svg": write_svg(out / "final.svg", after, style),
        "loss_plot": plot_loss(out / "loss.svg", res.losses, title="hospital MSE"),
        "weff_plot": plot_weff(out / "weff.svg", weff),
    }
    return RunArtifact(out, files, res.losses, sites, res.sites, after.areas, weff=weff, report=result)


def cmd_gradcheck(cfg: ExperimentConfig) -> RunArtifact:
    """Analytic vs finite-difference gradient of the configured loss."""
    out = _out(cfg)
    rng, sites = _rng_and_sites(cfg)
    boundary = cfg.boundary_polygon()
    if cfg.loss == "hospital_mse":
        caps = (np.array(cfg.capacities, float) if cfg.capacities is not None
                else default_capacities(rng, len(sites), cfg.total_population))
        spec = LossSpec("hospital_mse", capacities=caps, density=cfg.density_function())
    else:
        spec = LossSpec("area_variance", mask_unbounded=cfg.mask_unbounded)
    rep = gradcheck(sites, spec, boundary, cfg.omega, h=cfg.h, rtol=cfg.rtol, atol=cfg.atol)
    scored = [j for j in range(len(rep.analytic)) if j not in set(rep.excluded)]
    report = {
        "experiment": "gradcheck",
        "seed": cfg.seed,
        "n_points": len(sites),
        "loss": cfg.loss,
        "h": rep.h,
        "rtol": rep.rtol,
        "atol": rep.atol,
        "max_rel_error": rep.max_rel_error,
        "passed": rep.passed,
        "excluded": [int(j) for j in rep.excluded],
        "failures": [int(j) for j in scored if rep.rel_error[j] >= rep.rtol],
        "analytic": [float(a) for a in rep.analytic],
        "numeric": [None if j in rep.excluded else float(rep.numeric[j]) for j in range(len(rep.numeric))],
    }
    files = {"report_json": dio.write_json(out / "gradcheck.json", report)}
    return RunArtifact(out, files, np.zeros(0), sites, sites, np.zeros(0), report=report)


_COMMANDS = {
    "tessellate": cmd_tessellate,
    "variance_bounded": cmd_variance,
    "variance_unbounded": cmd_variance,
    "hospital": cmd_hospital,
    "gradcheck": cmd_gradcheck,
}


def run_experiment(cfg: ExperimentConfig) -> RunArtifact:
    return _COMMANDS[cfg.experiment](cfg)
