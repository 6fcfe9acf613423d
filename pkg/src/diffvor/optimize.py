"""Losses over Voronoi geometry, Adam, and the retriangulating run loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .autodiff import DIV_EPS, Tape, Var, sin, vsum
from .delaunay import Triangulation, triangulate
from .voronoi import (
    Boundary,
    DegenerateGeometryError,
    DiagramSnapshot,
    DiffPoint,
    VoronoiCell,
    VoronoiDiagram,
    build_diagram,
    clip_diagram,
    default_omega,
)

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_TOTAL_POPULATION",
    "ConstantDensity",
    "SineDensity",
    "LossSpec",
    "Adam",
    "adam_step",
    "RunSchedule",
    "OptimizationResult",
    "SiteEscapedError",
    "loss_area_variance",
    "cell_population",
    "efficiencies",
    "loss_hospital",
    "evaluate",
    "run_optimization",
    "GradcheckReport",
    "gradcheck",
]

# total population of sin(10x) + sin(10y) + 2 over the unit square
DEFAULT_TOTAL_POPULATION = 2.3678


@dataclass(frozen=True)
class ConstantDensity:
    value: float = 1.0

    def __call__(self, x, y):
        return self.value

    def evaluate(self, xs, ys) -> np.ndarray:
        return np.full(np.shape(xs), self.value, dtype=float)

    def integral_box(self, x0, y0, x1, y1) -> float:
        return self.value * (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class SineDensity:
    """rho(x, y) = sin(f x) + sin(f y) + offset."""

    frequency: float = 10.0
    offset: float = 2.0

    def __call__(self, x, y):
        f = self.frequency
        return sin(x * f) + sin(y * f) + self.offset

    def evaluate(self, xs, ys) -> np.ndarray:
        f = self.frequency
        return np.sin(f * np.asarray(xs)) + np.sin(f * np.asarray(ys)) + self.offset

    def integral_box(self, x0, y0, x1, y1) -> float:
        f = self.frequency
        ix = (math.cos(f * x0) - math.cos(f * x1)) / f
        iy = (math.cos(f * y0) - math.cos(f * y1)) / f
        return ix * (y1 - y0) + iy * (x1 - x0) + self.offset * (x1 - x0) * (y1 - y0)


Density = Union[ConstantDensity, SineDensity]


@dataclass
class LossSpec:
    kind: str = "area_variance"
    mask_unbounded: bool = True
    capacities: Optional[Sequence[float]] = None
    density: Optional[Density] = None

    def __post_init__(self):
        if self.kind not in ("area_variance", "hospital_mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "hospital_mse":
            if self.capacities is None or self.density is None:
                raise ValueError("hospital_mse needs capacities and a density")
            caps = np.asarray(self.capacities, dtype=float)
            if np.any(~np.isfinite(caps)) or np.any(caps <= 0):
                raise ValueError("capacities must be positive and finite")
            self.capacities = caps


class SiteEscapedError(DegenerateGeometryError):
    pass


def loss_area_variance(tape: Optional[Tape], diagram: VoronoiDiagram,
                       mask_unbounded: bool = True) -> Var:
    """Population variance (1/N convention) of the cell areas.

    With ``mask_unbounded`` the ghost-closed hull cells are left out; cells
    of a clipped diagram are always finite and always count.
    """
    cells = diagram.cells
    if mask_unbounded and diagram.boundary is None:
        cells = [c for c in cells if not c.is_unbounded]
    n = len(cells)
    if n < 2:
        raise ValueError(f"need at least 2 cells after masking, got {n}")
    areas = [c.area for c in cells]
    mean = vsum(areas) * (1.0 / n)
    sq = []
    for a in areas:
        d = a - mean
        sq.append(d * d)
    return vsum(sq) * (1.0 / n)


def cell_population(tape: Optional[Tape], cell: VoronoiCell, density) -> Var:
    """Coarse integral of ``density`` over a finite cell.

    Area times the mean density sampled at the cell's vertices and its site.
    Sample positions are on the tape, so the gradient sees both the area
    and where the samples sit.
    """
    samples = [density(v.x, v.y) for v in cell.vertices]
    samples.append(density(cell.site_point.x, cell.site_point.y))
    mean_rho = vsum(samples) * (1.0 / len(samples))
    return cell.area * mean_rho


def efficiencies(tape: Optional[Tape], diagram: VoronoiDiagram,
                 capacities: Sequence[float], density) -> list:
    if len(capacities) != len(diagram.cells):
        raise ValueError(
            f"{len(capacities)} capacities for {len(diagram.cells)} cells"
        )
    if diagram.boundary is None:
        raise ValueError("hospital efficiencies need a bounded (clipped) diagram")
    out = []
    for cap, cell in zip(capacities, diagram.cells):
        pop = cell_population(tape, cell, density)
        if abs(float(pop.value if isinstance(pop, Var) else pop)) < DIV_EPS:
            raise DegenerateGeometryError(f"cell {cell.site} has empty catchment", (cell.site,))
        out.append(float(cap) / pop)
    return out


def loss_hospital(tape: Optional[Tape], diagram: VoronoiDiagram,
                  capacities: Sequence[float], density) -> Var:
    """Mean squared deviation of capacity / catchment population from 1."""
    w = efficiencies(tape, diagram, capacities, density)
    sq = []
    for wi in w:
        d = wi - 1.0
        sq.append(d * d)
    return vsum(sq) * (1.0 / len(sq))


class Adam:
    """Adam with bias correction over a flat coordinate vector."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0 or not eps > 0:
            raise ValueError("learning rate and eps must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, coords, grads) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        grads = np.asarray(grads, dtype=float)
        if coords.shape != self.m.shape or grads.shape != self.m.shape:
            raise ValueError(
                f"expected vectors of length {self.m.size}, got {coords.shape} and {grads.shape}"
            )
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return coords - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, coords, grads) -> np.ndarray:
    return state.step(coords, grads)


@dataclass(frozen=True)
class RunSchedule:
    steps: int
    retriangulate_every: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.retriangulate_every < 1:
            raise ValueError("retriangulation period must be >= 1")


@dataclass
class OptimizationResult:
    losses: np.ndarray
    initial_sites: np.ndarray
    sites: np.ndarray
    snapshot: Optional[DiagramSnapshot]
    retriangulations: int = 0
    stale_steps: list = field(default_factory=list)
    extra: Optional[np.ndarray] = None


LossFn = Callable[..., Var]


def _loss_value(spec: Union[LossSpec, LossFn], tape: Tape, diagram: VoronoiDiagram, extra):
    if callable(spec) and not isinstance(spec, LossSpec):
        return spec(tape, diagram, extra) if extra is not None else spec(tape, diagram)
    if spec.kind == "area_variance":
        return loss_area_variance(tape, diagram, spec.mask_unbounded)
    return loss_hospital(tape, diagram, spec.capacities, spec.density)


def evaluate(coords, tri: Triangulation, loss: Union[LossSpec, LossFn],
             boundary: Optional[Boundary], omega: float, extra=None,
             clip_edges: bool = False):
    """Record one forward pass; returns ``(tape, diagram, loss)``.

    Site coordinates are leaves ``0 .. 2N-1`` in x, y order; extra
    parameters, if any, follow them.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    tape = Tape()
    sites = [DiffPoint(tape.leaf(x), tape.leaf(y), ("s", i)) for i, (x, y) in enumerate(coords.tolist())]
    extra_vars = None if extra is None else [tape.leaf(v) for v in np.ravel(extra)]
    diagram = build_diagram(tape, sites, tri, omega)
    if boundary is not None:
        diagram = clip_diagram(tape, diagram, boundary, clip_edges=clip_edges)
    value = _loss_value(loss, tape, diagram, extra_vars)
    return tape, diagram, value


def _check_inside(coords: np.ndarray, boundary: Boundary, step: int) -> None:
    inside = boundary.contains(coords)
    if not inside.all():
        bad = np.flatnonzero(~inside)
        err = SiteEscapedError(
            f"step {step}: sites {bad[:10].tolist()} left the boundary "
            "(enable clamping to project them back)",
            bad.tolist(),
        )
        err.step = step
        raise err


def run_optimization(
    sites,
    loss: Union[LossSpec, LossFn],
    schedule: RunSchedule,
    boundary: Optional[Boundary] = None,
    omega: Optional[float] = None,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clamp: bool = False,
    extra=None,
    on_step: Optional[Callable] = None,
) -> OptimizationResult:
    """Gradient descent on site positions.

    The triangulation is rebuilt every ``schedule.retriangulate_every`` steps
    and, in between, whenever a triangle has inverted or the kept
    triangulation can no longer produce a valid diagram. ``on_step`` is
    called as ``on_step(step, tape, diagram, loss)`` before each update.
    """
    coords = np.array(sites, dtype=float).reshape(-1, 2)
    initial = coords.copy()
    n = len(coords)
    if boundary is not None:
        if not boundary.contains(coords, strict=True).all():
            raise SiteEscapedError("all sites must start strictly inside the boundary")
    if omega is None:
        omega = default_omega(coords, boundary)
    extra_vals = None if extra is None else np.array(extra, dtype=float).ravel()
    n_extra = 0 if extra_vals is None else extra_vals.size
    adam = Adam(2 * n + n_extra, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    r = schedule.retriangulate_every

    losses = []
    stale_steps = []
    retri = 0
    tri = None
    for step in range(schedule.steps):
        fresh = False
        if tri is None or step % r == 0:
            tri = triangulate(coords)
            fresh = True
        elif np.any(tri.signed_double_areas(coords) <= 0.0):
            log.info("step %d: inverted triangle, retriangulating", step)
            stale_steps.append(step)
            tri = triangulate(coords)
            fresh = True
        if fresh:
            retri += 1
            if boundary is not None:
                _check_inside(coords, boundary, step)
        try:
            tape, diagram, value = evaluate(coords, tri, loss, boundary, omega, extra_vals)
        except DegenerateGeometryError as exc:
            if fresh:
                exc.step = step
                raise
            log.info("step %d: kept triangulation went stale (%s), retriangulating", step, exc)
            stale_steps.append(step)
            tri = triangulate(coords)
            retri += 1
            if boundary is not None:
                _check_inside(coords, boundary, step)
            try:
                tape, diagram, value = evaluate(coords, tri, loss, boundary, omega, extra_vals)
            except DegenerateGeometryError as exc2:
                exc2.step = step
                raise
        if on_step is not None:
            on_step(step, tape, diagram, value)
        grads = tape.backward(value)
        losses.append(value.value)
        params = coords.ravel() if extra_vals is None else np.concatenate([coords.ravel(), extra_vals])
        params = adam.step(params, grads)
        coords = params[: 2 * n].reshape(-1, 2)
        if extra_vals is not None:
            extra_vals = params[2 * n:]
        if clamp and boundary is not None:
            coords = boundary.project(coords)

    if stale_steps:
        log.info("%d staleness-triggered retriangulations", len(stale_steps))
    snap = None
    try:
        _, diagram, _ = evaluate(
            coords, triangulate(coords), lambda t, d: None, boundary, omega, clip_edges=True
        )
        snap = diagram.snapshot()
    except (DegenerateGeometryError, ValueError) as exc:
        log.warning("final diagram unavailable: %s", exc)
    return OptimizationResult(
        losses=np.array(losses, dtype=float),
        initial_sites=initial,
        sites=coords,
        snapshot=snap,
        retriangulations=retri,
        stale_steps=stale_steps,
        extra=extra_vals,
    )


@dataclass
class GradcheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    excluded: list
    max_rel_error: float
    rtol: float
    atol: float
    h: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.rtol


def gradcheck(
    coords,
    loss: Union[LossSpec, LossFn],
    boundary: Optional[Boundary] = None,
    omega: Optional[float] = None,
    h: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-8,
) -> GradcheckReport:
    """Analytic gradient vs central differences with the topology frozen.

    The error of coordinate j is ``|a - f| / max(|f|, atol / rtol)``, so it
    stays below ``rtol`` exactly when ``|a - f| <= max(rtol |f|, atol)``.
    Coordinates whose perturbation changes the combinatorial structure of
    the diagram are reported in ``excluded`` and not scored.
    """
    coords = np.array(coords, dtype=float).reshape(-1, 2)
    if omega is None:
        omega = default_omega(coords, boundary)
    tri = triangulate(coords)
    tape, diagram, value = evaluate(coords, tri, loss, boundary, omega)
    analytic = tape.backward(value)[: coords.size]
    base_sig = diagram.signature()

    flat = coords.ravel()
    numeric = np.zeros_like(flat)
    excluded = []
    for j in range(flat.size):
        vals = []
        for sign in (1.0, -1.0):
            p = flat.copy()
            p[j] += sign * h
            try:
                _, d, v = evaluate(p, tri, loss, boundary, omega)
            except DegenerateGeometryError:
                vals = None
                break
            if d.signature() != base_sig:
                vals = None
                break
            vals.append(v.value)
        if vals is None:
            excluded.append(j)
            numeric[j] = np.nan
            continue
        numeric[j] = (vals[0] - vals[1]) / (2.0 * h)

    scored = np.ones(flat.size, dtype=bool)
    scored[excluded] = False
    rel = np.full(flat.size, np.nan)
    rel[scored] = np.abs(analytic[scored] - numeric[scored]) / np.maximum(
        np.abs(numeric[scored]), atol / rtol
    )
    max_rel = float(np.max(rel[scored])) if scored.any() else 0.0
    return GradcheckReport(
        analytic=analytic,
        numeric=numeric,
        rel_error=rel,
        excluded=excluded,
        max_rel_error=max_rel,
        rtol=rtol,
        atol=atol,
        h=h,
    )
