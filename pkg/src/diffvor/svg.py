"""Deterministic SVG rendering of diagram snapshots.

The output is written by hand (no plotting library) so that the same
snapshot always yields the same bytes. World y points up; the document
flips it with a group transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .voronoi import DiagramSnapshot

__all__ = ["SvgStyle", "render_svg", "write_svg"]


@dataclass(frozen=True)
class SvgStyle:
    width: int = 600
    margin: float = 0.05
    edge_color: str = "red"
    edge_width: float = 0.002
    fill: str = "none"
    show_sites: bool = True
    site_color: str = "black"
    site_radius: float = 0.004
    show_boundary: bool = True
    boundary_color: str = "black"
    # per-site marker sizes (e.g. hospital capacities), drawn on top
    markers: Optional[Sequence[float]] = None
    marker_color: str = "red"
    marker_radius: float = 0.02
    title: Optional[str] = None


def _n(x: float) -> str:
    return "%.17g" % float(x)


def _pts(poly: np.ndarray) -> str:
    return " ".join(f"{_n(x)},{_n(y)}" for x, y in poly)


def _extent(snap: DiagramSnapshot):
    parts = []
    if len(snap.sites):
        parts.append(np.asarray(snap.sites, dtype=float))
    if snap.boundary is not None and len(snap.boundary):
        parts.append(np.asarray(snap.boundary, dtype=float))
    if not parts:
        return 0.0, 0.0, 1.0, 1.0, 1.0
    pts = np.vstack(parts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]), span


def render_svg(snapshot: DiagramSnapshot, style: SvgStyle = SvgStyle()) -> str:
    """SVG document for ``snapshot``.

    The view box fits the sites and boundary (not the far ghost vertices of
    unbounded cells, which are left to run off the canvas).
    """
    x0, y0, x1, y1, span = _extent(snapshot)
    pad = style.margin * span
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    w, h = x1 - x0, y1 - y0
    height = max(1, int(round(style.width * h / w)))
    sw = style.edge_width * span

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" height="{height}" '
        f'viewBox="{_n(x0)} {_n(-y1)} {_n(w)} {_n(h)}">',
    ]
    if style.title:
        out.append(f"<title>{_escape(style.title)}</title>")
    out.append(f'<defs><clipPath id="view"><rect x="{_n(x0)}" y="{_n(y0)}" '
               f'width="{_n(w)}" height="{_n(h)}"/></clipPath></defs>')
    out.append('<g id="geometry" transform="scale(1,-1)" clip-path="url(#view)">')

    polys = [(i, np.asarray(p, dtype=float)) for i, p in enumerate(snapshot.cells) if len(p) >= 2]
    if polys:
        out.append(f'<g id="cells" fill="{style.fill}" stroke="{style.edge_color}" '
                   f'stroke-width="{_n(sw)}" stroke-linejoin="round">')
        for i, poly in polys:
            out.append(f'<polygon data-site="{i}" points="{_pts(poly)}"/>')
        out.append("</g>")

    if style.show_boundary and snapshot.boundary is not None and len(snapshot.boundary):
        out.append(f'<polygon id="boundary" fill="none" stroke="{style.boundary_color}" '
                   f'stroke-width="{_n(1.5 * sw)}" points="{_pts(np.asarray(snapshot.boundary))}"/>')

    if style.show_sites and len(snapshot.sites):
        r = style.site_radius * span
        out.append(f'<g id="sites" fill="{style.site_color}">')
        for x, y in snapshot.sites:
            out.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{_n(r)}"/>')
        out.append("</g>")

    if style.markers is not None and len(snapshot.sites):
        m = np.asarray(style.markers, dtype=float)
        if m.shape != (len(snapshot.sites),):
            raise ValueError("need one marker size per site")
        scale = style.marker_radius * span / max(float(m.max()), 1e-300)
        out.append(f'<g id="markers" fill="{style.marker_color}" fill-opacity="0.6">')
        for (x, y), s in zip(snapshot.sites, m):
            out.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{_n(scale * s)}"/>')
        out.append("</g>")

    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(path, snapshot: DiagramSnapshot, style: SvgStyle = SvgStyle()):
    path = Path(path)
    path.write_text(render_svg(snapshot, style), encoding="utf-8")
    return path
