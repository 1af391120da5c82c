"""SVG rendering of region tessellations.

Paths are written in plane coordinates (the viewBox maps them and a
group transform flips the vertical axis), so vertex values survive a
parse of the document unchanged.
"""
from __future__ import annotations

import colorsys
import hashlib
import re
from xml.sax.saxutils import escape

import numpy as np

from .errors import DegenerateError
from .regions import RegionSet


def pattern_color(packed: bytes) -> str:
    h = hashlib.sha1(packed).digest()
    hue = h[0] / 255.0
    sat = 0.45 + 0.35 * h[1] / 255.0
    light = 0.55 + 0.25 * h[2] / 255.0
    r, g, b = colorsys.hls_to_rgb(hue, light, sat)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def _path(vertices: np.ndarray) -> str:
    pts = " L ".join(f"{a!r},{b!r}" for a, b in vertices.tolist())
    return f"M {pts} Z"


def render_svg(rs: RegionSet, width: int = 640, stroke: bool = True, title: str | None = None) -> str:
    """One closed path per region, coloured by a hash of its activation pattern."""
    if not rs.regions:
        raise DegenerateError("nothing to render: region set is empty")
    lo = rs.domain.min(axis=0)
    hi = rs.domain.max(axis=0)
    span = hi - lo
    height = max(1, round(width * span[1] / span[0]))
    sw = float(max(span)) * 0.0015
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="{lo[0]!r} {-hi[1]!r} {span[0]!r} {span[1]!r}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append('<g transform="scale(1,-1)">')
    stroke_attr = f' stroke="#202020" stroke-width="{sw!r}"' if stroke else ' stroke="none"'
    for i, r in enumerate(rs.regions):
        out.append(
            f'<path id="r{i}" class="region" d="{_path(r.vertices)}" '
            f'fill="{pattern_color(r.pattern.packed)}"{stroke_attr}/>'
        )
    out.append(f'<path id="domain" d="{_path(rs.domain)}" fill="none" stroke="#000000" '
               f'stroke-width="{2 * sw!r}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


_PATH_RE = re.compile(r'<path id="(r\d+)" class="region" d="([^"]*)"')


def parse_svg_regions(svg: str) -> list[np.ndarray]:
    """Recover region vertex arrays from a document produced by ``render_svg``."""
    out = []
    for _, d in _PATH_RE.findall(svg):
        body = d.strip()
        if body.startswith("M"):
            body = body[1:]
        if body.endswith("Z"):
            body = body[:-1]
        pts = [[float(v) for v in tok.split(",")] for tok in body.split(" L ")]
        out.append(np.array(pts))
    return out
