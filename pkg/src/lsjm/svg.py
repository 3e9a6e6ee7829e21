"""Minimal deterministic SVG scatter plots of latent positions."""

from __future__ import annotations

import math
from html import escape
from typing import Sequence

import numpy as np

from .errors import IoFailure

SIZE = 480
MARGIN = 36


def _num(x: float) -> str:
    # fixed precision keeps the byte stream stable across platforms
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _bounds(points: np.ndarray, ellipses):
    if points.size == 0:
        return -1.0, 1.0, -1.0, 1.0
    lo = points.min(axis=0).astype(float)
    hi = points.max(axis=0).astype(float)
    if ellipses is not None:
        pad = max(float(e[0]) for e in ellipses)
        lo, hi = lo - pad, hi + pad
    span = max(float((hi - lo).max()), 1e-9)
    mid = (lo + hi) / 2
    return mid[0] - span / 2, mid[0] + span / 2, mid[1] - span / 2, mid[1] + span / 2


def scatter_svg(positions, labels: Sequence[str] = (), ellipses=None, arrows=None, title: str = "") -> str:
    """SVG text for 2-D ``positions`` with optional ellipses and arrows.

    ``ellipses`` holds one ``(semi_major, semi_minor, angle)`` per point;
    overlapping translucent ellipses darken.  ``arrows`` holds
    ``(x0, y0, x1, y1)`` segments in data coordinates.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 2) if len(positions) else np.zeros((0, 2))
    extra = pts
    if arrows is not None and len(arrows):
        a = np.asarray(arrows, dtype=float)
        extra = np.vstack([pts, a[:, :2], a[:, 2:]])
    x0, x1, y0, y1 = _bounds(extra, ellipses)
    scale = (SIZE - 2 * MARGIN) / max(x1 - x0, y1 - y0)

    def px(x, y):
        return MARGIN + (x - x0) * scale, SIZE - MARGIN - (y - y0) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{SIZE // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    # axes through the origin when it is in view, else along the frame
    ox, oy = px(min(max(0.0, x0), x1), min(max(0.0, y0), y1))
    out.append(f'<line x1="{MARGIN}" y1="{_num(oy)}" x2="{SIZE - MARGIN}" y2="{_num(oy)}" stroke="#999" stroke-width="1"/>')
    out.append(f'<line x1="{_num(ox)}" y1="{MARGIN}" x2="{_num(ox)}" y2="{SIZE - MARGIN}" stroke="#999" stroke-width="1"/>')
    if ellipses is not None:
        for (x, y), (a, b, ang) in zip(pts, ellipses):
            cx, cy = px(x, y)
            deg = -math.degrees(ang)
            out.append(
                f'<ellipse cx="{_num(cx)}" cy="{_num(cy)}" rx="{_num(a * scale)}" ry="{_num(b * scale)}" '
                f'transform="rotate({_num(deg)} {_num(cx)} {_num(cy)})" fill="grey" fill-opacity="0.15"/>'
            )
    if arrows is not None and len(arrows):
        out.append('<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
                   '<path d="M0,0 L6,3 L0,6 z" fill="#555"/></marker></defs>')
        for xa, ya, xb, yb in np.asarray(arrows, dtype=float):
            (sx, sy), (ex, ey) = px(xa, ya), px(xb, yb)
            out.append(f'<line x1="{_num(sx)}" y1="{_num(sy)}" x2="{_num(ex)}" y2="{_num(ey)}" '
                       'stroke="#555" stroke-width="1" marker-end="url(#head)"/>')
    labels = list(labels)
    for i, (x, y) in enumerate(pts):
        cx, cy = px(x, y)
        out.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="3" fill="black"/>')
        if i < len(labels):
            out.append(f'<text x="{_num(cx + 4)}" y="{_num(cy - 4)}" font-size="9">{escape(str(labels[i]))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_scatter(path, positions, labels=(), ellipses=None, arrows=None, title: str = "") -> None:
    text = scatter_svg(positions, labels, ellipses, arrows, title)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None
