"""Dependency-free renders: SVG top-down trajectories and PPM (P6) polar heatmaps."""
from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from .heatmap import ANGLE_BIN_DEG, DIST_BIN_M, N_DIST_BINS, check_heatmap, polar_to_metric
from .metrics import EpisodeTrace
from .world import FloorPlan

PX_PER_M = 80.0
MARGIN_PX = 20.0

BACKGROUND = np.array([16, 24, 48], dtype=np.float64)
PEAK = np.array([255, 220, 40], dtype=np.float64)
MARKER = np.array([255, 255, 255], dtype=np.uint8)


def _f(v: float) -> str:
    # fixed precision keeps the output byte-stable
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def trajectory_svg(plan: FloorPlan, traces: Sequence[EpisodeTrace], goals: Optional[Sequence] = None) -> str:
    """Walls, objects, one polyline per trace, collided poses marked with a cross."""
    b = plan.bounds
    w = (b.xmax - b.xmin) * PX_PER_M + 2 * MARGIN_PX
    h = (b.zmax - b.zmin) * PX_PER_M + 2 * MARGIN_PX

    def px(x, z):
        return MARGIN_PX + (x - b.xmin) * PX_PER_M, MARGIN_PX + (b.zmax - z) * PX_PER_M

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w)}" height="{_f(h)}" viewBox="0 0 {_f(w)} {_f(h)}">',
        f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="white"/>',
        '<g id="walls" stroke="black" stroke-width="3" stroke-linecap="round">',
    ]
    for x1, z1, x2, z2 in plan.walls:
        (a, c), (d, e) = px(x1, z1), px(x2, z2)
        out.append(f'<line x1="{_f(a)}" y1="{_f(c)}" x2="{_f(d)}" y2="{_f(e)}"/>')
    out.append("</g>")
    out.append('<g id="objects" fill="#9bb" stroke="#366">')
    for o in plan.objects:
        cx, cy = px(o.x, o.z)
        out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(o.radius * PX_PER_M)}"><title>{o.label}</title></circle>')
    out.append("</g>")

    for i, tr in enumerate(traces):
        pts = " ".join(f"{_f(a)},{_f(c)}" for a, c in (px(p.x, p.z) for p in tr.poses))
        out.append(f'<g id="trace-{i}" data-episode="{tr.episode_id}">')
        out.append(f'<polyline points="{pts}" fill="none" stroke="#1f6fd1" stroke-width="2"/>')
        for p in tr.poses:
            cx, cy = px(p.x, p.z)
            out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="3" fill="#1f6fd1"/>')
        for p, hit in zip(tr.poses[1:], tr.collisions):
            if hit:
                cx, cy = px(p.x, p.z)
                out.append(f'<path d="M{_f(cx - 5)},{_f(cy - 5)} L{_f(cx + 5)},{_f(cy + 5)} '
                           f'M{_f(cx - 5)},{_f(cy + 5)} L{_f(cx + 5)},{_f(cy - 5)}" stroke="red" stroke-width="2"/>')
        sx, sy = px(tr.poses[0].x, tr.poses[0].z)
        out.append(f'<rect x="{_f(sx - 5)}" y="{_f(sy - 5)}" width="10" height="10" fill="#2a2"/>')
        out.append("</g>")
    for g in goals or ():
        gx, gy = px(g[0], g[1])
        out.append(f'<circle cx="{_f(gx)}" cy="{_f(gy)}" r="7" fill="none" stroke="#c0c" stroke-width="3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_image(heatmap, waypoints: Iterable = (), radius_px: int = 120) -> np.ndarray:
    """RGB uint8 image of the polar heatmap, forward pointing up, clockwise angles.

    Scores are clipped to [0, 1] and blended from the background colour, so an
    all-zero heatmap renders as a uniform image.
    """
    p = check_heatmap(heatmap)
    size = 2 * radius_px + 1
    r_max = N_DIST_BINS * DIST_BIN_M
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = (xx - radius_px) / radius_px * r_max
    dz = (radius_px - yy) / radius_px * r_max
    dist = np.hypot(dx, dz)
    theta = np.degrees(np.arctan2(dx, dz)) % 360.0
    k = np.floor(theta / ANGLE_BIN_DEG).astype(int) % p.shape[0]
    j = np.ceil(dist / DIST_BIN_M).astype(int) - 1
    inside = (j >= 0) & (j < N_DIST_BINS) & (dist > 0)
    v = np.zeros((size, size))
    v[inside] = np.clip(p[k[inside], j[inside]], 0.0, 1.0)
    img = BACKGROUND + v[..., None] * (PEAK - BACKGROUND)
    img = np.rint(img).astype(np.uint8)
    for wp in waypoints:
        th, d = polar_to_metric(wp)
        cx = radius_px + d / r_max * radius_px * math.sin(math.radians(th))
        cy = radius_px - d / r_max * radius_px * math.cos(math.radians(th))
        x0, y0 = int(round(cx)), int(round(cy))
        img[max(0, y0 - 2):y0 + 3, max(0, x0 - 2):x0 + 3] = MARKER
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (h, w, 3) uint8 image")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    parts = buf.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise ValueError("not a binary P6 PPM with maxval 255")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    if len(data) != w * h * 3:
        raise ValueError("PPM pixel data has the wrong length")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
