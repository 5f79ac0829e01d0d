"""Polar waypoint heatmaps: bin conversions, Gaussian targets, NMS, PHM1 files."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .geometry import ANGLE_BIN_DEG, DIST_BIN_M, N_ANGLE_BINS, N_DIST_BINS

HEATMAP_SHAPE = (N_ANGLE_BINS, N_DIST_BINS)
K_MAX = 5
NMS_RADIUS_BINS = 3
SIGMA_ANGLE_BINS = 2.0
SIGMA_DIST_BINS = 1.0
TRUNCATE_SIGMAS = 3.0

PHM_MAGIC = b"PHM1"
_PHM_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class Waypoint:
    angle_bin: int
    dist_bin: int
    score: float = 0.0

    def __post_init__(self):
        if not (0 <= self.angle_bin < N_ANGLE_BINS and 0 <= self.dist_bin < N_DIST_BINS):
            raise ValidationError(f"waypoint cell ({self.angle_bin}, {self.dist_bin}) out of range")

    @property
    def cell(self) -> Tuple[int, int]:
        return (self.angle_bin, self.dist_bin)


def check_heatmap(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != HEATMAP_SHAPE:
        raise ValidationError(f"heatmap must have shape {HEATMAP_SHAPE}, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("heatmap contains non-finite values")
    return p


def cyclic_bin_distance(a, b, n: int = N_ANGLE_BINS):
    d = np.abs(np.asarray(a) - np.asarray(b)) % n
    return np.minimum(d, n - d)


def nms(heatmap, k_max: int = K_MAX, radius_bins: int = NMS_RADIUS_BINS, min_score: float = 0.0) -> List[Waypoint]:
    """Greedy peak extraction over the polar grid.

    Each pick suppresses every distance bin within ``radius_bins`` angle bins
    (cyclic, inclusive). Picking stops after ``k_max`` peaks or when no cell
    above ``min_score`` remains. Ties go to the lowest linear index.
    """
    if k_max < 1 or radius_bins < 1:
        raise ValidationError("k_max and radius_bins must be >= 1")
    work = check_heatmap(heatmap).copy()
    rows = np.arange(N_ANGLE_BINS)
    picked = []
    while len(picked) < k_max:
        # argmax returns the first (lowest linear index) maximum
        flat = int(np.argmax(work))
        k, j = divmod(flat, N_DIST_BINS)
        score = work[k, j]
        if not score > min_score:
            break
        picked.append(Waypoint(k, j, float(score)))
        work[cyclic_bin_distance(rows, k) <= radius_bins, :] = -np.inf
    return picked


def polar_to_metric(w) -> Tuple[float, float]:
    """Bin-center angle (deg) and distance (m) of a waypoint cell."""
    k, j = (w.angle_bin, w.dist_bin) if isinstance(w, Waypoint) else w
    return ANGLE_BIN_DEG * k + ANGLE_BIN_DEG / 2, DIST_BIN_M * (j + 1)


def metric_to_cell(theta_deg: float, dist_m: float) -> Tuple[int, int]:
    """Inverse of :func:`polar_to_metric`.

    Angles floor into 3 degree bins; distance ``d`` lands in the bin whose
    value ``0.25 (j + 1)`` is the smallest one not below ``d``.
    """
    if not (0.0 < dist_m <= DIST_BIN_M * N_DIST_BINS + 1e-9):
        raise ValidationError(f"distance {dist_m} outside (0, 3.0]")
    k = int(math.floor((theta_deg % 360.0) / ANGLE_BIN_DEG)) % N_ANGLE_BINS
    j = int(math.ceil(dist_m / DIST_BIN_M - 1e-9)) - 1
    return k, min(max(j, 0), N_DIST_BINS - 1)


def gaussian_blob(k0: int, j0: int) -> np.ndarray:
    """Truncated, angle-cyclic Gaussian with peak 1.0 at cell (k0, j0)."""
    dk = cyclic_bin_distance(np.arange(N_ANGLE_BINS), k0).astype(np.float64)
    dj = np.abs(np.arange(N_DIST_BINS) - j0).astype(np.float64)
    gk = np.where(dk <= TRUNCATE_SIGMAS * SIGMA_ANGLE_BINS, np.exp(-0.5 * (dk / SIGMA_ANGLE_BINS) ** 2), 0.0)
    gj = np.where(dj <= TRUNCATE_SIGMAS * SIGMA_DIST_BINS, np.exp(-0.5 * (dj / SIGMA_DIST_BINS) ** 2), 0.0)
    return np.outer(gk, gj)


def target_heatmap(waypoints: Iterable[Tuple[float, float]]) -> np.ndarray:
    """Ground-truth heatmap: cellwise max of one blob per (theta_deg, dist_m)."""
    out = np.zeros(HEATMAP_SHAPE)
    for theta, dist in waypoints:
        np.maximum(out, gaussian_blob(*metric_to_cell(theta, dist)), out=out)
    return out


def encode_phm(heatmap) -> bytes:
    p = check_heatmap(heatmap)
    header = _PHM_HEADER.pack(PHM_MAGIC, p.shape[0], p.shape[1], 0)
    return header + p.astype("<f4").tobytes(order="C")


def decode_phm(buf: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Decode one PHM1 record at ``offset``; returns (heatmap, next offset)."""
    if len(buf) - offset < _PHM_HEADER.size:
        raise ValidationError("truncated PHM1 header")
    magic, rows, cols, _ = _PHM_HEADER.unpack_from(buf, offset)
    if magic != PHM_MAGIC:
        raise ValidationError(f"bad heatmap magic {magic!r}")
    start = offset + _PHM_HEADER.size
    end = start + 4 * rows * cols
    if len(buf) < end:
        raise ValidationError("truncated PHM1 payload")
    data = np.frombuffer(buf[start:end], dtype="<f4").astype(np.float64).reshape(rows, cols)
    return data, end


def decode_phm_stream(buf: bytes) -> List[np.ndarray]:
    out, offset = [], 0
    while offset < len(buf):
        hm, offset = decode_phm(buf, offset)
        out.append(hm)
    return out


def waypoints_to_points(cells: Sequence) -> np.ndarray:
    """Agent-relative (x, z) metric positions for waypoint cells or (theta, dist) pairs."""
    pts = []
    for w in cells:
        theta, dist = polar_to_metric(w) if isinstance(w, Waypoint) else w
        a = math.radians(theta)
        pts.append((dist * math.sin(a), dist * math.cos(a)))
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)
