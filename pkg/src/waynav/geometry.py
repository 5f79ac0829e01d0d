"""Depth panorama -> shortest-distance profile -> polar occupancy mask.

Frames: x points right, y up, z forward. Headings are in degrees, measured
clockwise (toward +x) from +z, so heading ``a`` faces ``(sin a, cos a)`` in
the (x, z) plane.

Depth images are stored as ``(h, w)`` arrays (row-major, row 0 at the top)
and hold Euclidean range along each pixel's ray.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

N_ANGLE_BINS = 120
N_DIST_BINS = 12
ANGLE_BIN_DEG = 3.0
DIST_BIN_M = 0.25
MAX_RANGE_M = 3.25
N_VIEWS = 12
VIEW_STEP_DEG = 30.0
COLUMNS_PER_VIEW = 30

# d_j = 0.25 (j + 1)
DIST_BINS_M = DIST_BIN_M * np.arange(1, N_DIST_BINS + 1, dtype=np.float64)

# views 0, 3, 6, 9 tile the full circle without overlap
PROFILE_VIEWS = (0, 3, 6, 9)


@dataclass(frozen=True)
class DepthCamera:
    width: int = 120
    height: int = 8
    camera_height: float = 0.7
    vfov_deg: float = 60.0
    hfov_deg: float = 90.0

    def __post_init__(self):
        if self.hfov_deg != 90.0:
            raise ConfigurationError(f"hfov_deg must be 90, got {self.hfov_deg}")
        if self.width < COLUMNS_PER_VIEW or self.width % COLUMNS_PER_VIEW:
            raise ConfigurationError(f"width must be a positive multiple of 30, got {self.width}")
        if self.height < 1:
            raise ConfigurationError(f"height must be >= 1, got {self.height}")

    def column_azimuths(self) -> np.ndarray:
        """Azimuth (deg, relative to the optical axis) of every pixel column."""
        return (np.arange(self.width) - self.width / 2) * (self.hfov_deg / self.width)

    def row_elevations(self) -> np.ndarray:
        return (self.height / 2 - np.arange(self.height)) * (self.vfov_deg / self.height)


@dataclass(frozen=True)
class DepthImage:
    pixels: np.ndarray
    heading_deg: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValidationError(f"depth image must be 2-D, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("depth image contains non-finite values")
        if np.any(px < 0):
            raise ValidationError("depth image contains negative values")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class DepthPanorama:
    views: tuple

    def __post_init__(self):
        views = tuple(self.views)
        if len(views) != N_VIEWS:
            raise ValidationError(f"panorama needs {N_VIEWS} views, got {len(views)}")
        h0 = views[0].heading_deg
        for i, v in enumerate(views):
            expected = (h0 + VIEW_STEP_DEG * i) % 360.0
            if not math.isclose(v.heading_deg % 360.0, expected, abs_tol=1e-6) and not (
                math.isclose(abs(v.heading_deg % 360.0 - expected), 360.0, abs_tol=1e-6)
            ):
                raise ValidationError(
                    f"view {i} heading {v.heading_deg} breaks the 30 degree spacing"
                )
        object.__setattr__(self, "views", views)


def _direction(azimuth_deg, elevation_deg):
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.stack(
        np.broadcast_arrays(np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)),
        axis=-1,
    )


def ray_direction(camera: DepthCamera, heading_deg: float, col: int, row: int) -> np.ndarray:
    """Unit world-frame direction of pixel ``(col, row)``.

    Columns are equiangular across the 90 degree field of view with column 0
    at the left edge, so every block of ``width / 30`` columns spans exactly 3
    degrees. Rows are equiangular across ``vfov_deg``.
    """
    if not (0 <= col < camera.width) or not (0 <= row < camera.height):
        raise IndexError(f"pixel ({col}, {row}) outside {camera.width}x{camera.height}")
    az = heading_deg + (col - camera.width / 2) * (camera.hfov_deg / camera.width)
    el = (camera.height / 2 - row) * (camera.vfov_deg / camera.height)
    return _direction(az, el)


def reduce_depth_view(view: DepthImage) -> np.ndarray:
    """Collapse each block of ``w / 30`` columns to its per-row minimum.

    Returns an ``(h, 30)`` array.
    """
    w = view.width
    if w % COLUMNS_PER_VIEW:
        raise ConfigurationError(f"view width {w} is not divisible by 30")
    g = w // COLUMNS_PER_VIEW
    return view.pixels.reshape(view.height, COLUMNS_PER_VIEW, g).min(axis=2)


def _reduced_camera(camera: DepthCamera) -> DepthCamera:
    return DepthCamera(
        width=COLUMNS_PER_VIEW,
        height=camera.height,
        camera_height=camera.camera_height,
        vfov_deg=camera.vfov_deg,
    )


def column_min_point(reduced: np.ndarray, camera: DepthCamera, heading_deg: float, n: int) -> np.ndarray:
    """3-D point of the nearest pixel in reduced column ``n``, agent at the origin.

    The reduced map is treated as a 30-column image with the same field of
    view, so column ``n`` points at the left edge of its 3 degree sector.
    """
    if not 0 <= n < COLUMNS_PER_VIEW:
        raise IndexError(f"reduced column {n} out of range")
    column = reduced[:, n]
    m = int(np.argmin(column))
    d = ray_direction(_reduced_camera(camera), heading_deg, n, m)
    return column[m] * d


def horizontal_distance(c) -> float:
    return math.hypot(c[0], c[2])


@dataclass(frozen=True)
class ShortestDistanceProfile:
    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        if d.shape != (N_ANGLE_BINS,):
            raise ValidationError(f"profile must have {N_ANGLE_BINS} entries, got {d.shape}")
        if np.any(d <= 0):
            raise ValidationError("profile distances must be positive")
        object.__setattr__(self, "distances", d)


def _view_profile(view: DepthImage, camera: DepthCamera, rel_heading: float) -> np.ndarray:
    reduced = reduce_depth_view(view)
    out = np.empty(COLUMNS_PER_VIEW)
    for n in range(COLUMNS_PER_VIEW):
        out[n] = horizontal_distance(column_min_point(reduced, camera, rel_heading, n))
    return out


def shortest_distance_profile(pano: DepthPanorama, camera: DepthCamera) -> ShortestDistanceProfile:
    """120-bin nearest-obstacle distance profile, relative to view 0's heading.

    Bin ``k`` covers ``[3k, 3k + 3)`` degrees clockwise from view 0.
    """
    if not isinstance(pano, DepthPanorama):
        raise ValidationError("expected a DepthPanorama")
    for v in pano.views:
        if v.pixels.shape != (camera.height, camera.width):
            raise ValidationError(
                f"view shape {v.pixels.shape} does not match camera {(camera.height, camera.width)}"
            )
    distances = np.empty(N_ANGLE_BINS)
    for idx in PROFILE_VIEWS:
        rel = VIEW_STEP_DEG * idx
        cols = _view_profile(pano.views[idx], camera, rel)
        # reduced column n covers [rel - 45 + 3n, rel - 42 + 3n)
        start = int(round((rel - 45.0) / ANGLE_BIN_DEG))
        bins = (start + np.arange(COLUMNS_PER_VIEW)) % N_ANGLE_BINS
        distances[bins] = cols
    # a zero-depth column (agent touching a wall) would violate positivity
    distances = np.maximum(distances, 1e-9)
    return ShortestDistanceProfile(distances)


def occupancy_mask(profile: ShortestDistanceProfile) -> np.ndarray:
    """Binary ``(120, 12)`` grid: cell (k, j) is 1 iff ``d_j <= D_k``."""
    d = profile.distances if isinstance(profile, ShortestDistanceProfile) else np.asarray(profile)
    if d.shape != (N_ANGLE_BINS,):
        raise ValidationError(f"profile must have {N_ANGLE_BINS} entries")
    return (DIST_BINS_M[None, :] <= d[:, None]).astype(np.uint8)
