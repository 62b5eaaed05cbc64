"""Strong-scatterer detection and geometric size measurement.

Bright, blob-like returns are located with a multi-scale corner detector
whose characteristic scale is selected by the normalized Laplacian. A
straight axis is then fitted to the detected points by least squares and
the target's length/width are read off as coordinate spreads along and
across that axis, converted to meters via the ground resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSizeError
from .images import GrayImage, gaussian_blur

DEFAULT_SCALES = (1.2, 1.7, 2.4, 3.4, 4.8)


@dataclass(frozen=True)
class KeyPoint:
    """A detected scatterer: x is the column, y the row, both in pixels."""

    x: float
    y: float
    scale: float
    response: float


@dataclass(frozen=True)
class AxisFit:
    """Least-squares line through a point cloud.

    For a regular fit, y = slope*x + intercept. A vertical cloud (all x
    equal) cannot be expressed that way and is flagged instead; its angle
    is pi/2 and slope/intercept are None.
    """

    slope: float | None
    intercept: float | None
    centroid: tuple
    vertical: bool
    rss: float

    @property
    def angle(self) -> float:
        """Axis direction in radians, in (-pi/2, pi/2]."""
        if self.vertical:
            return math.pi / 2.0
        return math.atan(self.slope)


@dataclass(frozen=True)
class SizeEstimate:
    """Physical extents in meters plus the fitted axis direction."""

    length_m: float
    width_m: float
    axis_angle_rad: float

    def __post_init__(self):
        if not (self.length_m > 0 and math.isfinite(self.length_m)):
            raise ValueError(f"length_m must be positive, got {self.length_m}")
        if not (self.width_m > 0 and math.isfinite(self.width_m)):
            raise ValueError(f"width_m must be positive, got {self.width_m}")
        if not -math.pi / 2 < self.axis_angle_rad <= math.pi / 2:
            raise ValueError(f"axis angle outside (-pi/2, pi/2]: {self.axis_angle_rad}")


# ---------------------------------------------------------------------------
# detector
# ---------------------------------------------------------------------------


def _corner_response(pixels: np.ndarray, sigma: float, kappa: float) -> np.ndarray:
    """Scale-adapted corner strength at one integration scale."""
    sigma_d = 0.7 * sigma
    smooth = gaussian_blur(pixels, sigma_d)
    gy, gx = np.gradient(smooth)
    gx = gx * sigma_d
    gy = gy * sigma_d
    j_xx = gaussian_blur(gx * gx, sigma)
    j_yy = gaussian_blur(gy * gy, sigma)
    j_xy = gaussian_blur(gx * gy, sigma)
    det = j_xx * j_yy - j_xy * j_xy
    trace = j_xx + j_yy
    return det - kappa * trace * trace


def _normalized_laplacian(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """|sigma^2 * Laplacian of the sigma-smoothed image| (blob strength)."""
    smooth = gaussian_blur(pixels, sigma)
    padded = np.pad(smooth, 1, mode="reflect")
    lap = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
           - 4.0 * padded[1:-1, 1:-1])
    return sigma * sigma * np.abs(lap)


def harris_laplace(
    image: GrayImage,
    scales=DEFAULT_SCALES,
    kappa: float = 0.04,
    response_threshold: float = 1e-4,
    intensity_threshold: float = 0.5,
    dedupe_radius: float = 2.0,
):
    """Detect bright multi-scale corner points with Laplacian scale selection.

    response_threshold is relative: a candidate must reach that fraction of
    the strongest corner response anywhere in the scale stack. Pixels dimmer
    than intensity_threshold are ignored outright, which keeps detections on
    actual scatterers rather than speckle edges. Returns keypoints sorted by
    descending response; an empty list simply means nothing qualified.
    """
    if not isinstance(image, GrayImage):
        raise TypeError("harris_laplace expects a GrayImage")
    scales = tuple(float(s) for s in scales)
    if len(scales) < 3:
        raise ValueError(f"need at least 3 scales for scale selection, got {len(scales)}")
    if any(s <= 0 for s in scales) or list(scales) != sorted(scales):
        raise ValueError("scales must be positive and ascending")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if image.height < 16 or image.width < 16:
        raise ValueError(f"image too small for detection: {image.height}x{image.width}")

    pixels = image.pixels
    responses = [_corner_response(pixels, s, kappa) for s in scales]
    laplacians = [_normalized_laplacian(pixels, s) for s in scales]
    peak = max(float(r.max()) for r in responses)
    if peak <= 0.0:
        return []
    floor_value = response_threshold * peak

    candidates = []
    for si, sigma in enumerate(scales):
        r = responses[si]
        # strict 8-neighbor spatial maximum, borders excluded
        core = r[1:-1, 1:-1]
        is_max = np.ones_like(core, dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                shifted = r[1 + dy : r.shape[0] - 1 + dy, 1 + dx : r.shape[1] - 1 + dx]
                is_max &= core > shifted
        ys, xs = np.nonzero(is_max)
        ys, xs = ys + 1, xs + 1
        for y, x in zip(ys, xs):
            resp = r[y, x]
            if resp < floor_value or pixels[y, x] < intensity_threshold:
                continue
            here = laplacians[si][y, x]
            below = laplacians[si - 1][y, x] if si > 0 else -np.inf
            above = laplacians[si + 1][y, x] if si < len(scales) - 1 else -np.inf
            if here >= below and here >= above:
                candidates.append(KeyPoint(float(x), float(y), sigma, float(resp)))

    candidates.sort(key=lambda kp: (-kp.response, kp.y, kp.x))
    kept = []
    for cand in candidates:
        if all((cand.x - k.x) ** 2 + (cand.y - k.y) ** 2 >= dedupe_radius**2 for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# axis fit and size measurement
# ---------------------------------------------------------------------------


def _as_xy(points) -> np.ndarray:
    rows = []
    for p in points:
        if isinstance(p, KeyPoint):
            rows.append((p.x, p.y))
        else:
            x, y = p
            rows.append((float(x), float(y)))
    return np.asarray(rows, dtype=np.float64)


def fit_axis(points) -> AxisFit:
    """Least-squares straight line through 2-D points.

    Minimizes vertical residuals; a cloud with a single distinct x value
    degenerates that formulation, so it is returned as a flagged vertical
    fit instead of dividing by zero.
    """
    xy = _as_xy(points)
    n = xy.shape[0]
    if n < 2:
        raise ValueError(f"axis fit needs at least 2 points, got {n}")
    x, y = xy[:, 0], xy[:, 1]
    mean_x = x.mean()
    mean_y = y.mean()
    sxx = float(np.sum(x * x) - n * mean_x * mean_x)
    sxy = float(np.sum(x * y) - n * mean_x * mean_y)
    span_x = float(np.max(np.abs(x - mean_x)))
    if sxx <= 0.0 or span_x == 0.0:
        rss = float(np.sum((x - mean_x) ** 2))
        return AxisFit(None, None, (float(mean_x), float(mean_y)), True, rss)
    slope = sxy / sxx
    intercept = mean_y - slope * mean_x
    rss = float(np.sum((y - (slope * x + intercept)) ** 2))
    return AxisFit(float(slope), float(intercept), (float(mean_x), float(mean_y)), False, rss)


def axis_spans(points, fit: AxisFit) -> tuple:
    """(span along axis, span across axis) of the points, in pixels."""
    xy = _as_xy(points)
    if xy.shape[0] < 1:
        raise ValueError("no points to project")
    theta = fit.angle
    u = np.array([math.cos(theta), math.sin(theta)])
    v = np.array([-math.sin(theta), math.cos(theta)])
    along = xy @ u
    across = xy @ v
    return float(along.max() - along.min()), float(across.max() - across.min())


def measure_size(points, fit: AxisFit, resolution: float) -> SizeEstimate:
    """Spreads along/across the fitted axis, scaled to meters.

    Points that collapse to a single coordinate in either direction carry
    no usable extent and raise DegenerateSizeError.
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    length_px, width_px = axis_spans(points, fit)
    if length_px == 0.0 or width_px == 0.0:
        raise DegenerateSizeError(
            f"point set has zero extent (along={length_px}, across={width_px})"
        )
    return SizeEstimate(length_px * resolution, width_px * resolution, fit.angle)


def normalize_size(length_m: float, width_m: float, low: float = 0.0, high: float = 100.0):
    """Affinely map sizes from [low, high] meters into [-1, 1], clamping."""
    if high <= low:
        raise ValueError(f"invalid size range [{low}, {high}]")
    if length_m <= 0 or width_m <= 0:
        raise ValueError(f"sizes must be positive, got {length_m}, {width_m}")
    out = []
    for v in (length_m, width_m):
        t = 2.0 * (v - low) / (high - low) - 1.0
        out.append(min(1.0, max(-1.0, t)))
    return np.asarray(out, dtype=np.float64)


def estimate_size(image: GrayImage, **detector_kwargs) -> tuple:
    """Full pipeline on one image: detect, fit, measure.

    Returns (SizeEstimate, keypoints, fit). Raises DegenerateSizeError when
    fewer than two scatterers are found or the cloud has no usable extent.
    """
    keypoints = harris_laplace(image, **detector_kwargs)
    if len(keypoints) < 2:
        raise DegenerateSizeError(
            f"found {len(keypoints)} scattering points; need at least 2 to measure"
        )
    fit = fit_axis(keypoints)
    size = measure_size(keypoints, fit, image.resolution)
    return size, keypoints, fit
