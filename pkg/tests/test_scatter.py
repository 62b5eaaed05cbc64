"""Detector, axis fit, and size measurement against independent oracles."""
import math

import numpy as np
import pytest

from msnet.errors import DegenerateSizeError
from msnet.images import GrayImage
from msnet.scatter import (
    DEFAULT_SCALES,
    AxisFit,
    KeyPoint,
    axis_spans,
    estimate_size,
    fit_axis,
    harris_laplace,
    measure_size,
    normalize_size,
)


def blob_image(centers, size=32, amplitude=1.0, sigma=1.0, background=0.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    canvas = np.full((size, size), background)
    for cy, cx in centers:
        canvas += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return GrayImage(np.clip(canvas, 0.0, 1.0), 1.0)


# ---------------------------------------------------------------------------
# detector
# ---------------------------------------------------------------------------


def test_single_blob_detected_within_one_pixel():
    img = blob_image([(10, 10)])
    kps = harris_laplace(img)
    assert len(kps) == 1
    assert math.hypot(kps[0].x - 10, kps[0].y - 10) <= 1.0


def test_multiple_blobs_all_found():
    centers = [(8, 8), (8, 24), (24, 8), (24, 24), (16, 16)]
    kps = harris_laplace(blob_image(centers))
    assert len(kps) == len(centers)
    for cy, cx in centers:
        assert min(math.hypot(k.x - cx, k.y - cy) for k in kps) <= 1.0


def test_keypoints_sit_on_bright_pixels():
    img = blob_image([(10, 10), (20, 22)], background=0.05)
    for kp in harris_laplace(img, intensity_threshold=0.5):
        assert img.pixels[int(round(kp.y)), int(round(kp.x))] >= 0.5


def test_dim_blob_rejected_by_intensity_gate():
    img = blob_image([(16, 16)], amplitude=0.4)
    assert harris_laplace(img, intensity_threshold=0.5) == []
    assert len(harris_laplace(img, intensity_threshold=0.2)) == 1


def test_empty_image_yields_no_keypoints():
    img = GrayImage(np.zeros((32, 32)), 1.0)
    assert harris_laplace(img) == []


def test_keypoints_sorted_by_response():
    img = blob_image([(10, 10)], amplitude=1.0)
    img2 = blob_image([(10, 10), (22, 22)], amplitude=1.0)
    # second blob dimmer: scale its neighborhood down
    pixels = img2.pixels.copy()
    pixels[18:27, 18:27] *= 0.7
    kps = harris_laplace(GrayImage(pixels, 1.0))
    responses = [k.response for k in kps]
    assert responses == sorted(responses, reverse=True)


def test_rot90_equivariance():
    rng = np.random.default_rng(11)
    pts = [(9, 12), (22, 7), (17, 25)]
    img = blob_image(pts, size=31)
    base = harris_laplace(img)
    rot = harris_laplace(GrayImage(np.rot90(img.pixels).copy(), 1.0))
    assert len(base) == len(rot)
    n = 31
    # rot90 maps (y, x) -> (n-1-x, y)
    mapped = sorted((n - 1 - k.x, k.y) for k in base)
    got = sorted((k.y, k.x) for k in rot)
    for (my, mx), (gy, gx) in zip(mapped, got):
        assert math.hypot(my - gy, mx - gx) <= 1.0


def test_dedupe_merges_adjacent_candidates():
    # two blobs one pixel apart cannot both survive a 2 px dedupe radius
    img = blob_image([(16, 16), (16, 17)])
    kps = harris_laplace(img)
    assert len(kps) == 1


def test_scale_selection_tracks_blob_size():
    small = harris_laplace(blob_image([(16, 16)], sigma=1.0))
    big = harris_laplace(blob_image([(16, 16)], sigma=3.2))
    assert len(small) == 1 and len(big) == 1
    assert small[0].scale < big[0].scale


def test_detector_validations():
    img = blob_image([(10, 10)])
    with pytest.raises(TypeError):
        harris_laplace(img.pixels)
    with pytest.raises(ValueError):
        harris_laplace(img, scales=(1.0, 2.0))  # need >= 3
    with pytest.raises(ValueError):
        harris_laplace(img, scales=(2.0, 1.0, 3.0))  # not ascending
    with pytest.raises(ValueError):
        harris_laplace(img, kappa=0.0)
    with pytest.raises(ValueError):
        harris_laplace(GrayImage(np.zeros((8, 8)), 1.0))  # too small
    assert len(DEFAULT_SCALES) == 5


# ---------------------------------------------------------------------------
# axis fit vs closed form
# ---------------------------------------------------------------------------


def ls_oracle(xy):
    """Textbook normal-equation slope/intercept."""
    x, y = xy[:, 0], xy[:, 1]
    n = len(x)
    sxx = (x * x).sum() - n * x.mean() ** 2
    sxy = (x * y).sum() - n * x.mean() * y.mean()
    slope = sxy / sxx
    return slope, y.mean() - slope * x.mean()


@pytest.mark.parametrize("seed", range(20))
def test_fit_axis_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    xy = rng.normal(scale=10.0, size=(n, 2))
    fit = fit_axis(xy)
    slope, intercept = ls_oracle(xy)
    assert not fit.vertical
    assert abs(fit.slope - slope) < 1e-9 * max(1.0, abs(slope))
    assert abs(fit.intercept - intercept) < 1e-9 * max(1.0, abs(intercept))


def test_fit_axis_exact_line_has_zero_rss():
    x = np.arange(5, dtype=np.float64)
    xy = np.stack([x, 2.0 * x - 3.0], axis=1)
    fit = fit_axis(xy)
    assert abs(fit.slope - 2.0) < 1e-12
    assert abs(fit.intercept + 3.0) < 1e-12
    assert fit.rss < 1e-20


def test_fit_axis_accepts_keypoints():
    kps = [KeyPoint(0.0, 1.0, 1.2, 1.0), KeyPoint(2.0, 5.0, 1.2, 0.5)]
    fit = fit_axis(kps)
    assert abs(fit.slope - 2.0) < 1e-12


def test_vertical_cloud_flagged():
    xy = np.array([[3.0, 0.0], [3.0, 5.0], [3.0, 9.0]])
    fit = fit_axis(xy)
    assert fit.vertical
    assert fit.slope is None
    assert fit.angle == math.pi / 2


def test_fit_axis_needs_two_points():
    with pytest.raises(ValueError):
        fit_axis(np.array([[1.0, 2.0]]))


def test_angle_range():
    for slope in (-50.0, -1.0, 0.0, 1.0, 50.0):
        x = np.arange(4, dtype=np.float64)
        fit = fit_axis(np.stack([x, slope * x], axis=1))
        assert -math.pi / 2 < fit.angle <= math.pi / 2


# ---------------------------------------------------------------------------
# spans and measurement
# ---------------------------------------------------------------------------


def test_collinear_cloud_spans():
    # horizontal cloud: the axis angle is exactly 0, so the across
    # projection reduces to the constant y and the span is exactly zero
    xy_h = np.array([[0.0, 2.0], [3.0, 2.0], [9.0, 2.0]])
    along, across = axis_spans(xy_h, fit_axis(xy_h))
    assert across == 0.0
    assert along == 9.0
    # sloped integer cloud: the normal equations stay exact (zero rss)
    # but trig projection leaves rounding noise in the across span
    x = np.arange(5, dtype=np.float64)
    xy = np.stack([x, 2.0 * x + 1.0], axis=1)
    fit = fit_axis(xy)
    assert fit.rss == 0.0
    _, across2 = axis_spans(xy, fit)
    assert across2 < 1e-12


def test_collinear_length_matches_extreme_point_distance():
    x = np.arange(6, dtype=np.float64)
    xy = np.stack([x, 3.0 * x - 2.0], axis=1)
    fit = fit_axis(xy)
    along, _ = axis_spans(xy, fit)
    euclid = math.hypot(xy[-1, 0] - xy[0, 0], xy[-1, 1] - xy[0, 1])
    assert abs(along - euclid) < 1e-9


def test_measure_size_known_rectangle():
    # axis-aligned cross: length 20 px, width 10 px at 0.5 m/px
    xy = np.array([[-10.0, 0.0], [10.0, 0.0], [0.0, -5.0], [0.0, 5.0]])
    fit = fit_axis(xy)
    est = measure_size(xy, fit, 0.5)
    assert abs(est.length_m - 10.0) < 1e-9
    assert abs(est.width_m - 5.0) < 1e-9
    assert abs(est.axis_angle_rad) < 1e-9


def test_measure_size_rotation_invariant():
    rng = np.random.default_rng(21)
    base = np.array([[-12.0, 0.0], [12.0, 0.0], [0.0, -4.0], [0.0, 4.0],
                     [6.0, 1.0], [-6.0, -1.0]])
    fit0 = fit_axis(base)
    ref = measure_size(base, fit0, 1.0)
    for theta in (0.1, 0.25, -0.3):
        c, s = math.cos(theta), math.sin(theta)
        rot = base @ np.array([[c, s], [-s, c]])
        est = measure_size(rot, fit_axis(rot), 1.0)
        assert abs(est.length_m - ref.length_m) / ref.length_m < 0.08
        assert abs(est.width_m - ref.width_m) / ref.width_m < 0.08


def test_measure_size_degenerate_raises():
    xy = np.array([[0.0, 2.0], [4.0, 2.0], [8.0, 2.0]])  # horizontal line
    fit = fit_axis(xy)
    with pytest.raises(DegenerateSizeError):
        measure_size(xy, fit, 1.0)


def test_measure_size_rejects_bad_resolution():
    xy = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        measure_size(xy, fit_axis(xy), 0.0)


def test_normalize_size_mapping_and_clamp():
    v = normalize_size(50.0, 0.1, 0.0, 100.0)
    assert abs(v[0] - 0.0) < 1e-12
    assert abs(v[1] + 0.998) < 1e-12
    lo = normalize_size(0.0001, 200.0, 0.0, 100.0)
    assert lo[0] >= -1.0 and lo[1] == 1.0
    with pytest.raises(ValueError):
        normalize_size(10.0, 10.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        normalize_size(-1.0, 10.0)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


def test_estimate_size_full_pipeline_on_cross():
    centers = [(16, 6), (16, 26), (8, 16), (24, 16)]
    img = blob_image(centers)
    est, kps, fit = estimate_size(img)
    assert len(kps) >= 4
    assert abs(est.length_m - 20.0) <= 2.0
    assert abs(est.width_m - 16.0) <= 2.0


def test_estimate_size_needs_two_keypoints():
    with pytest.raises(DegenerateSizeError):
        estimate_size(GrayImage(np.zeros((32, 32)), 1.0))
