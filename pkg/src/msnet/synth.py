"""Synthetic SAR-like aircraft slices and the dataset manifest format.

Targets are rendered as a dim cross silhouette (fuselage plus wing bar)
with bright Gaussian scatterers at the nose, tail, wingtips, and engine
stations, over a faint clutter floor. Unit-mean exponential speckle then
multiplies every pixel, as in single-look intensity imagery, and the
result is clamped to [0, 1]. Scatterer geometry matches the recorded
truth sizes, so the extraction pipeline can be scored against them.

The manifest is a CSV with header ``path,label,length_m,width_m``; size
fields may be empty when unknown. Paths are stored relative to the
manifest's directory.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .images import GrayImage, read_image, write_image
from .scatter import SizeEstimate, normalize_size

MANIFEST_HEADER = ("path", "label", "length_m", "width_m")

# scatterer footprint in pixels: narrow enough that the response peak
# stays within a pixel of the station, wide enough to survive speckle
_BLOB_SIGMA = 0.7


@dataclass(frozen=True)
class ClassSpec:
    """Geometry and reflectivity template for one synthetic aircraft class."""

    name: str
    length_m: float
    wingspan_m: float
    n_engines: int = 2
    brightness: float = 8.0
    orientation_range: tuple = (-0.35, 0.35)

    def __post_init__(self):
        if not self.name or any(c in self.name for c in ",\n\t"):
            raise ValueError(f"invalid class name {self.name!r}")
        if self.length_m <= 0 or self.wingspan_m <= 0:
            raise ValueError(f"{self.name}: sizes must be positive")
        if self.n_engines not in (0, 2, 4):
            raise ValueError(f"{self.name}: engine count must be 0, 2 or 4")
        if self.brightness <= 0:
            raise ValueError(f"{self.name}: brightness must be positive")
        lo, hi = self.orientation_range
        if lo > hi:
            raise ValueError(f"{self.name}: orientation range reversed")


def default_class_specs():
    """Four desk-scale classes with a spread of sizes and engine layouts."""
    return (
        ClassSpec("smalljet", length_m=26.0, wingspan_m=20.0, n_engines=2),
        ClassSpec("midjet", length_m=40.0, wingspan_m=30.0, n_engines=2),
        ClassSpec("heavy", length_m=60.0, wingspan_m=44.0, n_engines=4),
        ClassSpec("feeder", length_m=30.0, wingspan_m=24.0, n_engines=0),
    )


def _stamp_blob(canvas: np.ndarray, cy: float, cx: float, amplitude: float, sigma: float):
    """Add a truncated Gaussian bump centered at a sub-pixel position."""
    h, w = canvas.shape
    reach = int(math.ceil(3 * sigma))
    y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 1)
    x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    canvas[y0:y1, x0:x1] += amplitude * np.exp(-r2 / (2.0 * sigma * sigma))


def _stamp_bar(canvas: np.ndarray, p0, p1, intensity: float, half_width: float):
    """Add a soft-edged line segment from p0 to p1 (y, x coordinates)."""
    h, w = canvas.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    d = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    seg_len2 = float(d @ d)
    if seg_len2 == 0.0:
        return
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / seg_len2
    t = np.clip(t, 0.0, 1.0)
    dist = np.sqrt((yy - (p0[0] + t * d[0])) ** 2 + (xx - (p0[1] + t * d[1])) ** 2)
    canvas += intensity * np.clip(1.0 - dist / (half_width + 1.0), 0.0, 1.0)


def gen_slice(
    spec: ClassSpec,
    rng: np.random.Generator,
    image_size: int = 64,
    resolution: float = 1.0,
    orientation: float | None = None,
    speckle: bool = True,
    clutter: float = 0.03,
):
    """Render one slice; returns (GrayImage, SizeEstimate ground truth).

    The scatterer layout spans exactly length_m along the fuselage axis and
    wingspan_m across it, so the truth estimate is the rendered geometry.
    """
    if image_size < 16:
        raise ValueError(f"image_size too small: {image_size}")
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    half_l = spec.length_m / resolution / 2.0
    half_s = spec.wingspan_m / resolution / 2.0
    if max(half_l, half_s) > (image_size - 2) / 2.0:
        raise ValueError(
            f"{spec.name}: target ({spec.length_m}x{spec.wingspan_m} m) does not fit "
            f"a {image_size}px slice at {resolution} m/px"
        )
    if orientation is None:
        orientation = float(rng.uniform(*spec.orientation_range))

    c = (image_size - 1) / 2.0
    u = np.array([math.sin(orientation), math.cos(orientation)])  # (dy, dx) fuselage
    v = np.array([math.cos(orientation), -math.sin(orientation)])  # (dy, dx) wings

    canvas = np.full((image_size, image_size), float(clutter))
    # dim structural silhouette; kept well under half the detector's
    # intensity gate so speckle-brightened hull pixels rarely clear it
    _stamp_bar(canvas, (c - half_l * u[0], c - half_l * u[1]),
               (c + half_l * u[0], c + half_l * u[1]), 0.11, 1.0)
    _stamp_bar(canvas, (c - half_s * v[0], c - half_s * v[1]),
               (c + half_s * v[0], c + half_s * v[1]), 0.09, 0.8)

    # dominant point scatterers; the nose/tail and wingtip pairs define the spans
    stations = [(-half_l, 0.0), (half_l, 0.0), (0.0, -half_s), (0.0, half_s)]
    if spec.n_engines >= 2:
        stations += [(0.0, -0.25 * half_s), (0.0, 0.25 * half_s)]
    if spec.n_engines == 4:
        stations += [(0.0, -0.45 * half_s), (0.0, 0.45 * half_s)]
    for along, across in stations:
        cy = c + along * u[0] + across * v[0]
        cx = c + along * u[1] + across * v[1]
        _stamp_blob(canvas, cy, cx, spec.brightness, _BLOB_SIGMA)

    if speckle:
        canvas = canvas * rng.exponential(1.0, canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)

    angle = math.atan2(u[0], u[1])  # image-frame axis angle, x right / y down
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    truth = SizeEstimate(spec.length_m, spec.wingspan_m, angle)
    return GrayImage(canvas, resolution), truth


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str
    length_m: float | None = None
    width_m: float | None = None


@dataclass
class DatasetManifest:
    root: Path
    records: list

    @property
    def classes(self):
        return sorted({r.label for r in self.records})

    def __len__(self):
        return len(self.records)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = [",".join(MANIFEST_HEADER)]
    for r in manifest.records:
        length = "" if r.length_m is None else f"{r.length_m:.6g}"
        width = "" if r.width_m is None else f"{r.width_m:.6g}"
        for fieldname, value in (("path", r.path), ("label", r.label)):
            if "," in value or "\n" in value:
                raise DataError(f"manifest {fieldname} may not contain commas: {value!r}")
        lines.append(f"{r.path},{r.label},{length},{width}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_manifest(path, allowed_labels=None) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise DataError(f"{path}: bad manifest header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            rel, label, length_s, width_s = (f.strip() for f in row)
            if not rel or not label:
                raise DataError(f"{path}:{lineno}: path and label are required")
            if allowed_labels is not None and label not in allowed_labels:
                raise DataError(f"{path}:{lineno}: unknown class {label!r}")
            if (length_s == "") != (width_s == ""):
                raise DataError(f"{path}:{lineno}: length and width must both be set or both empty")
            try:
                length = float(length_s) if length_s else None
                width = float(width_s) if width_s else None
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed size fields {length_s!r},{width_s!r}")
            if (length is not None and length <= 0) or (width is not None and width <= 0):
                raise DataError(f"{path}:{lineno}: sizes must be positive")
            records.append(ManifestRecord(rel, label, length, width))
    return DatasetManifest(path.parent, records)


def gen_dataset(
    specs,
    counts,
    out_dir,
    long_tail: bool = False,
    seed: int = 0,
    image_size: int = 64,
    resolution: float = 1.0,
    image_format: str = "pgm",
    name_prefix: str = "img",
) -> DatasetManifest:
    """Render a dataset under ``out_dir`` and write its manifest.csv.

    counts: per-class sample counts aligned with specs. With long_tail the
    same total is redistributed geometrically so the largest class has at
    least ten times the smallest.
    """
    specs = list(specs)
    counts = [int(n) for n in counts]
    if len(specs) != len(counts):
        raise ValueError(f"{len(specs)} specs but {len(counts)} counts")
    if any(n < 1 for n in counts):
        raise ValueError("every class needs at least 1 sample")
    if image_format not in ("pgm", "png"):
        raise ValueError(f"unsupported image format {image_format!r}")
    if long_tail and len(specs) > 1:
        counts = _long_tail_counts(sum(counts), len(specs))

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    index = 0
    for spec, n in zip(specs, counts):
        for _ in range(n):
            rng = np.random.default_rng([seed, 101, index])
            image, truth = gen_slice(spec, rng, image_size, resolution)
            rel = f"images/{name_prefix}_{index:05d}.{image_format}"
            write_image(out_dir / rel, image.pixels)
            records.append(ManifestRecord(rel, spec.name, truth.length_m, truth.width_m))
            index += 1
    manifest = DatasetManifest(out_dir, records)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def _long_tail_counts(total: int, n_classes: int):
    """Split ``total`` geometrically with a >= 10x head-to-tail ratio."""
    ratio = 12.0 ** (1.0 / (n_classes - 1))
    weights = np.array([ratio ** (-i) for i in range(n_classes)])
    weights /= weights.sum()
    counts = [max(1, int(round(total * w))) for w in weights[1:]]
    counts.insert(0, total - sum(counts))
    if counts[0] < counts[-1] * 10:
        # steal from the second class to restore the head-to-tail ratio
        delta = counts[-1] * 10 - counts[0]
        counts[1] -= delta
        counts[0] += delta
    if any(c < 1 for c in counts) or counts != sorted(counts, reverse=True):
        raise ValueError(f"total {total} too small for a long-tailed {n_classes}-class split")
    return counts


# ---------------------------------------------------------------------------
# in-memory dataset view
# ---------------------------------------------------------------------------


@dataclass
class SampleSet:
    """Loaded dataset: images plus normalized sizes and integer labels."""

    images: np.ndarray      # (N, H, W) float64 in [0, 1]
    sizes_norm: np.ndarray  # (N, 2) in [-1, 1]
    sizes_m: np.ndarray     # (N, 2) raw meters
    labels: np.ndarray      # (N,) int64 indices into classes
    classes: list
    paths: list
    resolution: float = 1.0

    def __len__(self):
        return self.images.shape[0]


def load_dataset(manifest: DatasetManifest, size_range=(0.0, 100.0),
                 resolution: float = 1.0) -> SampleSet:
    """Materialize all images and sizes named by a manifest.

    Every record must carry sizes; run the size-extraction pass first for
    imagery without truth sizes.
    """
    if not manifest.records:
        raise DataError("manifest has no records")
    classes = manifest.classes
    class_index = {c: i for i, c in enumerate(classes)}
    images, sizes_n, sizes_m, labels, paths = [], [], [], [], []
    shape = None
    for r in manifest.records:
        if r.length_m is None or r.width_m is None:
            raise DataError(f"{r.path}: record has no sizes; extract sizes before loading")
        arr = read_image(manifest.root / r.path)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(f"{r.path}: image shape {arr.shape} differs from {shape}")
        images.append(arr)
        sizes_n.append(normalize_size(r.length_m, r.width_m, size_range[0], size_range[1]))
        sizes_m.append((r.length_m, r.width_m))
        labels.append(class_index[r.label])
        paths.append(r.path)
    return SampleSet(
        images=np.stack(images),
        sizes_norm=np.stack(sizes_n),
        sizes_m=np.asarray(sizes_m, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        classes=classes,
        paths=paths,
        resolution=resolution,
    )
