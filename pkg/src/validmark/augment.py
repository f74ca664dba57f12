"""Online per-batch augmentation with landmark-consistent geometry.

Pipeline order: geometric (face-box shift + per-axis scale, realized as a
single crop-resample) -> additive noise -> contrast -> Gaussian blur
(probabilistic) -> occlusion (probabilistic). Contrast runs before
occlusion so occluders keep their own intensity; blur runs before
occlusion so occlusion edges stay sharp.

All randomness comes from the generator passed in; the draw order is fixed,
so (sample, config, seed) fully determines the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, DegenerateGeometryError, GrayImage, LandmarkSet, Sample

OCCLUDE_MODES = ("dark", "bright", "random")
OCCLUDE_VALUE_RANGES = {"dark": (0, 30), "bright": (200, 255), "random": (0, 255)}


@dataclass(frozen=True)
class AugmentConfig:
    out_size: int = 32
    noise_max_frac: float = 0.30          # additive noise amplitude, fraction of 255
    shift_max_frac: float = 0.40          # of face-box size, per axis
    scale_range: tuple[float, float] = (0.8, 1.2)   # per axis, independent
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (1.0, 2.0)
    occlude_prob: float = 0.5
    occlude_max_area_frac: float = 0.5
    contrast_range: tuple[float, float] = (-80.0, 80.0)

    def __post_init__(self):
        for name in ("blur_prob", "occlude_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DataError(f"{name} must be in [0, 1], got {p}")
        if not 0.0 <= self.noise_max_frac <= 1.0:
            raise DataError("noise_max_frac must be in [0, 1]")
        if not 0.0 <= self.occlude_max_area_frac <= 1.0:
            raise DataError("occlude_max_area_frac must be in [0, 1]")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise DataError("scale_range must satisfy 0 < lo <= hi")
        if self.blur_sigma[0] > self.blur_sigma[1] or self.blur_sigma[0] <= 0:
            raise DataError("blur_sigma must satisfy 0 < lo <= hi")
        if self.out_size < 1:
            raise DataError("out_size must be >= 1")


def identity_config(out_size: int) -> AugmentConfig:
    """Config whose pipeline is a pure face-box crop to out_size."""
    return AugmentConfig(
        out_size=out_size, noise_max_frac=0.0, shift_max_frac=0.0,
        scale_range=(1.0, 1.0), blur_prob=0.0, occlude_prob=0.0,
        contrast_range=(0.0, 0.0),
    )


@dataclass(frozen=True)
class CropTransform:
    """Affine map realizing shift+scale as one crop-resample of the face box.

    Output pixel (ox, oy) samples the source at
        src_x = center_x + (ox - (out-1)/2) * crop_w/out
    and a source point maps to output coordinates by the inverse. Pixel
    centers sit on integer coordinates in both frames.
    """

    center_x: float
    center_y: float
    crop_w: float
    crop_h: float
    out_size: int

    def source_grid(self) -> tuple[np.ndarray, np.ndarray]:
        out = self.out_size
        half = (out - 1) / 2.0
        offs = np.arange(out, dtype=np.float64) - half
        xs = self.center_x + offs * (self.crop_w / out)
        ys = self.center_y + offs * (self.crop_h / out)
        return xs, ys

    def map_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        half = (self.out_size - 1) / 2.0
        out = np.empty_like(pts)
        out[:, 0] = (pts[:, 0] - self.center_x) * (self.out_size / self.crop_w) + half
        out[:, 1] = (pts[:, 1] - self.center_y) * (self.out_size / self.crop_h) + half
        return out

    def resample(self, data: np.ndarray) -> np.ndarray:
        """Bilinear resample with clamp-to-edge; returns (out, out) float64."""
        xs, ys = self.source_grid()
        return _bilinear(data, xs[None, :].repeat(self.out_size, 0),
                         ys[:, None].repeat(self.out_size, 1))


def _bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = data.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    tx = xs - x0
    ty = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    top = (1.0 - tx) * data[y0c, x0c] + tx * data[y0c, x1c]
    bot = (1.0 - tx) * data[y1c, x0c] + tx * data[y1c, x1c]
    return (1.0 - ty) * top + ty * bot


def sample_geometry(face_box, cfg: AugmentConfig, rng: np.random.Generator,
                    max_retries: int = 5) -> CropTransform:
    """Draw shift/scale parameters and build the crop transform.

    Draw order: dx, dy ~ U(-1, 1) scaled by shift_max_frac * box size;
    sx, sy ~ U(scale_range). Scale > 1 zooms in (smaller crop window).
    """
    bx, by, bw, bh = (float(v) for v in face_box)
    cx = bx + (bw - 1.0) / 2.0
    cy = by + (bh - 1.0) / 2.0
    for _ in range(max_retries):
        dx = rng.uniform(-1.0, 1.0) * cfg.shift_max_frac * bw
        dy = rng.uniform(-1.0, 1.0) * cfg.shift_max_frac * bh
        sx = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
        sy = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
        crop_w = bw / sx
        crop_h = bh / sy
        if crop_w >= 1.0 and crop_h >= 1.0 and np.isfinite(crop_w) and np.isfinite(crop_h):
            return CropTransform(cx + dx, cy + dy, crop_w, crop_h, cfg.out_size)
    raise DegenerateGeometryError(
        f"face box {face_box} degenerates under shift/scale after {max_retries} retries"
    )


def add_noise(image: GrayImage, max_frac: float, rng: np.random.Generator) -> GrayImage:
    """Additive uniform noise in [-a, a], a ~ U(0, max_frac*255), rounded and clamped."""
    if not 0.0 <= max_frac <= 1.0:
        raise DataError("max_frac must be in [0, 1]")
    if max_frac == 0.0:
        return image
    amplitude = rng.uniform(0.0, max_frac * 255.0)
    noise = rng.uniform(-amplitude, amplitude, size=image.data.shape)
    return GrayImage(np.clip(np.rint(image.data + noise), 0.0, 255.0))


def adjust_contrast(image: GrayImage, offset: float) -> GrayImage:
    """Shift every pixel by one offset, clamped to [0, 255]."""
    if offset == 0.0:
        return image
    return GrayImage(np.clip(image.data + offset, 0.0, 255.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise DataError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur, radius ceil(3*sigma), clamp-to-edge borders."""
    k = gaussian_kernel(sigma)
    radius = len(k) // 2
    padded = np.pad(image.data, ((0, 0), (radius, radius)), mode="edge")
    rows = np.zeros_like(image.data)
    for i, w in enumerate(k):
        rows += w * padded[:, i:i + image.width]
    padded = np.pad(rows, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(rows)
    for i, w in enumerate(k):
        out += w * padded[i:i + image.height, :]
    return GrayImage(np.clip(out, 0.0, 255.0))


def occlude(image: GrayImage, cfg: AugmentConfig, rng: np.random.Generator) -> GrayImage:
    """Fill one axis-aligned rectangle (area <= occlude_max_area_frac of the
    image) with a random color mode: constant dark, constant bright, or
    per-pixel random."""
    h, w = image.data.shape
    max_area = cfg.occlude_max_area_frac * w * h
    if max_area < 1.0:
        return image
    rw = int(rng.integers(1, w + 1))
    max_rh = min(h, int(max_area / rw))
    if max_rh < 1:
        rw = 1
        max_rh = min(h, int(max_area))
    rh = int(rng.integers(1, max_rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    mode = OCCLUDE_MODES[int(rng.integers(0, len(OCCLUDE_MODES)))]
    lo, hi = OCCLUDE_VALUE_RANGES[mode]
    data = image.data.copy()
    if mode == "random":
        data[y0:y0 + rh, x0:x0 + rw] = rng.integers(lo, hi + 1, size=(rh, rw))
    else:
        data[y0:y0 + rh, x0:x0 + rw] = float(rng.integers(lo, hi + 1))
    return GrayImage(data)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Full pipeline; returns a new sample in the out_size frame.

    Landmarks go through the same geometric map as the pixels; photometric
    steps leave them untouched. The returned face box is the whole output
    frame.
    """
    geo = sample_geometry(sample.face_box, cfg, rng)
    img = GrayImage(geo.resample(sample.image.data))
    pts = geo.map_points(sample.annotation.points)

    img = add_noise(img, cfg.noise_max_frac, rng)

    lo, hi = cfg.contrast_range
    offset = rng.uniform(lo, hi) if (lo, hi) != (0.0, 0.0) else 0.0
    img = adjust_contrast(img, offset)

    if rng.uniform() < cfg.blur_prob:
        sigma = rng.uniform(cfg.blur_sigma[0], cfg.blur_sigma[1])
        img = gaussian_blur(img, sigma)

    if rng.uniform() < cfg.occlude_prob:
        img = occlude(img, cfg, rng)

    return Sample(
        image=img,
        annotation=LandmarkSet(pts),
        face_box=(0.0, 0.0, float(cfg.out_size), float(cfg.out_size)),
        id=sample.id,
        last_loss=sample.last_loss,
        subset=sample.subset,
    )


def eval_crop(sample: Sample, out_size: int) -> tuple[GrayImage, LandmarkSet]:
    """Deterministic centered crop of the face box (no shift, unit scale)."""
    bx, by, bw, bh = sample.face_box
    geo = CropTransform(bx + (bw - 1.0) / 2.0, by + (bh - 1.0) / 2.0, bw, bh, out_size)
    return GrayImage(geo.resample(sample.image.data)), LandmarkSet(
        geo.map_points(sample.annotation.points)
    )
