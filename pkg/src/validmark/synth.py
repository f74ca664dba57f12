"""Deterministic synthetic face-like dataset with exact landmark ground truth.

Each sample poses the rigid 3D face template inside a subset-specific yaw
range (small poses -> "common", large poses -> "challenging"), projects it
with a weak-perspective camera, and renders Gaussian landmark blobs plus
contour edges over a textured background. Stored landmarks are the exact
projections (optionally jittered), so generated data closes the loop with
the pose solver.

On-disk layout: <dir>/<subset>/<id>.pgm + <id>.pts and a manifest CSV
(id,subset,yaw_deg,pitch_deg,roll_deg). Face boxes are recomputed from the
landmarks with a fixed padding rule so the loader needs no extra file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (DataError, Dataset, GrayImage, LandmarkSet, Sample, derive_rng,
                   load_pgm, load_pts, save_pgm, save_pts)
from .pose import RigidTransform, Template3D, make_face_template, rotation_from_euler

FACE_BOX_PAD = 0.35     # fraction of the landmark bounding box, each side
_TAG_SYNTH = 303

SUBSETS = ("common", "challenging")


@dataclass(frozen=True)
class RenderStyle:
    bg_base_range: tuple[float, float] = (70.0, 130.0)
    bg_slope_max: float = 35.0          # linear gradient amplitude
    bg_blob_amp: float = 18.0           # low-frequency background bumps
    bg_noise_amp: float = 4.0           # fine per-pixel texture
    face_brightness: tuple[float, float] = (25.0, 45.0)
    blob_amp_range: tuple[float, float] = (55.0, 90.0)
    blob_sigma_frac: float = 0.035      # of the projected face width
    edge_amp: float = 35.0
    edge_sigma_px: float = 0.9


@dataclass(frozen=True)
class SynthConfig:
    train_common: int = 340
    train_challenging: int = 60
    test_common: int = 80
    test_challenging: int = 20
    landmark_count: int = 5
    image_size: int = 96
    common_yaw_max_deg: float = 20.0
    challenging_yaw_min_deg: float = 30.0
    challenging_yaw_max_deg: float = 60.0
    pitch_max_deg: float = 10.0
    roll_max_deg: float = 8.0
    jitter_sigma_px: float = 0.0
    face_frac_range: tuple[float, float] = (0.50, 0.68)
    center_offset_frac: float = 0.05
    focal_px: float = 400.0
    style: RenderStyle = field(default_factory=RenderStyle)
    seed: int = 42

    def __post_init__(self):
        if self.image_size < 16:
            raise DataError("image_size must be >= 16")
        if self.common_yaw_max_deg >= self.challenging_yaw_min_deg:
            raise DataError("common and challenging yaw ranges must be disjoint")
        if self.challenging_yaw_min_deg > self.challenging_yaw_max_deg:
            raise DataError("challenging yaw range is inverted")
        if self.landmark_count < 5:
            raise DataError("landmark_count must be >= 5")


@dataclass(frozen=True)
class GenPose:
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    transform: RigidTransform
    focal_px: float


@dataclass
class GeneratedData:
    train: Dataset
    test: Dataset
    poses: dict[str, GenPose]
    template: Template3D


def _sample_pose_angles(cfg: SynthConfig, subset: str, rng) -> tuple[float, float, float]:
    if subset == "common":
        yaw = rng.uniform(-cfg.common_yaw_max_deg, cfg.common_yaw_max_deg)
    else:
        magnitude = rng.uniform(cfg.challenging_yaw_min_deg, cfg.challenging_yaw_max_deg)
        yaw = magnitude if rng.uniform() < 0.5 else -magnitude
    pitch = rng.uniform(-cfg.pitch_max_deg, cfg.pitch_max_deg)
    roll = rng.uniform(-cfg.roll_max_deg, cfg.roll_max_deg)
    return yaw, pitch, roll


def _place_face(cfg: SynthConfig, template: Template3D, r: np.ndarray, rng):
    """Choose (t_xy, t_z) so the face lands near the image center at the
    requested apparent size."""
    width_units = float(template.points[:, 0].max() - template.points[:, 0].min())
    frac = rng.uniform(*cfg.face_frac_range)
    scale = frac * cfg.image_size / width_units       # px per template unit
    tz = cfg.focal_px / scale
    half = cfg.image_size / 2.0
    offset = cfg.center_offset_frac * cfg.image_size
    center = np.array([half + rng.uniform(-offset, offset),
                       half + rng.uniform(-offset, offset)])
    centroid_xy = (template.points @ r.T).mean(axis=0)[:2]
    t_xy = center * tz / cfg.focal_px - centroid_xy
    return np.array([t_xy[0], t_xy[1], tz])


def project_weak_perspective(points3d: np.ndarray, transform: RigidTransform,
                             focal: float) -> np.ndarray:
    cam = points3d @ transform.rotation.T + transform.translation
    return focal * cam[:, :2] / transform.translation[2]


def _add_gaussian_blob(img: np.ndarray, cx: float, cy: float, sigma: float,
                       amp: float) -> None:
    h, w = img.shape
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x0, x1 = max(0, int(cx) - radius), min(w, int(cx) + radius + 1)
    y0, y1 = max(0, int(cy) - radius), min(h, int(cy) + radius + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    img[y0:y1, x0:x1] += amp * np.exp(
        -((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))


def _add_segment(img: np.ndarray, p0: np.ndarray, p1: np.ndarray, sigma: float,
                 amp: float) -> None:
    """Soft anti-aliased line: amp * exp(-d^2 / 2 sigma^2) around the segment."""
    h, w = img.shape
    margin = int(math.ceil(3.0 * sigma)) + 1
    x0 = max(0, int(min(p0[0], p1[0])) - margin)
    x1 = min(w, int(max(p0[0], p1[0])) + margin + 1)
    y0 = max(0, int(min(p0[1], p1[1])) - margin)
    y1 = min(h, int(max(p0[1], p1[1])) + margin + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d = p1 - p0
    length2 = float(d @ d)
    if length2 < 1e-12:
        t = np.zeros_like(xs, dtype=np.float64)
    else:
        t = np.clip(((xs - p0[0]) * d[0] + (ys - p0[1]) * d[1]) / length2, 0.0, 1.0)
    dist2 = (xs - (p0[0] + t * d[0])) ** 2 + (ys -(p0[1] + t * d[1])) ** 2
    img[y0:y1, x0:x1] -= amp * np.exp(-dist2 / (2.0 * sigma * sigma))


def _render(cfg: SynthConfig, pts2d: np.ndarray, template: Template3D,
            rng) -> np.ndarray:
    size = cfg.image_size
    style = cfg.style
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size

    img = np.full((size, size), rng.uniform(*style.bg_base_range))
    img += rng.uniform(-style.bg_slope_max, style.bg_slope_max) * xs
    img += rng.uniform(-style.bg_slope_max, style.bg_slope_max) * ys
    for _ in range(3):
        bx, by = rng.uniform(0, size, size=2)
        bs = rng.uniform(size * 0.10, size * 0.35)
        _add_gaussian_blob(img, bx, by, bs, rng.uniform(-style.bg_blob_amp,
                                                        style.bg_blob_amp))
    img += rng.uniform(-style.bg_noise_amp, style.bg_noise_amp, size=(size, size))

    # face disc: soft bright ellipse around the projected landmark cloud
    center = pts2d.mean(axis=0)
    spread = pts2d.std(axis=0) + 1e-6
    ax = max(float(spread[0]) * 2.2, 2.0)
    ay = max(float(spread[1]) * 2.2, 2.0)
    ygrid, xgrid = np.mgrid[0:size, 0:size].astype(np.float64)
    q = ((xgrid - center[0]) / ax) ** 2 + ((ygrid - center[1]) / ay) ** 2
    face_gain = rng.uniform(*style.face_brightness)
    img += face_gain / (1.0 + np.exp((q - 1.0) * 6.0))

    face_width = float(pts2d[:, 0].max() - pts2d[:, 0].min())
    sigma = max(style.blob_sigma_frac * max(face_width, 4.0), 0.8)
    for i, (px, py) in enumerate(pts2d):
        # alternating polarity per landmark makes appearances distinguishable
        amp = rng.uniform(*style.blob_amp_range) * (1.0 if i % 2 == 0 else -1.0)
        _add_gaussian_blob(img, px, py, sigma, amp)

    for indices, closed in template.contours:
        chain = list(indices) + ([indices[0]] if closed else [])
        for a, b in zip(chain[:-1], chain[1:]):
            _add_segment(img, pts2d[a], pts2d[b], style.edge_sigma_px, style.edge_amp)

    return np.rint(np.clip(img, 0.0, 255.0))


def face_box_from_landmarks(points: np.ndarray):
    """Fixed padding rule shared by the generator and the directory loader.

    The box may overhang the image; Sample clamps it to the pixel grid.
    """
    x0, y0 = points.min(axis=0)
    x1, y1 = points.max(axis=0)
    pad_x = (x1 - x0) * FACE_BOX_PAD
    pad_y = (y1 - y0) * FACE_BOX_PAD
    return (x0 - pad_x, y0 - pad_y, (x1 - x0) + 2 * pad_x, (y1 - y0) + 2 * pad_y)


def _make_sample(cfg: SynthConfig, template: Template3D, split: str, subset: str,
                 index: int) -> tuple[Sample, GenPose]:
    rng = derive_rng(cfg.seed, _TAG_SYNTH, split, subset, index)
    yaw, pitch, roll = _sample_pose_angles(cfg, subset, rng)
    r = rotation_from_euler(math.radians(yaw), math.radians(pitch), math.radians(roll))
    t = _place_face(cfg, template, r, rng)
    transform = RigidTransform(r, t)
    pts2d = project_weak_perspective(template.points, transform, cfg.focal_px)
    image = _render(cfg, pts2d, template, rng)

    annotation = pts2d
    if cfg.jitter_sigma_px > 0:
        annotation = pts2d + rng.normal(0.0, cfg.jitter_sigma_px, size=pts2d.shape)

    sample_id = f"{split}-{subset}-{index:05d}"
    sample = Sample(
        image=GrayImage(image),
        annotation=LandmarkSet(annotation),
        face_box=face_box_from_landmarks(annotation),
        id=sample_id,
        subset=subset,
    )
    return sample, GenPose(yaw, pitch, roll, transform, cfg.focal_px)


def generate(cfg: SynthConfig) -> GeneratedData:
    """Build (train, test) datasets plus the exact generating poses."""
    template = make_face_template(cfg.landmark_count)
    poses: dict[str, GenPose] = {}
    datasets = {}
    plan = {
        "tr": (("common", cfg.train_common), ("challenging", cfg.train_challenging)),
        "te": (("common", cfg.test_common), ("challenging", cfg.test_challenging)),
    }
    for split, parts in plan.items():
        samples = []
        for subset, count in parts:
            for i in range(count):
                sample, pose = _make_sample(cfg, template, split, subset, i)
                samples.append(sample)
                poses[sample.id] = pose
        datasets[split] = Dataset(samples)
    return GeneratedData(datasets["tr"], datasets["te"], poses, template)


# --- on-disk layout ------------------------------------------------------------

def save_dataset(dataset: Dataset, root, poses: dict[str, GenPose] | None = None) -> None:
    root = Path(root)
    for sample in dataset:
        sub = root / sample.subset
        sub.mkdir(parents=True, exist_ok=True)
        save_pgm(sample.image, sub / f"{sample.id}.pgm")
        save_pts(sample.annotation, sub / f"{sample.id}.pts")
    with open(root / "manifest.csv", "w", encoding="utf-8") as fh:
        fh.write("id,subset,yaw_deg,pitch_deg,roll_deg\n")
        for sample in dataset:
            if poses and sample.id in poses:
                p = poses[sample.id]
                fh.write(f"{sample.id},{sample.subset},{p.yaw_deg:.9g},"
                         f"{p.pitch_deg:.9g},{p.roll_deg:.9g}\n")
            else:
                fh.write(f"{sample.id},{sample.subset},,,\n")


def load_dataset(root) -> Dataset:
    """Read a directory laid out as <root>/<subset>/<id>.pgm + <id>.pts."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a dataset directory")
    samples = []
    for subset in SUBSETS:
        sub = root / subset
        if not sub.is_dir():
            continue
        for pts_path in sorted(sub.glob("*.pts")):
            pgm_path = pts_path.with_suffix(".pgm")
            if not pgm_path.exists():
                raise DataError(f"{pgm_path}: missing image for {pts_path.name}")
            image = load_pgm(pgm_path)
            annotation = load_pts(pts_path)
            samples.append(Sample(
                image=image,
                annotation=annotation,
                face_box=face_box_from_landmarks(annotation.points),
                id=pts_path.stem,
                subset=subset,
            ))
    if not samples:
        raise DataError(f"{root}: no samples found (expected <subset>/<id>.pts)")
    return Dataset(samples)
