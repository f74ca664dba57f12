import numpy as np
import pytest

from validmark.augment import (AugmentConfig, CropTransform, add_noise,
                               adjust_contrast, augment, eval_crop, gaussian_blur,
                               gaussian_kernel, identity_config, occlude,
                               sample_geometry)
from validmark.core import (DataError, DegenerateGeometryError, GrayImage,
                            LandmarkSet, Sample, derive_rng)


def make_sample(size=32, seed=0, box=None):
    rng = np.random.default_rng(seed)
    img = GrayImage(rng.integers(0, 256, size=(size, size)).astype(np.float64))
    pts = rng.uniform(4, size - 4, size=(5, 2))
    return Sample(img, LandmarkSet(pts), box or (0, 0, size, size), f"s{seed}")


def test_identity_pipeline_is_exact():
    sample = make_sample(size=24, seed=1)
    cfg = identity_config(out_size=24)
    out = augment(sample, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(out.image.data, sample.image.data)
    np.testing.assert_allclose(out.annotation.points, sample.annotation.points,
                               atol=1e-9)


def test_pure_shift_moves_landmarks_by_crop_offset():
    sample = make_sample(size=40, seed=2, box=(4.0, 6.0, 24.0, 20.0))
    bx, by, bw, bh = sample.face_box
    out_size = 24
    shift = (0.25 * bw, 0.0)
    geo = CropTransform(bx + (bw - 1) / 2 + shift[0], by + (bh - 1) / 2 + shift[1],
                        bw, bh, out_size)
    mapped = geo.map_points(sample.annotation.points)
    # closed-form: x' = (x - x_offset) * out/bw with a constant offset
    kx = out_size / bw
    expected_x = (sample.annotation.points[:, 0] - (bx + (bw - 1) / 2 + shift[0])) * kx \
        + (out_size - 1) / 2
    np.testing.assert_allclose(mapped[:, 0], expected_x, atol=1e-9)
    deltas = mapped[:, 0] - sample.annotation.points[:, 0] * kx
    np.testing.assert_allclose(deltas, deltas[0], atol=1e-9)


def test_geometry_landmark_consistency_random():
    rng = np.random.default_rng(3)
    sample = make_sample(size=48, seed=3, box=(6, 8, 30, 28))
    cfg = AugmentConfig(out_size=20)
    for _ in range(50):
        geo = sample_geometry(sample.face_box, cfg, rng)
        pts = rng.uniform(0, 48, size=(7, 2))
        mapped = geo.map_points(pts)
        manual = np.empty_like(pts)
        manual[:, 0] = (pts[:, 0] - geo.center_x) * geo.out_size / geo.crop_w \
            + (geo.out_size - 1) / 2
        manual[:, 1] = (pts[:, 1] - geo.center_y) * geo.out_size / geo.crop_h \
            + (geo.out_size - 1) / 2
        np.testing.assert_allclose(mapped, manual, atol=1e-9)


def test_add_noise_bounds_on_constant_image():
    img = GrayImage(np.full((64, 64), 128.0))
    out = add_noise(img, 0.3, np.random.default_rng(5))
    assert out.data.min() >= 51.0
    assert out.data.max() <= 205.0
    assert np.array_equal(out.data, np.rint(out.data))


def test_add_noise_zero_is_identity():
    img = GrayImage(np.full((8, 8), 77.0))
    out = add_noise(img, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, img.data)


def test_add_noise_symmetric_on_interior():
    # pixels far from the clamp boundaries keep a ~zero-mean perturbation
    img = GrayImage(np.full((200, 200), 128.0))
    deltas = []
    for seed in range(20):
        out = add_noise(img, 0.2, np.random.default_rng(seed))
        deltas.append(float((out.data - img.data).mean()))
    assert abs(np.mean(deltas)) < 1.0


def test_adjust_contrast():
    img = GrayImage(np.array([[10.0, 250.0]]))
    np.testing.assert_array_equal(adjust_contrast(img, 0.0).data, img.data)
    out = adjust_contrast(img, 20.0)
    np.testing.assert_allclose(out.data, [[30.0, 255.0]])
    out = adjust_contrast(img, -80.0)
    np.testing.assert_allclose(out.data, [[0.0, 170.0]])


def test_gaussian_kernel_normalized():
    for sigma in (0.5, 1.0, 1.7, 2.0):
        k = gaussian_kernel(sigma)
        assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
        assert abs(k.sum() - 1.0) < 1e-9


def test_blur_constant_image_unchanged():
    img = GrayImage(np.full((20, 20), 93.0))
    out = gaussian_blur(img, 1.5)
    np.testing.assert_allclose(out.data, img.data, atol=1e-9)


def test_blur_preserves_interior_mean():
    # an image constant within 2r of the border conserves the interior mean
    # exactly (every kernel window overlapping the interior sums to one)
    rng = np.random.default_rng(9)
    sigma = 1.5
    r = int(np.ceil(3 * sigma))
    size = 48
    data = np.full((size, size), 120.0)
    inner = slice(2 * r, size - 2 * r)
    data[inner, inner] = rng.uniform(0, 255, size=(size - 4 * r, size - 4 * r))
    out = gaussian_blur(GrayImage(data), sigma)
    interior = slice(r, size - r)
    before = data[interior, interior].mean()
    after = out.data[interior, interior].mean()
    assert after == pytest.approx(before, rel=1e-6)


def test_occlude_prob_zero_leaves_image():
    sample = make_sample(16, seed=4)
    out = augment(Sample(sample.image, sample.annotation, (0, 0, 16, 16), "x"),
                  identity_config(16), np.random.default_rng(2))
    np.testing.assert_array_equal(out.image.data, sample.image.data)


def test_occlude_dark_mode_bounds():
    img = GrayImage(np.full((32, 32), 128.0))
    cfg = AugmentConfig(out_size=32, occlude_max_area_frac=0.5)
    found_dark = False
    for seed in range(60):
        out = occlude(img, cfg, np.random.default_rng(seed))
        changed = out.data != 128.0
        if changed.any():
            values = out.data[changed]
            if values.max() <= 30.0:
                found_dark = True
                assert values.min() >= 0.0
    assert found_dark


def test_occlude_area_bound():
    img = GrayImage(np.full((24, 40), 99.0))
    cfg = AugmentConfig(out_size=24, occlude_max_area_frac=0.5)
    for seed in range(300):
        out = occlude(img, cfg, np.random.default_rng(seed))
        changed = int((out.data != 99.0).sum())
        assert changed <= 0.5 * 24 * 40


def test_full_pipeline_bounds_scan():
    sample = make_sample(size=48, seed=6, box=(8, 8, 30, 30))
    cfg = AugmentConfig(out_size=24)
    for seed in range(300):
        out = augment(sample, cfg, derive_rng(41, seed))
        assert out.image.data.shape == (24, 24)
        assert out.image.data.min() >= 0.0
        assert out.image.data.max() <= 255.0


def test_noise_amplitude_bound_isolated():
    sample = make_sample(size=32, seed=7)
    base_cfg = identity_config(32)
    cfg = AugmentConfig(**{**base_cfg.__dict__, "noise_max_frac": 0.30})
    for seed in range(100):
        out = augment(sample, cfg, derive_rng(77, seed))
        delta = np.abs(out.image.data - sample.image.data)
        assert delta.max() <= 0.30 * 255.0 + 0.5  # rounding adds half a step


def test_augment_deterministic_and_distinct():
    sample = make_sample(size=40, seed=8, box=(5, 5, 28, 28))
    cfg = AugmentConfig(out_size=24)
    a = augment(sample, cfg, derive_rng(1, 2, 3))
    b = augment(sample, cfg, derive_rng(1, 2, 3))
    assert a.image.data.tobytes() == b.image.data.tobytes()
    np.testing.assert_array_equal(a.annotation.points, b.annotation.points)

    seen = set()
    for seed in range(500):
        out = augment(sample, cfg, derive_rng(9, seed))
        seen.add(out.image.data.tobytes())
    assert len(seen) == 500


def test_degenerate_box_raises():
    cfg = AugmentConfig(out_size=8, scale_range=(1.2, 1.2), shift_max_frac=0.0)
    with pytest.raises(DegenerateGeometryError):
        sample_geometry((3.0, 3.0, 0.5, 0.5), cfg, np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(DataError):
        AugmentConfig(blur_prob=1.5)
    with pytest.raises(DataError):
        AugmentConfig(scale_range=(1.2, 0.8))
    with pytest.raises(DataError):
        AugmentConfig(noise_max_frac=-0.1)


def test_eval_crop_identity_when_box_is_whole_image():
    sample = make_sample(size=20, seed=10)
    img, pts = eval_crop(sample, 20)
    np.testing.assert_array_equal(img.data, sample.image.data)
    np.testing.assert_allclose(pts.points, sample.annotation.points, atol=1e-9)
