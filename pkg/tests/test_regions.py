import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from makeuplab.color import LabColor, delta_e76, lab_to_srgb_array, srgb_to_lab_array
from makeuplab.errors import EmptyRegionError, SchemaError
from makeuplab.imgio import ImageTensor
from makeuplab.regions import (
    KIND_LIPS,
    SCHEMA_DLIB68,
    SCHEMA_SYNTH,
    SYNTH_POINT_COUNT,
    LandmarkSet,
    RegionMask,
    background_mask,
    eye_region_mask,
    fill_polygon,
    lip_region_mask,
    weak_makeup_color,
    weak_skin_color,
)


def dlib_points(**overrides):
    """A plausible 68-point layout on a 64x64 frame; only the mouth and eye
    indices matter for the masks."""
    pts = np.full((68, 2), 5.0)
    pts[:, 0] = np.linspace(4, 60, 68)
    pts[:, 1] = np.linspace(4, 10, 68)
    # outer lips 48..59: a ring around (32, 44)
    ring = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60, 0] = 32 + 14 * np.cos(ring)
    pts[48:60, 1] = 44 + 7 * np.sin(ring)
    # inner mouth 60..67
    ring8 = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68, 0] = 32 + 6 * np.cos(ring8)
    pts[60:68, 1] = 44 + 3 * np.sin(ring8)
    # left eye 36..41, right eye 42..47
    ring6 = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    pts[36:42, 0] = 20 + 6 * np.cos(ring6)
    pts[36:42, 1] = 22 + 3 * np.sin(ring6)
    pts[42:48, 0] = 44 + 6 * np.cos(ring6)
    pts[42:48, 1] = 22 + 3 * np.sin(ring6)
    for idx, val in overrides.items():
        pts[idx] = val
    return pts


def uniform_image(color: LabColor, size=64) -> ImageTensor:
    rgb, _ = lab_to_srgb_array(np.array(color.as_tuple()))
    data = np.broadcast_to(rgb, (size, size, 3)).astype(np.float32).copy()
    return ImageTensor(data)


def test_landmark_schema_validation():
    with pytest.raises(SchemaError):
        LandmarkSet(np.zeros((67, 2)), SCHEMA_DLIB68)
    with pytest.raises(SchemaError):
        LandmarkSet(np.zeros((SYNTH_POINT_COUNT, 3)), SCHEMA_SYNTH)
    with pytest.raises(SchemaError):
        LandmarkSet(np.zeros((5, 2)), "unknown")
    lm = LandmarkSet(np.zeros((68, 2)), SCHEMA_DLIB68)
    assert lm.points.shape == (68, 2)


def test_out_of_frame_flagging():
    pts = dlib_points()
    pts[0] = (-3.0, 5.0)
    lm = LandmarkSet(pts, SCHEMA_DLIB68)
    assert 0 in lm.out_of_frame((64, 64))
    assert len(lm.out_of_frame((64, 64))) == 1


def test_lip_mask_is_outer_minus_inner():
    lm = LandmarkSet(dlib_points(), SCHEMA_DLIB68)
    mask = lip_region_mask(lm, (64, 64))
    outer = fill_polygon(lm.points[48:60], (64, 64))
    inner = fill_polygon(lm.points[60:68], (64, 64))
    assert np.array_equal(mask.mask, outer & ~inner)
    assert mask.kind == KIND_LIPS
    assert 0 < mask.pixel_count <= 64 * 64
    assert not (mask.mask & inner).any()


def test_lip_mask_synth_matches_emitted_mask(lip_sample):
    dims = lip_sample.image.data.shape[:2]
    mask = lip_region_mask(lip_sample.landmarks, dims)
    assert np.array_equal(mask.mask, lip_sample.mask.mask)


def test_degenerate_polygon_raises():
    pts = dlib_points()
    pts[48:60] = (30.0, 30.0)  # zero-area outer lip
    with pytest.raises(EmptyRegionError):
        lip_region_mask(LandmarkSet(pts, SCHEMA_DLIB68), (64, 64))


def test_eye_mask_band_above_lids():
    lm = LandmarkSet(dlib_points(), SCHEMA_DLIB68)
    mask = eye_region_mask(lm, (64, 64))
    assert mask.pixel_count > 0
    # disjoint from both eyeball polygons
    for sl in (slice(36, 42), slice(42, 48)):
        eye = fill_polygon(lm.points[sl], (64, 64))
        assert not (mask.mask & eye).any()
    # strictly above the eye centers
    rows = np.nonzero(mask.mask.any(axis=1))[0]
    assert rows.max() <= 26


def test_eye_mask_clips_to_frame_without_error():
    pts = dlib_points()
    pts[36:42, 1] = 2.0  # upper arc hugs the top edge; band mostly off-frame
    mask = eye_region_mask(LandmarkSet(pts, SCHEMA_DLIB68), (64, 64))
    assert mask.pixel_count > 0
    assert mask.mask.shape == (64, 64)


def test_median_of_uniform_region_is_exact():
    color = LabColor(48.0, 30.0, 20.0)
    img = uniform_image(color)
    mask = RegionMask(np.zeros((64, 64), dtype=bool))
    mask.mask[10:30, 10:30] = True
    got = weak_makeup_color(img, mask)
    # the uniform image quantizes once; compare in its own quantized Lab
    want = srgb_to_lab_array(img.data[15, 15])
    assert got.as_tuple() == pytest.approx(tuple(want), abs=1e-6)


def test_median_survives_40pct_outliers():
    img = uniform_image(LabColor(48.0, 30.0, 20.0))
    mask = np.zeros((64, 64), dtype=bool)
    mask[10:30, 10:30] = True
    clean = weak_makeup_color(img, RegionMask(mask))
    corrupted = img.data.copy()
    idx = np.flatnonzero(mask)
    bad = np.random.default_rng(5).choice(idx, size=int(0.4 * idx.size), replace=False)
    corrupted.reshape(-1, 3)[bad] = np.random.default_rng(6).uniform(0, 1, (bad.size, 3))
    got = weak_makeup_color(ImageTensor(corrupted), RegionMask(mask))
    assert got == clean


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.49))
@settings(max_examples=25, deadline=None)
def test_median_robustness_property(seed, frac):
    """Perturbing strictly fewer than half the pixels of a constant region
    never changes the per-channel median."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, size=3)
    img = np.broadcast_to(base, (32, 32, 3)).astype(np.float64).copy()
    mask = np.zeros((32, 32), dtype=bool)
    mask[4:28, 4:28] = True
    clean = weak_makeup_color(ImageTensor(img), RegionMask(mask))
    idx = np.flatnonzero(mask)
    n_bad = int(frac * idx.size)
    bad = rng.choice(idx, size=n_bad, replace=False)
    img.reshape(-1, 3)[bad] = rng.uniform(0, 1, (n_bad, 3))
    assert weak_makeup_color(ImageTensor(img), RegionMask(mask)) == clean


def test_median_scale_consistency(lip_sample):
    img, mask = lip_sample.image, lip_sample.mask
    base = weak_makeup_color(img, mask)
    up_img = ImageTensor(np.repeat(np.repeat(img.data, 2, axis=0), 2, axis=1))
    up_mask = RegionMask(np.repeat(np.repeat(mask.mask, 2, axis=0), 2, axis=1))
    assert weak_makeup_color(up_img, up_mask) == base


def test_shading_gradient_median_oracle(lip_sample):
    """Brute-force per-channel median oracle over the rendered pixels."""
    img, mask = lip_sample.image, lip_sample.mask
    got = weak_makeup_color(img, mask)
    pixels = srgb_to_lab_array(img.data[mask.mask])
    oracle = tuple(
        sorted(pixels[:, ch])[(pixels.shape[0] - 1) // 2] for ch in range(3)
    )
    assert got.as_tuple() == pytest.approx(oracle, abs=1e-12)
    assert delta_e76(got, lip_sample.gt_makeup) <= 1.0


def test_empty_mask_raises():
    img = uniform_image(LabColor(50, 0, 0))
    with pytest.raises(EmptyRegionError):
        weak_makeup_color(img, RegionMask(np.zeros((64, 64), dtype=bool)))


def test_skin_median_uniform_background():
    skin = LabColor(62.0, 14.0, 18.0)
    img = uniform_image(skin)
    mask = np.zeros((64, 64), dtype=bool)
    mask[20:40, 20:40] = True
    img.data[mask] = 0.1
    got = weak_skin_color(img, [RegionMask(mask)])
    want = srgb_to_lab_array(img.data[0, 0])
    assert got.as_tuple() == pytest.approx(tuple(want), abs=1e-6)


def test_skin_full_mask_raises():
    img = uniform_image(LabColor(50, 0, 0))
    with pytest.raises(EmptyRegionError):
        weak_skin_color(img, [RegionMask(np.ones((64, 64), dtype=bool))])


def test_skin_speckle_robustness():
    skin = LabColor(55.0, 12.0, 16.0)
    img = uniform_image(skin)
    mask = np.zeros((64, 64), dtype=bool)
    mask[25:40, 25:40] = True
    data = img.data.copy()
    complement = np.flatnonzero(~mask)
    bad = np.random.default_rng(8).choice(complement, size=int(0.1 * complement.size),
                                          replace=False)
    data.reshape(-1, 3)[bad] = 1.0
    got = weak_skin_color(ImageTensor(data), [RegionMask(mask)])
    base = weak_skin_color(img, [RegionMask(mask)])
    assert delta_e76(got, base) <= 0.5


def test_makeup_and_skin_use_disjoint_pixels(lip_sample):
    mask = lip_sample.mask
    bg = background_mask([mask], mask.mask.shape)
    assert not (mask.mask & bg.mask).any()
    assert (mask.mask | bg.mask).all()
