"""Image container, PNG I/O, patch grid, blind-spot masking, padding."""

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from PIL import Image

from gdm.errors import ImageIOError, InvalidInputError
from gdm.imagecore import (
    CropRecord,
    GrayImage,
    Patch,
    apply_blindspot_mask,
    extract_patches,
    load_image,
    pad_to_multiple,
    save_image,
)


def rand_image(h, w, seed=0, **kw):
    return GrayImage(np.random.default_rng(seed).random((h, w)), **kw)


# --- container validation -------------------------------------------------


def test_rejects_non_2d_pixels():
    with pytest.raises(InvalidInputError):
        GrayImage(np.zeros((4, 4, 3)))


@pytest.mark.parametrize("bad", [1.5, -0.1])
def test_rejects_out_of_range_pixels(bad):
    with pytest.raises(InvalidInputError):
        GrayImage(np.full((4, 4), bad))


def test_rejects_non_finite_pixels():
    px = np.zeros((4, 4))
    px[1, 2] = np.nan
    with pytest.raises(InvalidInputError):
        GrayImage(px)


def test_rejects_unknown_bit_depth():
    with pytest.raises(InvalidInputError):
        GrayImage(np.zeros((4, 4)), source_bit_depth=12)


def test_rejects_nonpositive_pixel_size():
    with pytest.raises(InvalidInputError):
        GrayImage(np.zeros((4, 4)), pixel_size_nm=0.0)


def test_with_pixels_keeps_metadata():
    img = GrayImage(np.zeros((4, 4)), source_bit_depth=16, pixel_size_nm=0.5)
    out = img.with_pixels(np.ones((4, 4)))
    assert out.source_bit_depth == 16
    assert out.pixel_size_nm == 0.5
    assert out.pixels.max() == 1.0


@given(
    st.integers(min_value=1, max_value=6),
    st.sampled_from([8, 16]),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_quantization_round_trip_is_exact(n, depth, seed):
    levels = (1 << depth) - 1
    raw = np.random.default_rng(seed).integers(0, levels + 1, size=(n, n))
    img = GrayImage(raw / levels, source_bit_depth=depth)
    assert np.array_equal(img.to_quantized(), raw)


# --- PNG I/O ---------------------------------------------------------------


def test_png_round_trip_8bit(tmp_path):
    img = rand_image(9, 7, seed=1)
    path = tmp_path / "img.png"
    save_image(img, path)
    back = load_image(path)
    assert back.source_bit_depth == 8
    assert np.array_equal(back.to_quantized(), img.to_quantized())
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255


def test_png_round_trip_16bit(tmp_path):
    img = GrayImage(np.linspace(0, 1, 64).reshape(8, 8), source_bit_depth=16)
    path = tmp_path / "img.png"
    save_image(img, path)
    back = load_image(path)
    assert back.source_bit_depth == 16
    assert np.array_equal(back.to_quantized(), img.to_quantized())


def test_rgb_input_collapses_to_channel_mean(tmp_path):
    arr = np.zeros((5, 6, 3), dtype=np.uint8)
    arr[..., 0], arr[..., 1], arr[..., 2] = 10, 20, 40
    Image.fromarray(arr, mode="RGB").save(tmp_path / "rgb.png")
    img = load_image(tmp_path / "rgb.png")
    assert img.shape == (5, 6)
    assert np.allclose(img.pixels, (10 + 20 + 40) / 3.0 / 255.0)


def test_load_missing_file_raises():
    with pytest.raises(ImageIOError):
        load_image("/nonexistent/nowhere.png")


def test_load_non_image_raises(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_text("not an image")
    with pytest.raises(ImageIOError):
        load_image(bad)


# --- patch grid ------------------------------------------------------------


def grid_starts_oracle(extent, size, stride):
    starts, s = [], 0
    while s + size <= extent:
        starts.append(s)
        s += stride
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def test_non_divisible_extent_adds_edge_aligned_row():
    img = rand_image(300, 300, seed=2)
    patches = extract_patches(img, 128, 128)
    starts = [0, 128, 172]
    assert sorted({p.origin for p in patches}) == [
        (r, c) for r in starts for c in starts
    ]


def test_patch_count_matches_ceil_formula():
    img = rand_image(300, 300, seed=2)
    for stride in (32, 100, 128, 300):
        per_axis = math.ceil((300 - 128) / stride + 1)
        assert len(extract_patches(img, 128, stride)) == per_axis**2


def test_patches_are_views_of_source_regions():
    img = rand_image(50, 40, seed=3)
    for p in extract_patches(img, 16, 10):
        r, c = p.origin
        assert np.array_equal(p.pixels, img.pixels[r : r + 16, c : c + 16])
        assert p.size == 16


@given(
    st.integers(min_value=8, max_value=40),
    st.integers(min_value=8, max_value=40),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=1, max_value=15),
)
def test_patch_grid_origins_and_coverage(h, w, size, stride):
    size = min(size, h, w)
    img = GrayImage(np.zeros((h, w)))
    patches = extract_patches(img, size, stride)
    rows = grid_starts_oracle(h, size, stride)
    cols = grid_starts_oracle(w, size, stride)
    assert sorted({p.origin for p in patches}) == [(r, c) for r in rows for c in cols]
    if stride <= size:
        covered = np.zeros((h, w), dtype=bool)
        for p in patches:
            r, c = p.origin
            covered[r : r + size, c : c + size] = True
        assert covered.all()


def test_patch_larger_than_image_rejected():
    with pytest.raises(InvalidInputError):
        extract_patches(rand_image(8, 8), 16, 8)
    with pytest.raises(InvalidInputError):
        extract_patches(rand_image(8, 8), 0, 1)


# --- blind-spot masking ----------------------------------------------------


def test_default_fraction_masks_1638_of_128_patch():
    patch = Patch(np.random.default_rng(0).random((128, 128)), origin=(0, 0))
    mp = apply_blindspot_mask(patch, 0.1, np.random.default_rng(1))
    assert mp.mask_coords.shape == (1638, 2)


def test_unmasked_pixels_pass_through_untouched():
    patch = Patch(np.random.default_rng(4).random((32, 32)), origin=(0, 0))
    mp = apply_blindspot_mask(patch, 0.1, np.random.default_rng(5))
    untouched = np.ones((32, 32), dtype=bool)
    untouched[mp.mask_coords[:, 0], mp.mask_coords[:, 1]] = False
    assert np.array_equal(mp.corrupted[untouched], patch.pixels[untouched])


def test_replacements_come_from_unmasked_5x5_neighbors():
    patch = Patch(np.random.default_rng(6).random((32, 32)), origin=(0, 0))
    mp = apply_blindspot_mask(patch, 0.1, np.random.default_rng(7))
    masked = np.zeros((32, 32), dtype=bool)
    masked[mp.mask_coords[:, 0], mp.mask_coords[:, 1]] = True
    for r, c in mp.mask_coords:
        window = [
            patch.pixels[rr, cc]
            for rr in range(max(r - 2, 0), min(r + 3, 32))
            for cc in range(max(c - 2, 0), min(c + 3, 32))
            if not masked[rr, cc]
        ]
        assert mp.corrupted[r, c] in window


def test_masking_is_seeded():
    patch = Patch(np.random.default_rng(8).random((64, 64)), origin=(0, 0))
    a = apply_blindspot_mask(patch, 0.1, np.random.default_rng(42))
    b = apply_blindspot_mask(patch, 0.1, np.random.default_rng(42))
    assert np.array_equal(a.mask_coords, b.mask_coords)
    assert np.array_equal(a.corrupted, b.corrupted)
    c = apply_blindspot_mask(patch, 0.1, np.random.default_rng(43))
    assert not np.array_equal(a.corrupted, c.corrupted)


@given(
    st.integers(min_value=6, max_value=20),
    st.floats(min_value=0.02, max_value=0.6),
    st.integers(min_value=0, max_value=2**31),
)
def test_mask_count_uniqueness_and_reconstruction(size, fraction, seed):
    n_expected = int(round(fraction * size * size))
    assume(n_expected >= 1)
    patch = Patch(np.random.default_rng(seed).random((size, size)), origin=(0, 0))
    mp = apply_blindspot_mask(patch, fraction, np.random.default_rng(seed + 1))
    coords = mp.mask_coords
    assert coords.shape == (n_expected, 2)
    assert len({(r, c) for r, c in coords}) == n_expected
    assert coords.min() >= 0 and coords.max() < size
    assert np.array_equal(mp.original(), patch.pixels)


def test_extreme_fraction_falls_back_to_own_value():
    patch = Patch(np.random.default_rng(9).random((16, 16)), origin=(0, 0))
    mp = apply_blindspot_mask(patch, 0.98, np.random.default_rng(10))
    assert np.isfinite(mp.corrupted).all()
    assert np.array_equal(mp.original(), patch.pixels)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_fraction_outside_open_interval_rejected(fraction):
    patch = Patch(np.zeros((8, 8)), origin=(0, 0))
    with pytest.raises(InvalidInputError):
        apply_blindspot_mask(patch, fraction, np.random.default_rng(0))


# --- reflective padding ----------------------------------------------------


def test_pad_to_multiple_of_four_shapes():
    padded, crop = pad_to_multiple(rand_image(130, 127, seed=10), 4)
    assert padded.shape == (132, 128)
    assert (crop.pad_bottom, crop.pad_right) == (2, 1)


def test_pad_then_crop_is_identity():
    img = rand_image(130, 130, seed=11)
    padded, crop = pad_to_multiple(img, 4)
    assert padded.shape == (132, 132)
    assert np.array_equal(crop.crop(padded.pixels), img.pixels)


def test_divisible_image_is_returned_unchanged():
    img = rand_image(64, 64, seed=12)
    padded, crop = pad_to_multiple(img, 4)
    assert padded is img
    assert crop == CropRecord(0, 0)


def test_padding_mirrors_interior_rows():
    px = np.arange(12, dtype=np.float64).reshape(3, 4) / 11.0
    padded, _ = pad_to_multiple(GrayImage(px), 4)
    assert np.array_equal(padded.pixels[3], px[1])


def test_tiny_image_falls_back_to_edge_padding():
    padded, crop = pad_to_multiple(GrayImage(np.array([[0.25]])), 4)
    assert padded.shape == (4, 4)
    assert np.all(padded.pixels == 0.25)
    assert np.array_equal(crop.crop(padded.pixels), [[0.25]])


@given(
    st.integers(min_value=1, max_value=40),
    st.integers(min_value=1, max_value=40),
    st.sampled_from([2, 4, 8]),
)
def test_pad_round_trip_property(h, w, m):
    img = GrayImage(np.random.default_rng(h * 41 + w).random((h, w)))
    padded, crop = pad_to_multiple(img, m)
    assert padded.height % m == 0 and padded.width % m == 0
    assert np.array_equal(crop.crop(padded.pixels), img.pixels)
