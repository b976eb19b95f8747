"""Image primitives: PGM codec, integral images, equalization,
bilateral filtering and the affine warp, each checked against a naive
reimplementation where one exists."""

import numpy as np
import pytest

from bimodalauth.imaging import (
    BilateralParams,
    GrayImage,
    PgmFormatError,
    affine_warp,
    bilateral_filter,
    equalize_histogram,
    integral_image,
    load_pgm,
    write_pgm,
)


def random_image(rng, w, h):
    return GrayImage(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


# ---------------------------------------------------------------------------
# PGM codec


def test_pgm_roundtrip():
    rng = np.random.default_rng(3)
    for w, h in [(1, 1), (7, 3), (64, 64), (161, 47)]:
        img = random_image(rng, w, h)
        back = load_pgm(write_pgm(img))
        assert back.width == w and back.height == h
        assert np.array_equal(back.pixels, img.pixels)


def test_pgm_parses_comments_and_whitespace():
    raster = bytes(range(6))
    data = b"P5\n# a comment\n 3 # widths\n2\n# more\n255\n" + raster
    img = load_pgm(data)
    assert (img.width, img.height) == (3, 2)
    assert np.array_equal(img.pixels, np.arange(6, dtype=np.uint8).reshape(2, 3))


def test_pgm_rejects_bad_magic():
    with pytest.raises(PgmFormatError) as err:
        load_pgm(b"P2\n3 2\n255\n" + bytes(6))
    assert err.value.offset == 0


def test_pgm_rejects_wrong_maxval():
    with pytest.raises(PgmFormatError):
        load_pgm(b"P5\n2 2\n127\n" + bytes(4))


def test_pgm_rejects_truncated_raster():
    with pytest.raises(PgmFormatError):
        load_pgm(b"P5\n3 2\n255\n" + bytes(5))


def test_pgm_rejects_zero_dimensions():
    with pytest.raises(PgmFormatError):
        load_pgm(b"P5\n0 2\n255\n")


def test_gray_image_is_read_only():
    img = random_image(np.random.default_rng(0), 4, 4)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 7


# ---------------------------------------------------------------------------
# integral image


def test_integral_image_matches_brute_force_sums():
    rng = np.random.default_rng(11)
    img = random_image(rng, 23, 17)
    table = integral_image(img)
    for _ in range(200):
        x = int(rng.integers(0, img.width))
        y = int(rng.integers(0, img.height))
        w = int(rng.integers(1, img.width - x + 1))
        h = int(rng.integers(1, img.height - y + 1))
        expected = int(img.pixels[y : y + h, x : x + w].astype(np.int64).sum())
        assert table.rect_sum(x, y, w, h) == expected


def test_integral_image_whole_frame():
    img = random_image(np.random.default_rng(5), 9, 9)
    table = integral_image(img)
    assert table.rect_sum(0, 0, 9, 9) == int(img.pixels.astype(np.int64).sum())


# ---------------------------------------------------------------------------
# histogram equalization


def naive_equalize(pixels: np.ndarray) -> np.ndarray:
    n = pixels.size
    hist = np.bincount(pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = int(cdf[np.nonzero(hist)[0][0]])
    if n == cdf_min:
        return np.zeros_like(pixels)
    out = np.empty_like(pixels)
    for v in range(256):
        if hist[v]:
            out[pixels == v] = int(
                np.floor(255.0 * (cdf[v] - cdf_min) / (n - cdf_min) + 0.5)
            )
    return out


def test_equalize_matches_naive_oracle():
    rng = np.random.default_rng(21)
    for _ in range(10):
        img = random_image(rng, 31, 19)
        assert np.array_equal(equalize_histogram(img).pixels, naive_equalize(img.pixels))


def test_equalize_flat_image_goes_to_zero():
    img = GrayImage(np.full((5, 5), 131, dtype=np.uint8))
    assert np.array_equal(equalize_histogram(img).pixels, np.zeros((5, 5), dtype=np.uint8))


def test_equalize_two_levels_stretch_to_full_range():
    pixels = np.array([[100, 100], [200, 200]], dtype=np.uint8)
    out = equalize_histogram(GrayImage(pixels)).pixels
    # cdf(100)=2=cdf_min -> 0; cdf(200)=4 -> floor(255*2/2+0.5)=255
    assert sorted(set(out.ravel().tolist())) == [0, 255]


def test_equalize_preserves_intensity_order():
    rng = np.random.default_rng(8)
    img = random_image(rng, 16, 16)
    out = equalize_histogram(img).pixels
    flat_in, flat_out = img.pixels.ravel(), out.ravel()
    for _ in range(300):
        i, j = rng.integers(0, flat_in.size, size=2)
        if flat_in[i] < flat_in[j]:
            assert flat_out[i] <= flat_out[j]


# ---------------------------------------------------------------------------
# bilateral filter


def naive_bilateral(pixels: np.ndarray, params: BilateralParams) -> np.ndarray:
    r = params.radius
    h, w = pixels.shape
    src = pixels.astype(np.float64)
    out = np.empty_like(src)
    for y in range(h):
        for x in range(w):
            num = den = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    gs = np.exp(-(dx * dx + dy * dy) / (2.0 * params.sigma_spatial**2))
                    diff = src[ny, nx] - src[y, x]
                    gr = np.exp(-(diff * diff) / (2.0 * params.sigma_range**2))
                    num += gs * gr * src[ny, nx]
                    den += gs * gr
            out[y, x] = num / den
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def test_bilateral_matches_naive_oracle():
    rng = np.random.default_rng(4)
    img = random_image(rng, 14, 11)
    params = BilateralParams()
    assert np.array_equal(bilateral_filter(img, params).pixels,
                          naive_bilateral(img.pixels, params))


def test_bilateral_constant_image_is_fixed_point():
    img = GrayImage(np.full((9, 9), 77, dtype=np.uint8))
    assert np.array_equal(bilateral_filter(img).pixels, img.pixels)


def test_bilateral_preserves_strong_edge():
    # a hard 0/255 step should stay put: range kernel kills cross-edge mixing
    pixels = np.zeros((10, 10), dtype=np.uint8)
    pixels[:, 5:] = 255
    out = bilateral_filter(GrayImage(pixels)).pixels
    assert out[:, :5].max() <= 3
    assert out[:, 5:].min() >= 252


def test_bilateral_default_radius_follows_sigma():
    assert BilateralParams().radius == 4
    assert BilateralParams(sigma_spatial=3.0).radius == 6


# ---------------------------------------------------------------------------
# affine warp


def test_warp_identity_is_exact():
    img = random_image(np.random.default_rng(6), 12, 9)
    out = affine_warp(img, 0.0, 1.0, (0.0, 0.0), (0.0, 0.0), 12, 9)
    assert np.array_equal(out.pixels, img.pixels)


def test_warp_pure_translation_shifts_pixels():
    img = random_image(np.random.default_rng(7), 10, 10)
    out = affine_warp(img, 0.0, 1.0, (0.0, 0.0), (3.0, 2.0), 10, 10)
    assert np.array_equal(out.pixels[2:, 3:], img.pixels[:-2, :-3])
    assert np.all(out.pixels[:2, :] == 0)
    assert np.all(out.pixels[:, :3] == 0)


def test_warp_half_scale_averages_2x2_blocks():
    # pixel centers at i+0.5 make 0.5x scaling an exact 2x2 box filter
    img = random_image(np.random.default_rng(9), 16, 16)
    out = affine_warp(img, 0.0, 0.5, (0.0, 0.0), (0.0, 0.0), 8, 8)
    blocks = img.pixels.astype(np.float64).reshape(8, 2, 8, 2).mean(axis=(1, 3))
    assert np.array_equal(out.pixels, np.floor(blocks + 0.5).astype(np.uint8))


def test_warp_rotation_90_about_center_permutes_pixels():
    img = random_image(np.random.default_rng(10), 9, 9)
    out = affine_warp(img, 90.0, 1.0, (4.5, 4.5), (0.0, 0.0), 9, 9)
    assert np.array_equal(out.pixels, np.rot90(img.pixels, k=-1))


def test_warp_bilinear_interior_matches_manual_taps():
    img = random_image(np.random.default_rng(13), 8, 8)
    # quarter-pixel shift right: out(x) samples source at x coordinate x+0.25
    out = affine_warp(img, 0.0, 1.0, (0.0, 0.0), (-0.25, 0.0), 8, 8)
    src = img.pixels.astype(np.float64)
    expected = 0.75 * src[:, 1:7] + 0.25 * src[:, 2:8]
    assert np.array_equal(
        out.pixels[:, 1:7], np.floor(expected + 0.5).astype(np.uint8)
    )


def test_warp_outside_source_is_zero():
    img = GrayImage(np.full((5, 5), 200, dtype=np.uint8))
    out = affine_warp(img, 0.0, 1.0, (0.0, 0.0), (10.0, 0.0), 5, 5)
    assert np.all(out.pixels == 0)
