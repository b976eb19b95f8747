"""Grayscale raster primitives.

Binary PGM I/O, integral images, histogram equalization, bilateral
smoothing and affine warping. These are the building blocks shared by
the detector and the face preprocessing chain.

All image types are immutable. Operations return new images and never
mutate their inputs, so values can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError


class PgmFormatError(FormatError):
    """Malformed PGM input. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster, row-major, intensities in [0, 255].

    ``pixels`` is a read-only ``(height, width)`` uint8 array.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be 2-D with positive dimensions")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.number):
                raise ValueError("pixels must be numeric")
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Summed-area table with a zero first row and column.

    ``sums[y, x]`` holds the sum of all pixels strictly above and to the
    left of (x, y), so the table of an (h, w) image has shape
    (h+1, w+1). Entries are int64 and exact for images up to 8192x8192.
    """

    sums: np.ndarray

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        """Sum of the w*h pixel rectangle with top-left corner (x, y)."""
        if w < 0 or h < 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError("rectangle out of bounds")
        s = self.sums
        return int(s[y + h, x + w] - s[y, x + w] - s[y + h, x] + s[y, x])


def integral_image(img: GrayImage) -> IntegralImage:
    """Build the summed-area table of ``img``."""
    h, w = img.pixels.shape
    sums = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(img.pixels, axis=0, dtype=np.int64), axis=1, out=sums[1:, 1:])
    sums.setflags(write=False)
    return IntegralImage(sums)


def load_pgm(data: bytes) -> GrayImage:
    """Parse a binary PGM (P5) byte string.

    The header is whitespace-delimited with '#' comments running to end
    of line; exactly one whitespace byte separates the maxval token from
    the raster. Only maxval 255 is supported. Malformed or truncated
    input raises PgmFormatError with the offending byte offset.
    """
    pos = 0
    n = len(data)

    def skip_separators(p: int) -> int:
        while p < n:
            c = data[p : p + 1]
            if c.isspace():
                p += 1
            elif c == b"#":
                while p < n and data[p : p + 1] != b"\n":
                    p += 1
            else:
                break
        return p

    def next_token(p: int) -> tuple[bytes, int]:
        p = skip_separators(p)
        if p >= n:
            raise PgmFormatError("unexpected end of header", p)
        start = p
        while p < n and not data[p : p + 1].isspace() and data[p : p + 1] != b"#":
            p += 1
        return data[start:p], p

    magic, pos = next_token(pos)
    if magic != b"P5":
        raise PgmFormatError(f"not a binary PGM (magic {magic!r})", 0)

    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = next_token(pos)
        try:
            value = int(token)
        except ValueError:
            raise PgmFormatError(f"bad {name} token {token!r}", pos - len(token)) from None
        fields.append(value)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PgmFormatError(f"bad dimensions {width}x{height}", pos)
    if maxval != 255:
        raise PgmFormatError(f"unsupported maxval {maxval} (only 255)", pos)

    if pos >= n or not data[pos : pos + 1].isspace():
        raise PgmFormatError("missing whitespace before raster", pos)
    pos += 1

    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) < expected:
        raise PgmFormatError(
            f"truncated raster: expected {expected} bytes, found {len(raster)}", pos + len(raster)
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels)


def write_pgm(img: GrayImage) -> bytes:
    """Serialize ``img`` as binary PGM with maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def load_pgm_file(path) -> GrayImage:
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def save_pgm_file(img: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


def equalize_histogram(img: GrayImage) -> GrayImage:
    """Global histogram equalization by CDF remapping.

    v' = round(255 * (cdf(v) - cdf_min) / (n - cdf_min)) where cdf_min is
    the CDF at the lowest intensity present. An image with a single
    intensity (n == cdf_min) maps to all zeros by convention.
    """
    pixels = img.pixels
    hist = np.bincount(pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = pixels.size
    cdf_min = int(cdf[np.nonzero(hist)[0][0]])
    denom = n - cdf_min
    if denom == 0:
        return GrayImage(np.zeros_like(pixels))
    lut = np.floor(255.0 * (cdf - cdf_min) / denom + 0.5)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return GrayImage(lut[pixels])


@dataclass(frozen=True)
class BilateralParams:
    """Bilateral filter parameters: spatial and range Gaussian sigmas."""

    sigma_spatial: float = 2.0
    sigma_range: float = 20.0

    def __post_init__(self):
        if self.sigma_spatial <= 0 or self.sigma_range <= 0:
            raise ConfigurationError("bilateral sigmas must be positive")

    @property
    def radius(self) -> int:
        return int(math.ceil(2.0 * self.sigma_spatial))


def bilateral_filter(img: GrayImage, params: BilateralParams = BilateralParams()) -> GrayImage:
    """Edge-preserving smoothing.

    Each output pixel is the mean of its (2r+1)^2 neighborhood (r =
    ceil(2*sigma_spatial)) weighted by a spatial Gaussian in distance
    and a range Gaussian in intensity difference; the neighborhood is
    clipped at the borders. The output is a convex combination of input
    intensities, so it never leaves the input's [min, max] range.
    """
    src = img.pixels.astype(np.float64)
    h, w = src.shape
    r = params.radius
    two_ss = 2.0 * params.sigma_spatial**2
    two_sr = 2.0 * params.sigma_range**2

    acc = np.zeros((h, w))
    weight = np.zeros((h, w))
    for dy in range(-r, r + 1):
        ys_dst = slice(max(0, -dy), h - max(0, dy))
        ys_src = slice(max(0, dy), h - max(0, -dy))
        for dx in range(-r, r + 1):
            xs_dst = slice(max(0, -dx), w - max(0, dx))
            xs_src = slice(max(0, dx), w - max(0, -dx))
            ws = math.exp(-(dx * dx + dy * dy) / two_ss)
            neighbor = src[ys_src, xs_src]
            center = src[ys_dst, xs_dst]
            wr = np.exp(-((neighbor - center) ** 2) / two_sr)
            acc[ys_dst, xs_dst] += ws * wr * neighbor
            weight[ys_dst, xs_dst] += ws * wr
    out = np.floor(acc / weight + 0.5)
    return GrayImage(np.clip(out, 0, 255).astype(np.uint8))


def affine_warp(
    img: GrayImage,
    angle_deg: float,
    scale: float,
    center: tuple[float, float],
    translation: tuple[float, float],
    out_width: int,
    out_height: int,
) -> GrayImage:
    """Rotate, scale and translate ``img`` into an out_width x out_height frame.

    The forward map takes a source point p (continuous coordinates,
    pixel (i, j) centered at (i+0.5, j+0.5)) to

        q = R(angle) * scale * (p - center) + center + translation

    Output pixels are inverse-mapped and sampled bilinearly; reads that
    fall outside the source are 0. With angle 0, scale 1 and zero
    translation the warp is an exact identity on pixels.
    """
    if scale <= 0:
        raise ConfigurationError("scale must be positive")
    src = img.pixels.astype(np.float64)
    h, w = src.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = center
    tx, ty = translation

    gx, gy = np.meshgrid(
        np.arange(out_width, dtype=np.float64) + 0.5,
        np.arange(out_height, dtype=np.float64) + 0.5,
    )
    dx = gx - cx - tx
    dy = gy - cy - ty
    # inverse rotation is the transpose of R(angle)
    px = (cos_t * dx + sin_t * dy) / scale + cx
    py = (-sin_t * dx + cos_t * dy) / scale + cy

    sx = px - 0.5
    sy = py - 0.5
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((out_height, out_width))
    for ix, iy, wgt in (
        (x0, y0, (1 - fx) * (1 - fy)),
        (x0 + 1, y0, fx * (1 - fy)),
        (x0, y0 + 1, (1 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ):
        valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        vals = np.where(valid, src[np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)], 0.0)
        out += wgt * vals
    out = np.floor(out + 0.5)
    return GrayImage(np.clip(out, 0, 255).astype(np.uint8))
