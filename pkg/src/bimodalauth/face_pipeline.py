"""Face preprocessing: alignment, split equalization, smoothing, masking.

The chain turns an arbitrary grayscale face image plus two eye centers
into a canonical 70x70 face:

    warp (rotate/scale/translate so the eyes land on fixed anchors)
    -> split histogram equalization (left half / full / right half,
       blended by column to tame one-sided illumination)
    -> bilateral smoothing
    -> elliptical mask (everything outside the face oval set to 128)

Every step is deterministic, so the same input bytes always produce
the same canonical face.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .face_detect import (
    CascadeModel,
    EyeGeometry,
    EyeRegions,
    NoFaceError,
    _best_detection,
    detect_objects,
    locate_eyes,
)
from .imaging import BilateralParams, GrayImage, affine_warp, bilateral_filter, equalize_histogram


@dataclass(frozen=True)
class CanonicalParams:
    """Geometry of the canonical face frame.

    Eye anchors sit at (left_eye_x*size, eye_y*size) and
    (right_eye_x*size, eye_y*size). The mask ellipse is centered at
    (mask_cx, mask_cy) with semi-axes (mask_a, mask_b) and fills the
    outside with mask_fill.
    """

    size: int = 70
    left_eye_x: float = 0.19
    right_eye_x: float = 0.81
    eye_y: float = 0.30
    mask_cx: float = 35.0
    mask_cy: float = 28.0
    mask_a: float = 35.0 * 0.85
    mask_b: float = 60.0 * 0.8
    mask_fill: int = 128

    def __post_init__(self):
        if self.size < 4:
            raise ConfigurationError("canonical size must be >= 4")
        if not (0.0 < self.left_eye_x < self.right_eye_x < 1.0):
            raise ConfigurationError("eye anchors must satisfy 0 < left < right < 1")


@dataclass(frozen=True)
class AlignmentParams:
    """Similarity transform that brings the eyes onto their anchors.

    angle_deg is the eye line's deviation off the x-axis
    (atan2(ry - ly, rx - lx) in degrees); the warp rotates by -angle_deg
    about the origin, scales by ``scale`` and then translates by
    ``translation``, which lands each eye exactly on its anchor.
    """

    angle_deg: float
    scale: float
    translation: tuple[float, float]
    out_size: int


@dataclass(frozen=True, eq=False)
class CanonicalFace:
    """A preprocessed face raster plus provenance."""

    image: GrayImage
    source_id: str = ""
    eye_centers: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if self.image.width != self.image.height:
            raise ValueError("canonical faces are square")


def compute_alignment(
    left_eye: tuple[float, float],
    right_eye: tuple[float, float],
    params: CanonicalParams = CanonicalParams(),
) -> AlignmentParams:
    """Derive the warp that maps the given eye centers onto the anchors."""
    lx, ly = left_eye
    rx, ry = right_eye
    if not rx > lx:
        raise ValueError("right eye must lie at greater x than left eye")
    dx = rx - lx
    dy = ry - ly
    distance = math.hypot(dx, dy)
    angle_deg = math.degrees(math.atan2(dy, dx))

    size = params.size
    desired = (params.right_eye_x - params.left_eye_x) * size
    scale = desired / distance

    anchor_mid_x = (params.left_eye_x + params.right_eye_x) / 2.0 * size
    anchor_mid_y = params.eye_y * size
    mid_x = (lx + rx) / 2.0
    mid_y = (ly + ry) / 2.0

    theta = math.radians(-angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    tx = anchor_mid_x - scale * (cos_t * mid_x - sin_t * mid_y)
    ty = anchor_mid_y - scale * (sin_t * mid_x + cos_t * mid_y)
    return AlignmentParams(angle_deg, scale, (tx, ty), size)


def align_face(img: GrayImage, alignment: AlignmentParams) -> GrayImage:
    return affine_warp(
        img,
        angle_deg=-alignment.angle_deg,
        scale=alignment.scale,
        center=(0.0, 0.0),
        translation=alignment.translation,
        out_width=alignment.out_size,
        out_height=alignment.out_size,
    )


def split_equalize(img: GrayImage) -> GrayImage:
    """Histogram equalization resistant to one-sided illumination.

    Equalizes the left half, the right half and the whole image
    independently, then composes by column: pure left-half result for
    x < W/4, a linear blend into the full-image result up to W/2, a
    blend from full into the right-half result up to 3W/4, and the pure
    right-half result beyond. Each output column stays inside the
    per-pixel min/max envelope of the three sources.
    """
    w = img.width
    if w < 4:
        raise ValueError("split equalization needs width >= 4")
    half = w // 2

    left = equalize_histogram(GrayImage(img.pixels[:, :half])).pixels.astype(np.float64)
    right = equalize_histogram(GrayImage(img.pixels[:, half:])).pixels.astype(np.float64)
    full = equalize_histogram(img).pixels.astype(np.float64)

    q1 = w / 4.0
    q2 = w / 2.0
    q3 = 3.0 * w / 4.0
    out = np.empty((img.height, w))
    for x in range(w):
        if x < q1:
            col = left[:, x]
        elif x < q2:
            t = (x - q1) / (q2 - q1)
            col = (1.0 - t) * left[:, x] + t * full[:, x]
        elif x < q3:
            t = (x - q2) / (q3 - q2)
            col = (1.0 - t) * full[:, x] + t * right[:, x - half]
        else:
            col = right[:, x - half]
        out[:, x] = col
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def apply_elliptical_mask(img: GrayImage, params: CanonicalParams = CanonicalParams()) -> GrayImage:
    """Set pixels outside the face ellipse to the fill value."""
    if img.width != params.size or img.height != params.size:
        raise ValueError(f"mask expects a {params.size}x{params.size} image")
    ys, xs = np.mgrid[0 : img.height, 0 : img.width]
    inside = ((xs - params.mask_cx) / params.mask_a) ** 2 + (
        (ys - params.mask_cy) / params.mask_b
    ) ** 2 <= 1.0
    out = np.where(inside, img.pixels, np.uint8(params.mask_fill))
    return GrayImage(out.astype(np.uint8))


def preprocess_face(
    img: GrayImage,
    eyes: EyeRegions,
    params: CanonicalParams = CanonicalParams(),
    bilateral: BilateralParams = BilateralParams(),
    source_id: str = "",
) -> CanonicalFace:
    """Run the full preprocessing chain on one face image."""
    alignment = compute_alignment(eyes.left_center, eyes.right_center, params)
    warped = align_face(img, alignment)
    equalized = split_equalize(warped)
    smoothed = bilateral_filter(equalized, bilateral)
    masked = apply_elliptical_mask(smoothed, params)
    return CanonicalFace(
        image=masked,
        source_id=source_id,
        eye_centers=(eyes.left_center, eyes.right_center),
    )


def acquire_canonical_face(
    img: GrayImage,
    eyes: EyeRegions | None = None,
    face_model: CascadeModel | None = None,
    eye_model: CascadeModel | None = None,
    eye_geometry: EyeGeometry = EyeGeometry(),
    params: CanonicalParams = CanonicalParams(),
    bilateral: BilateralParams = BilateralParams(),
    scaling_width: int = 320,
    source_id: str = "",
) -> CanonicalFace:
    """Locate (unless eye centers are given) and preprocess one face.

    With ``eyes`` provided, detection is bypassed entirely. Otherwise a
    face cascade and an eye cascade are required: the image is scanned
    at a working width of ``scaling_width`` (scaled down only, never
    up), the best face rectangle is mapped back to original
    coordinates, and the eyes are located inside it. Raises
    NoFaceError or EyeNotFoundError when acquisition fails.
    """
    if eyes is not None:
        return preprocess_face(img, eyes, params, bilateral, source_id)
    if face_model is None or eye_model is None:
        raise ConfigurationError("face and eye cascades are required without eye annotations")

    work = img
    ratio = 1.0
    if img.width > scaling_width:
        ratio = scaling_width / img.width
        work = affine_warp(
            img, 0.0, ratio, (0.0, 0.0), (0.0, 0.0),
            scaling_width, max(1, int(round(img.height * ratio))),
        )
    detections = detect_objects(work, face_model)
    if not detections:
        raise NoFaceError("no face detected")
    best = _best_detection(detections)
    fx = int(round(best.x / ratio))
    fy = int(round(best.y / ratio))
    fw = min(int(round(best.w / ratio)), img.width - fx)
    fh = min(int(round(best.h / ratio)), img.height - fy)
    crop = GrayImage(img.pixels[fy : fy + fh, fx : fx + fw])
    eye_regions = locate_eyes(crop, eye_model, eye_geometry)
    return preprocess_face(crop, eye_regions, params, bilateral, source_id)
