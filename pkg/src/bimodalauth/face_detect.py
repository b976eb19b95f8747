"""Sliding-window cascade inference for face and eye localization.

Cascades are plain-text models (see docs/FORMATS.md): a base window
size and a list of boosted stages, each a set of weak classifiers over
weighted rectangle features. Detection scans a pyramid of window
scales over the integral image; features are normalized by the window
intensity standard deviation, which makes decisions invariant to
affine intensity changes when a feature's weighted rectangle areas sum
to zero.

Eye localization searches two fixed regions of a face rectangle: the
left region has its top-left corner at (0.16*W, 0.26*H) and size
(0.30*W, 0.28*H); the right region is its mirror about the vertical
midline. "Left" means image-left throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BimodalAuthError, ConfigurationError, FormatError
from .imaging import GrayImage, integral_image


class CascadeParseError(FormatError):
    """Malformed cascade text. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class NoFaceError(BimodalAuthError):
    """No face detected in the input image."""


class EyeNotFoundError(BimodalAuthError):
    """No eye detected in one of the search regions."""

    def __init__(self, side: str):
        super().__init__(f"no {side} eye detected")
        self.side = side


@dataclass(frozen=True)
class HaarRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class WeakClassifier:
    threshold: float
    leaf_below: float
    leaf_above: float
    rects: tuple[HaarRect, ...]


@dataclass(frozen=True)
class CascadeStage:
    threshold: float
    weaks: tuple[WeakClassifier, ...]


@dataclass(frozen=True)
class CascadeModel:
    window_w: int
    window_h: int
    stages: tuple[CascadeStage, ...]

    def __post_init__(self):
        if self.window_w < 1 or self.window_h < 1:
            raise ValueError("window dimensions must be positive")
        if not self.stages:
            raise ValueError("cascade needs at least one stage")
        for stage in self.stages:
            if not stage.weaks:
                raise ValueError("every stage needs at least one weak classifier")
            for weak in stage.weaks:
                for r in weak.rects:
                    if r.w < 1 or r.h < 1 or r.x < 0 or r.y < 0:
                        raise ValueError("rectangle outside the base window")
                    if r.x + r.w > self.window_w or r.y + r.h > self.window_h:
                        raise ValueError("rectangle outside the base window")


@dataclass(frozen=True)
class Detection:
    """Grouped detection: rectangle plus the number of raw hits merged."""

    x: int
    y: int
    w: int
    h: int
    neighbors: int


def parse_cascade(text: str) -> CascadeModel:
    """Parse the CASCADE v1 text format.

    Lines hold one item each: the header, "window W H", "stages S",
    then per stage "stage THRESH NWEAK", per weak classifier
    "weak FTHRESH LEAF_LO LEAF_HI NRECTS" and per rectangle
    "rect X Y W H WEIGHT". '#' starts a comment. Errors carry the
    offending line number.
    """
    lines = text.split("\n")
    items: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            items.append((lineno, stripped.split()))
    cursor = 0

    def take(expected: str, count: int) -> tuple[int, list[str]]:
        nonlocal cursor
        if cursor >= len(items):
            raise CascadeParseError(f"unexpected end of cascade, expected '{expected}'", len(lines))
        lineno, fields = items[cursor]
        cursor += 1
        if fields[0] != expected:
            raise CascadeParseError(f"expected '{expected}', found '{fields[0]}'", lineno)
        if len(fields) - 1 != count:
            raise CascadeParseError(
                f"'{expected}' takes {count} fields, found {len(fields) - 1}", lineno
            )
        return lineno, fields[1:]

    def parse_num(token: str, lineno: int, kind=float):
        try:
            return kind(token)
        except ValueError:
            raise CascadeParseError(f"bad number {token!r}", lineno) from None

    if cursor >= len(items):
        raise CascadeParseError("empty cascade", 1)
    lineno, fields = items[cursor]
    cursor += 1
    if fields != ["CASCADE", "v1"]:
        raise CascadeParseError("missing 'CASCADE v1' header", lineno)

    lineno, f = take("window", 2)
    window_w = parse_num(f[0], lineno, int)
    window_h = parse_num(f[1], lineno, int)
    lineno, f = take("stages", 1)
    n_stages = parse_num(f[0], lineno, int)
    if n_stages < 1:
        raise CascadeParseError("stage count must be >= 1", lineno)

    stages = []
    for _ in range(n_stages):
        lineno, f = take("stage", 2)
        s_thresh = parse_num(f[0], lineno)
        n_weak = parse_num(f[1], lineno, int)
        if n_weak < 1:
            raise CascadeParseError("weak count must be >= 1", lineno)
        weaks = []
        for _ in range(n_weak):
            lineno, f = take("weak", 4)
            w_thresh = parse_num(f[0], lineno)
            leaf_lo = parse_num(f[1], lineno)
            leaf_hi = parse_num(f[2], lineno)
            n_rects = parse_num(f[3], lineno, int)
            if n_rects < 1:
                raise CascadeParseError("rect count must be >= 1", lineno)
            rects = []
            for _ in range(n_rects):
                rect_line, f = take("rect", 5)
                rx = parse_num(f[0], rect_line, int)
                ry = parse_num(f[1], rect_line, int)
                rw = parse_num(f[2], rect_line, int)
                rh = parse_num(f[3], rect_line, int)
                rweight = parse_num(f[4], rect_line)
                if rx < 0 or ry < 0 or rw < 1 or rh < 1 or rx + rw > window_w or ry + rh > window_h:
                    raise CascadeParseError("rectangle outside the base window", rect_line)
                rects.append(HaarRect(rx, ry, rw, rh, rweight))
            weaks.append(WeakClassifier(w_thresh, leaf_lo, leaf_hi, tuple(rects)))
        stages.append(CascadeStage(s_thresh, tuple(weaks)))
    if cursor != len(items):
        raise CascadeParseError("trailing content after cascade", items[cursor][0])
    return CascadeModel(window_w, window_h, tuple(stages))


def serialize_cascade(model: CascadeModel) -> str:
    out = ["CASCADE v1", f"window {model.window_w} {model.window_h}", f"stages {len(model.stages)}"]
    for stage in model.stages:
        out.append(f"stage {stage.threshold!r} {len(stage.weaks)}")
        for weak in stage.weaks:
            out.append(
                f"weak {weak.threshold!r} {weak.leaf_below!r} {weak.leaf_above!r} {len(weak.rects)}"
            )
            for r in weak.rects:
                out.append(f"rect {r.x} {r.y} {r.w} {r.h} {r.weight!r}")
    return "\n".join(out) + "\n"


def load_cascade_file(path) -> CascadeModel:
    with open(path, "r", encoding="ascii") as fh:
        return parse_cascade(fh.read())


def _grid_rect_sums(table: np.ndarray, xs: np.ndarray, ys: np.ndarray, x: int, y: int, w: int, h: int):
    """rect_sum evaluated for every window origin in ys x xs at once."""
    return (
        table[np.ix_(ys + y + h, xs + x + w)]
        - table[np.ix_(ys + y, xs + x + w)]
        - table[np.ix_(ys + y + h, xs + x)]
        + table[np.ix_(ys + y, xs + x)]
    )


def scan_windows(
    img: GrayImage,
    model: CascadeModel,
    scale_factor: float = 1.1,
) -> list[tuple[int, int, int, int]]:
    """Run the cascade over every window; returns raw (x, y, w, h) hits.

    The base window is scaled by scale_factor^i while it fits within
    the image (window larger than the image yields an empty result).
    Rectangles and the scan step scale with the window. A window passes
    when every stage's leaf sum reaches that stage's threshold, with
    feature values divided by (window area * window intensity standard
    deviation, floored at 1).
    """
    if scale_factor <= 1.0:
        raise ConfigurationError("scale_factor must be > 1")

    pix = img.pixels
    ii = integral_image(img).sums.astype(np.float64)
    sq = np.zeros((img.height + 1, img.width + 1), dtype=np.float64)
    sq[1:, 1:] = np.cumsum(np.cumsum(pix.astype(np.int64) ** 2, axis=0), axis=1)

    hits: list[tuple[int, int, int, int]] = []
    f = 1.0
    while True:
        win_w = int(round(model.window_w * f))
        win_h = int(round(model.window_h * f))
        if win_w > img.width or win_h > img.height or win_w < 1 or win_h < 1:
            break
        step = max(1, int(round(f)))
        xs = np.arange(0, img.width - win_w + 1, step)
        ys = np.arange(0, img.height - win_h + 1, step)
        if xs.size and ys.size:
            area = float(win_w * win_h)
            total = _grid_rect_sums(ii, xs, ys, 0, 0, win_w, win_h)
            total_sq = _grid_rect_sums(sq, xs, ys, 0, 0, win_w, win_h)
            mean = total / area
            var = total_sq / area - mean * mean
            sigma = np.sqrt(np.maximum(var, 0.0))
            norm = area * np.maximum(sigma, 1.0)

            alive = np.ones(total.shape, dtype=bool)
            for stage in model.stages:
                stage_sum = np.zeros(total.shape)
                for weak in stage.weaks:
                    feat = np.zeros(total.shape)
                    for r in weak.rects:
                        sx = int(round(r.x * f))
                        sy = int(round(r.y * f))
                        sw = max(1, int(round(r.w * f)))
                        sh = max(1, int(round(r.h * f)))
                        sw = min(sw, win_w - sx)
                        sh = min(sh, win_h - sy)
                        feat += r.weight * _grid_rect_sums(ii, xs, ys, sx, sy, sw, sh)
                    value = feat / norm
                    stage_sum += np.where(value < weak.threshold, weak.leaf_below, weak.leaf_above)
                alive &= stage_sum >= stage.threshold
                if not alive.any():
                    break
            for yi, xi in zip(*np.nonzero(alive)):
                hits.append((int(xs[xi]), int(ys[yi]), win_w, win_h))
        f *= scale_factor
    return hits


def detect_objects(
    img: GrayImage,
    model: CascadeModel,
    scale_factor: float = 1.1,
    min_neighbors: int = 3,
) -> list[Detection]:
    """Scan a pyramid of window scales and group the raw hits.

    Raw hits from scan_windows are grouped by mutual >= 50% rectangle
    overlap; groups smaller than min_neighbors are dropped and each
    surviving group is returned as its mean rectangle.
    """
    if min_neighbors < 1:
        raise ConfigurationError("min_neighbors must be >= 1")
    return _group_hits(scan_windows(img, model, scale_factor), min_neighbors)


def _overlap_similar(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    return 2 * inter >= aw * ah and 2 * inter >= bw * bh


def _group_hits(hits, min_neighbors: int) -> list[Detection]:
    n = len(hits)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _overlap_similar(hits[i], hits[j]):
                parent[find(i)] = find(j)

    groups: dict[int, list[tuple[int, int, int, int]]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(hits[i])

    detections = []
    for members in groups.values():
        if len(members) < min_neighbors:
            continue
        arr = np.asarray(members, dtype=np.float64)
        mx, my, mw, mh = np.floor(arr.mean(axis=0) + 0.5).astype(int)
        detections.append(Detection(int(mx), int(my), int(mw), int(mh), len(members)))
    detections.sort(key=lambda d: (-d.neighbors, d.y, d.x))
    return detections


@dataclass(frozen=True)
class EyeGeometry:
    """Relative geometry of the two eye search regions."""

    left_x: float = 0.16
    top_y: float = 0.26
    width: float = 0.30
    height: float = 0.28

    def regions(self, face_w: int, face_h: int):
        w = int(round(self.width * face_w))
        h = int(round(self.height * face_h))
        lx = int(round(self.left_x * face_w))
        ly = int(round(self.top_y * face_h))
        lerr = (lx, ly, w, h)
        rerr = (face_w - lx - w, ly, w, h)
        return lerr, rerr


@dataclass(frozen=True)
class EyeRegions:
    """Eye search regions and located eye centers, in face coordinates.

    ``left_rect``/``right_rect`` are the detected eye rectangles and are
    None when centers come from annotations rather than detection.
    """

    lerr: tuple[int, int, int, int]
    rerr: tuple[int, int, int, int]
    left_center: tuple[float, float]
    right_center: tuple[float, float]
    left_rect: tuple[int, int, int, int] | None = None
    right_rect: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if (self.lerr[2], self.lerr[3]) != (self.rerr[2], self.rerr[3]):
            raise ValueError("eye regions must have identical dimensions")
        for center, region in ((self.left_center, self.lerr), (self.right_center, self.rerr)):
            x, y, w, h = region
            if not (x <= center[0] <= x + w and y <= center[1] <= y + h):
                raise ValueError("eye center outside its region")


def _best_detection(dets: list[Detection]) -> Detection:
    return min(dets, key=lambda d: (-d.neighbors, d.y, d.x, d.w, d.h))


def locate_eyes(
    face: GrayImage,
    eye_model: CascadeModel,
    geometry: EyeGeometry = EyeGeometry(),
    scale_factor: float = 1.1,
    min_neighbors: int = 1,
) -> EyeRegions:
    """Detect one eye in each search region of a face image.

    Raises EyeNotFoundError naming the side whose region yields no
    detection. Eye centers are the centers of the detected rectangles
    offset into face coordinates.
    """
    lerr, rerr = geometry.regions(face.width, face.height)
    found = {}
    rects = {}
    for side, region in (("left", lerr), ("right", rerr)):
        x0, y0, w, h = region
        crop = GrayImage(face.pixels[y0 : y0 + h, x0 : x0 + w])
        dets = detect_objects(crop, eye_model, scale_factor, min_neighbors)
        if not dets:
            raise EyeNotFoundError(side)
        best = _best_detection(dets)
        rects[side] = (x0 + best.x, y0 + best.y, best.w, best.h)
        found[side] = (x0 + best.x + best.w / 2.0, y0 + best.y + best.h / 2.0)
    return EyeRegions(
        lerr=lerr,
        rerr=rerr,
        left_center=found["left"],
        right_center=found["right"],
        left_rect=rects["left"],
        right_rect=rects["right"],
    )


def eye_regions_from_annotation(
    left_center: tuple[float, float],
    right_center: tuple[float, float],
    face_w: int,
    face_h: int,
    geometry: EyeGeometry = EyeGeometry(),
) -> EyeRegions:
    """Build EyeRegions from known eye centers, bypassing detection.

    The regions are identical-size boxes centered on each annotation so
    the region invariants hold without running a cascade.
    """
    w = max(1, int(round(geometry.width * face_w)))
    h = max(1, int(round(geometry.height * face_h)))

    def box(center):
        return (int(math.floor(center[0] - w / 2.0)), int(math.floor(center[1] - h / 2.0)), w, h)

    return EyeRegions(
        lerr=box(left_center), rerr=box(right_center),
        left_center=tuple(left_center), right_center=tuple(right_center),
    )


def parse_eye_annotation(text: str) -> tuple[tuple[float, float], tuple[float, float]]:
    """Parse an eye sidecar: one line "LX LY RX RY" in pixel coordinates.

    Left means the subject's image-left (smaller x).
    """
    fields = text.split()
    if len(fields) != 4:
        raise FormatError(f"eye annotation needs 4 fields, found {len(fields)}")
    try:
        lx, ly, rx, ry = (float(v) for v in fields)
    except ValueError:
        raise FormatError("eye annotation fields must be numbers") from None
    return (lx, ly), (rx, ry)


def load_eye_annotation_file(path) -> tuple[tuple[float, float], tuple[float, float]]:
    with open(path, "r", encoding="ascii") as fh:
        return parse_eye_annotation(fh.read())


@dataclass(frozen=True)
class FaceValidity:
    valid: bool
    reason: str | None = None


def validate_face(face_found: bool, eyes: EyeRegions | None) -> FaceValidity:
    """A sample is valid only when a face and both eyes were found."""
    if not face_found:
        return FaceValidity(False, "no-face")
    if eyes is None:
        return FaceValidity(False, "missing-eye")
    return FaceValidity(True, None)
