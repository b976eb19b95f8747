"""Principal-component face recognition over canonical face rasters.

Training uses the snapshot method: for M training faces the M x M Gram
matrix of mean-centered images is eigendecomposed and its eigenvectors
are lifted back to pixel space, which is equivalent to (and far cheaper
than) decomposing the full pixel covariance C = A^T A / M. Components
whose eigenvalue is at most 1e-8 of the largest are dropped, so a model
holds at most M - 1 components.

Faces are compared by Euclidean distance between their coefficient
vectors (projections onto the retained components), which equals the
Frobenius distance between the corresponding reconstructions. A probe
is accepted when its distance to the nearest enrolled template falls
below the decision threshold (default 2800).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BimodalAuthError, FormatError, InsufficientDataError
from .face_pipeline import CanonicalFace
from .imaging import GrayImage

EIGENVALUE_FLOOR_RATIO = 1e-8
DEFAULT_FACE_THRESHOLD = 2800.0

_MODEL_MAGIC = b"EIGM"
_TEMPLATE_MAGIC = b"FTPL"
_FORMAT_VERSION = 1


class DegenerateModelError(BimodalAuthError):
    """The model retained no components (zero training variance)."""


@dataclass(frozen=True, eq=False)
class EigenModel:
    """Trained projection basis.

    eigenvectors is (n_components, dim) with orthonormal rows;
    eigenvalues is non-increasing and positive. ``shape`` is the face
    raster shape the model was trained on.
    """

    mean: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    shape: tuple[int, int]
    training_size: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        vals = np.asarray(self.eigenvalues, dtype=np.float64)
        dim = self.shape[0] * self.shape[1]
        if mean.shape != (dim,):
            raise ValueError("mean length must match the face shape")
        if vecs.ndim != 2 or vecs.shape[1] != dim or vecs.shape[0] != vals.shape[0]:
            raise ValueError("eigenvector/eigenvalue shapes disagree")
        if vals.size and (np.any(vals < 0) or np.any(np.diff(vals) > 0)):
            raise ValueError("eigenvalues must be non-increasing and non-negative")
        for arr in (mean, vecs, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n_components(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.n_components == 0


@dataclass(frozen=True, eq=False)
class FaceTemplate:
    """Enrolled identity: mean coefficient vector of the user's faces."""

    user_id: str
    coefficients: np.ndarray
    sample_count: int

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if coeffs.ndim != 1:
            raise ValueError("template coefficients must be a vector")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)


@dataclass(frozen=True)
class FaceMatch:
    user_id: str
    distance: float
    accepted: bool


def _face_pixels(face) -> np.ndarray:
    if isinstance(face, CanonicalFace):
        return face.image.pixels
    if isinstance(face, GrayImage):
        return face.pixels
    return np.asarray(face)


def train_eigenmodel(faces) -> EigenModel:
    """Train a model from same-shape face rasters (snapshot method)."""
    if len(faces) < 2:
        raise InsufficientDataError("eigenmodel training needs at least 2 faces")
    rasters = [_face_pixels(f) for f in faces]
    shape = rasters[0].shape
    if any(r.shape != shape for r in rasters):
        raise ValueError("training faces must share one shape")

    m = len(rasters)
    x = np.stack([r.astype(np.float64).ravel() for r in rasters])
    mean = x.mean(axis=0)
    centered = x - mean

    gram = centered @ centered.T / m
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]

    lam_max = evals[0] if evals.size else 0.0
    keep_vals = []
    keep_vecs = []
    for lam, u in zip(evals, evecs.T):
        if lam <= EIGENVALUE_FLOOR_RATIO * lam_max or lam <= 0.0:
            continue
        v = centered.T @ u
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v = v / norm
        # sign convention: the largest-magnitude entry is positive
        peak = np.argmax(np.abs(v))
        if v[peak] < 0:
            v = -v
        keep_vals.append(lam)
        keep_vecs.append(v)

    if keep_vecs:
        vectors = np.stack(keep_vecs)
        values = np.asarray(keep_vals)
    else:
        dim = shape[0] * shape[1]
        vectors = np.zeros((0, dim))
        values = np.zeros(0)
    return EigenModel(mean=mean, eigenvectors=vectors, eigenvalues=values, shape=shape, training_size=m)


def project(model: EigenModel, face) -> np.ndarray:
    """Coefficients of ``face`` in the model's component basis."""
    if model.degenerate:
        raise DegenerateModelError("model retained no components")
    flat = _face_pixels(face).astype(np.float64).ravel()
    if flat.shape != model.mean.shape:
        raise ValueError("face shape does not match the model")
    return model.eigenvectors @ (flat - model.mean)


def reconstruct(model: EigenModel, coefficients: np.ndarray) -> np.ndarray:
    """Pixel-space reconstruction mean + sum(c_i * v_i), as float64."""
    coeffs = np.asarray(coefficients, dtype=np.float64)
    return (model.mean + coeffs @ model.eigenvectors).reshape(model.shape)


def mean_template(model: EigenModel, user_id: str, faces) -> FaceTemplate:
    """Template = mean of the faces' coefficient vectors."""
    if not faces:
        raise InsufficientDataError("at least one face is required")
    coeffs = np.stack([project(model, f) for f in faces])
    return FaceTemplate(user_id=user_id, coefficients=coeffs.mean(axis=0), sample_count=len(faces))


def enroll_face(
    model: EigenModel,
    user_id: str,
    faces,
    min_samples: int = 20,
    max_samples: int = 30,
) -> FaceTemplate:
    """Enroll a user from their training faces, enforcing the count range."""
    if not min_samples <= len(faces) <= max_samples:
        raise InsufficientDataError(
            f"enrollment needs {min_samples}..{max_samples} faces, got {len(faces)}"
        )
    return mean_template(model, user_id, faces)


def nearest_template(templates, coefficients: np.ndarray) -> tuple[str, float]:
    """Closest template by Euclidean coefficient distance.

    Ties resolve to the lexicographically smaller user id.
    """
    if not templates:
        raise InsufficientDataError("no enrolled templates")
    ordered = sorted(templates, key=lambda t: t.user_id)
    best_id = None
    best_dist = None
    for t in ordered:
        if t.coefficients.shape != coefficients.shape:
            raise ValueError("template dimensionality does not match the model")
        d = float(np.linalg.norm(t.coefficients - coefficients))
        if best_dist is None or d < best_dist:
            best_id, best_dist = t.user_id, d
    return best_id, best_dist


def match_face(
    model: EigenModel,
    templates,
    probe,
    threshold: float = DEFAULT_FACE_THRESHOLD,
) -> FaceMatch:
    """Identify ``probe`` against enrolled templates."""
    coeffs = probe if isinstance(probe, np.ndarray) else project(model, probe)
    user_id, distance = nearest_template(templates, coeffs)
    return FaceMatch(user_id=user_id, distance=distance, accepted=distance < threshold)


def encode_eigenmodel(model: EigenModel) -> bytes:
    """Little-endian binary record; layout in docs/FORMATS.md."""
    head = _MODEL_MAGIC + struct.pack(
        "<IIIII", _FORMAT_VERSION, model.shape[0], model.shape[1],
        model.n_components, model.training_size,
    )
    body = (
        model.mean.astype("<f8").tobytes()
        + model.eigenvalues.astype("<f8").tobytes()
        + model.eigenvectors.astype("<f8").tobytes()
    )
    return head + body


def decode_eigenmodel(data: bytes) -> EigenModel:
    if data[:4] != _MODEL_MAGIC:
        raise FormatError(f"bad eigenmodel magic {data[:4]!r}")
    version, rows, cols, n_comp, train_size = struct.unpack_from("<IIIII", data, 4)
    if version > _FORMAT_VERSION:
        raise FormatError(f"eigenmodel format version {version} is newer than supported ({_FORMAT_VERSION})")
    dim = rows * cols
    offset = 4 + 20
    need = offset + 8 * (dim + n_comp + n_comp * dim)
    if len(data) < need:
        raise FormatError("truncated eigenmodel record")
    mean = np.frombuffer(data, dtype="<f8", count=dim, offset=offset)
    offset += 8 * dim
    values = np.frombuffer(data, dtype="<f8", count=n_comp, offset=offset)
    offset += 8 * n_comp
    vectors = np.frombuffer(data, dtype="<f8", count=n_comp * dim, offset=offset).reshape(n_comp, dim)
    return EigenModel(
        mean=mean.copy(), eigenvectors=vectors.copy(), eigenvalues=values.copy(),
        shape=(rows, cols), training_size=train_size,
    )


def encode_face_template(template: FaceTemplate) -> bytes:
    uid = template.user_id.encode("utf-8")
    head = _TEMPLATE_MAGIC + struct.pack("<IH", _FORMAT_VERSION, len(uid)) + uid
    head += struct.pack("<II", template.coefficients.size, template.sample_count)
    return head + template.coefficients.astype("<f8").tobytes()


def decode_face_template(data: bytes) -> FaceTemplate:
    if data[:4] != _TEMPLATE_MAGIC:
        raise FormatError(f"bad face template magic {data[:4]!r}")
    version, id_len = struct.unpack_from("<IH", data, 4)
    if version > _FORMAT_VERSION:
        raise FormatError(f"template format version {version} is newer than supported ({_FORMAT_VERSION})")
    offset = 10
    uid = data[offset : offset + id_len].decode("utf-8")
    offset += id_len
    n_coeffs, sample_count = struct.unpack_from("<II", data, offset)
    offset += 8
    if len(data) < offset + 8 * n_coeffs:
        raise FormatError("truncated face template record")
    coeffs = np.frombuffer(data, dtype="<f8", count=n_coeffs, offset=offset)
    return FaceTemplate(user_id=uid, coefficients=coeffs.copy(), sample_count=sample_count)
