"""Speaker modeling by vector quantization of cepstral features.

A speaker's codebook is trained by binary splitting: start from the
single global-mean codeword, split every codeword c into c*(1 +/- 0.01)
and refine with Lloyd iterations until the relative distortion
improvement drops below 1e-6 (or 100 iterations), repeating until the
codebook reaches its target size (a power of two, default 8). Cells
that empty out are re-seeded at the currently worst-quantized vector.

Training distortion is the mean squared nearest-codeword distance.
Probe matching uses the mean (not squared) nearest-codeword Euclidean
distance; the probe is accepted when the best enrolled codebook lies
below the decision threshold (default 2.6), with distance ties going
to the lexicographically smaller user id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError, InsufficientDataError
from .speech_features import MfccSequence

DEFAULT_CODEBOOK_SIZE = 8
DEFAULT_VOICE_THRESHOLD = 2.6
SPLIT_EPSILON = 0.01
LLOYD_REL_TOL = 1e-6
LLOYD_MAX_ITERATIONS = 100

_CODEBOOK_MAGIC = b"VQCB"
_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Codebook:
    """Trained codebook with its final training distortion.

    ``lloyd_distortions`` holds one tuple per Lloyd refinement stage
    (one stage per codebook doubling); within a stage the sequence is
    non-increasing.
    """

    codewords: np.ndarray
    distortion: float
    owner: str = ""
    lloyd_distortions: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        arr = np.asarray(self.codewords, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("codewords must form a non-empty 2-D array")
        arr.setflags(write=False)
        object.__setattr__(self, "codewords", arr)

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dimension(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True)
class VoiceMatch:
    user_id: str
    distance: float
    accepted: bool


def _as_vectors(data) -> np.ndarray:
    if isinstance(data, MfccSequence):
        return data.vectors
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("training data must be a 2-D array of vectors")
    return arr


def _sq_distances(vectors: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - codewords[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _lloyd(vectors: np.ndarray, codewords: np.ndarray):
    """Refine codewords in place; returns (codewords, distortion, history)."""
    history = []
    prev = None
    for _ in range(LLOYD_MAX_ITERATIONS):
        sq = _sq_distances(vectors, codewords)
        labels = np.argmin(sq, axis=1)
        distortion = float(sq[np.arange(len(vectors)), labels].mean())
        history.append(distortion)
        if prev is not None:
            if prev == 0.0 or (prev - distortion) < LLOYD_REL_TOL * prev:
                break
        prev = distortion

        new_words = codewords.copy()
        empty = []
        for k in range(codewords.shape[0]):
            members = vectors[labels == k]
            if len(members):
                new_words[k] = members.mean(axis=0)
            else:
                empty.append(k)
        for k in empty:
            # re-seed dead cells at the worst-quantized vector
            nearest = _sq_distances(vectors, new_words).min(axis=1)
            new_words[k] = vectors[int(np.argmax(nearest))]
        codewords = new_words
    sq = _sq_distances(vectors, codewords)
    distortion = float(sq.min(axis=1).mean())
    return codewords, distortion, history


def lbg_train(
    training_vectors,
    codebook_size: int = DEFAULT_CODEBOOK_SIZE,
    owner: str = "",
) -> Codebook:
    """Train a codebook by binary splitting plus Lloyd refinement."""
    vectors = _as_vectors(training_vectors)
    if vectors.shape[0] < 1:
        raise InsufficientDataError("codebook training needs at least one vector")
    if codebook_size < 1 or codebook_size & (codebook_size - 1):
        raise ConfigurationError(f"codebook size {codebook_size} is not a power of two")

    codewords = vectors.mean(axis=0)[None, :]
    distortion = float(_sq_distances(vectors, codewords).min(axis=1).mean())
    stages = []
    while codewords.shape[0] < codebook_size:
        codewords = np.concatenate(
            [codewords * (1.0 + SPLIT_EPSILON), codewords * (1.0 - SPLIT_EPSILON)]
        )
        codewords, distortion, stage_history = _lloyd(vectors, codewords)
        stages.append(tuple(stage_history))
    return Codebook(
        codewords=codewords, distortion=distortion, owner=owner,
        lloyd_distortions=tuple(stages),
    )


def codebook_distance(probe, codebook: Codebook) -> float:
    """Mean nearest-codeword Euclidean distance of the probe vectors."""
    vectors = _as_vectors(probe)
    if vectors.shape[0] < 1:
        raise InsufficientDataError("probe must contain at least one vector")
    if vectors.shape[1] != codebook.dimension:
        raise ValueError(
            f"probe dimension {vectors.shape[1]} does not match codebook {codebook.dimension}"
        )
    sq = _sq_distances(vectors, codebook.codewords)
    return float(np.sqrt(sq.min(axis=1)).mean())


def match_voice(codebooks, probe, threshold: float = DEFAULT_VOICE_THRESHOLD) -> VoiceMatch:
    """Identify the probe against enrolled codebooks (lowest mean distance)."""
    books = list(codebooks)
    if not books:
        raise InsufficientDataError("no enrolled codebooks")
    best_id = None
    best_dist = None
    for book in sorted(books, key=lambda b: b.owner):
        d = codebook_distance(probe, book)
        if best_dist is None or d < best_dist:
            best_id, best_dist = book.owner, d
    return VoiceMatch(user_id=best_id, distance=best_dist, accepted=best_dist < threshold)


def encode_codebook(codebook: Codebook) -> bytes:
    """Little-endian binary record; layout in docs/FORMATS.md."""
    uid = codebook.owner.encode("utf-8")
    head = _CODEBOOK_MAGIC + struct.pack("<IH", _FORMAT_VERSION, len(uid)) + uid
    head += struct.pack("<IId", codebook.size, codebook.dimension, codebook.distortion)
    return head + codebook.codewords.astype("<f8").tobytes()


def decode_codebook(data: bytes) -> Codebook:
    if data[:4] != _CODEBOOK_MAGIC:
        raise FormatError(f"bad codebook magic {data[:4]!r}")
    version, id_len = struct.unpack_from("<IH", data, 4)
    if version > _FORMAT_VERSION:
        raise FormatError(f"codebook format version {version} is newer than supported ({_FORMAT_VERSION})")
    offset = 10
    uid = data[offset : offset + id_len].decode("utf-8")
    offset += id_len
    size, dim, distortion = struct.unpack_from("<IId", data, offset)
    offset += 16
    if len(data) < offset + 8 * size * dim:
        raise FormatError("truncated codebook record")
    words = np.frombuffer(data, dtype="<f8", count=size * dim, offset=offset).reshape(size, dim)
    return Codebook(codewords=words.copy(), distortion=distortion, owner=uid)


def export_codebook_text(codebook: Codebook) -> str:
    """One codeword per line, space-separated full-precision decimals."""
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in codebook.codewords) + "\n"
