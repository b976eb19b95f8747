"""Loopback TCP authentication service and the shared enrollment and
decision library behind it.

The wire protocol is one JSON object per envelope, framed by a 4-byte
big-endian payload length (64 MiB cap). Requests carry `type` and
`request_id`; responses echo the `request_id` and set `status` to "ok"
or an error code. The command line and the service call the same
`register_samples` / `authenticate_samples` functions, so a decision
reached over the wire is bit for bit the decision a direct library
call produces on the same bytes.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .config import Config
from .errors import BimodalAuthError, InsufficientDataError
from .eigenfaces import EigenModel, FaceTemplate, mean_template, project
from .face_detect import eye_regions_from_annotation
from .face_pipeline import CanonicalFace, acquire_canonical_face
from .fusion import FusionDecision, fuse_pair, normalize_double_sigmoid
from .imaging import load_pgm
from .profile_store import (
    MANIFEST_NAME,
    ProfileExistsError,
    ProfileStore,
    UserProfile,
    rebuild_model,
)
from .speech_features import MfccSequence, extract_mfcc, load_wav
from .vq_model import Codebook, codebook_distance, lbg_train

log = logging.getLogger(__name__)

MAX_ENVELOPE_BYTES = 64 * 1024 * 1024
_HEADER = struct.Struct("!I")


class NoEnrolledUsersError(BimodalAuthError):
    """The store holds no complete profile to authenticate against."""


class ModelStaleError(BimodalAuthError):
    """The shared face model is missing or older than the enrollments."""


class UnknownUserError(BimodalAuthError):
    """A claimed identity is not enrolled."""


class SampleRejectedError(BimodalAuthError):
    """A submitted sample failed decoding or preprocessing."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class EnvelopeError(BimodalAuthError):
    """Protocol-level failure; carries the wire error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# framing


def write_envelope(stream, payload: dict) -> None:
    data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(_HEADER.pack(len(data)) + data)
    stream.flush()


def _read_exact(stream, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_envelope(stream, max_bytes: int = MAX_ENVELOPE_BYTES) -> dict | None:
    """Read one framed JSON object; None on clean end of stream."""
    header = _read_exact(stream, _HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise EnvelopeError("bad-envelope", "truncated length prefix")
    (length,) = _HEADER.unpack(header)
    if length > max_bytes:
        raise EnvelopeError("envelope-too-large", f"declared {length} bytes, cap is {max_bytes}")
    body = _read_exact(stream, length)
    if len(body) < length:
        raise EnvelopeError("bad-envelope", "connection closed mid-payload")
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EnvelopeError("bad-envelope", f"payload is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise EnvelopeError("bad-envelope", "payload must be a JSON object")
    return payload


# ---------------------------------------------------------------------------
# sample decoding


def _b64(data, what: str) -> bytes:
    if not isinstance(data, str):
        raise SampleRejectedError("bad-encoding", f"{what} must be a base64 string")
    try:
        return base64.b64decode(data.encode("ascii"), validate=True)
    except (UnicodeEncodeError, binascii.Error) as exc:
        raise SampleRejectedError("bad-encoding", f"{what}: {exc}") from None


def decode_face_sample(entry, config: Config, face_model=None, eye_model=None,
                       source_id: str = "") -> CanonicalFace:
    """Decode one wire face sample into a canonical face.

    The entry is either a base64 PGM string (detector path) or an
    object ``{"data": <base64 PGM>, "eyes": [lx, ly, rx, ry]}`` that
    pins the eye centers and bypasses detection.
    """
    eyes = None
    if isinstance(entry, dict):
        raw = _b64(entry.get("data"), "face data")
        annotation = entry.get("eyes")
        if annotation is not None:
            if (not isinstance(annotation, (list, tuple)) or len(annotation) != 4
                    or not all(isinstance(v, (int, float)) for v in annotation)):
                raise SampleRejectedError("bad-annotation", "eyes must be [lx, ly, rx, ry]")
    else:
        raw = _b64(entry, "face data")
        annotation = None
    try:
        img = load_pgm(raw)
    except BimodalAuthError as exc:
        raise SampleRejectedError("bad-pgm", str(exc)) from None
    if annotation is not None:
        lx, ly, rx, ry = (float(v) for v in annotation)
        try:
            eyes = eye_regions_from_annotation(
                (lx, ly), (rx, ry), img.width, img.height, config.face.eye_geometry()
            )
        except BimodalAuthError as exc:
            raise SampleRejectedError("bad-annotation", str(exc)) from None
    elif face_model is None or eye_model is None:
        raise SampleRejectedError(
            "missing-eye", "sample has no eye annotation and no detector cascades are configured"
        )
    try:
        return acquire_canonical_face(
            img, eyes, face_model, eye_model,
            eye_geometry=config.face.eye_geometry(),
            params=config.face.canonical_params(),
            bilateral=config.face.bilateral_params(),
            scaling_width=config.face.scaling_width,
            source_id=source_id,
        )
    except BimodalAuthError as exc:
        reason = "no-face" if "face" in str(exc).lower() else "missing-eye"
        raise SampleRejectedError(reason, str(exc)) from None


def decode_voice_sample(entry, config: Config) -> MfccSequence:
    raw = _b64(entry, "voice data")
    try:
        signal = load_wav(raw)
    except BimodalAuthError as exc:
        raise SampleRejectedError("bad-wav", str(exc)) from None
    if signal.rate != config.voice.rate:
        raise SampleRejectedError(
            "rate-mismatch", f"rate {signal.rate} != configured {config.voice.rate}"
        )
    if signal.samples.size < config.voice.frame_length:
        raise SampleRejectedError("too-short", "need at least one full frame")
    return extract_mfcc(signal, config.voice.mfcc_params())


# ---------------------------------------------------------------------------
# shared library operations


@dataclass(frozen=True)
class AuthOutcome:
    """One authentication decision with its matched user and scores."""

    decision: FusionDecision
    matched_user: str
    face_distance: float
    voice_distance: float

    @property
    def accepted(self) -> bool:
        return self.decision.accepted


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable view of the store's model and enrolled users."""

    model: EigenModel
    templates: dict
    codebooks: dict
    fingerprint: str

    @property
    def user_ids(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.templates) & set(self.codebooks)))


def store_fingerprint(store: ProfileStore) -> str:
    path = store.root / MANIFEST_NAME
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except FileNotFoundError:
        return "absent"


def load_snapshot(store: ProfileStore) -> ModelSnapshot:
    """Load the current model and every complete profile.

    Raises NoEnrolledUsersError on an empty store and ModelStaleError
    when enrollments are newer than the shared face model (or no model
    has been trained yet).
    """
    fingerprint = store_fingerprint(store)
    manifest = store.list_profiles()
    if not manifest.users:
        raise NoEnrolledUsersError("no enrolled users in store")
    exists, stale = store.model_state()
    if not exists or stale:
        raise ModelStaleError("face model is stale; run train-model")
    model = store.load_eigenmodel()
    templates = {}
    codebooks = {}
    for user_id, complete in manifest.users:
        if not complete:
            continue
        profile = store.load_profile(user_id)
        if profile.face_template is None or profile.voice_codebook is None:
            continue
        templates[user_id] = profile.face_template
        codebooks[user_id] = profile.voice_codebook
    if not templates:
        raise NoEnrolledUsersError("store has profiles but none are complete")
    return ModelSnapshot(
        model=model, templates=templates, codebooks=codebooks, fingerprint=fingerprint
    )


def register_samples(
    store: ProfileStore,
    user_id: str,
    faces,
    voice_features,
    config: Config | None = None,
    overwrite: bool = False,
) -> UserProfile:
    """Enroll a user from canonical faces and MFCC sequences.

    Counts below the configured enrollment minimums are rejected;
    surplus samples beyond the maximums are dropped from the end.
    Stores the faces and the trained voice codebook, then flags the
    shared face model stale; templates appear on the next train-model.
    """
    config = config or Config()
    faces = list(faces)
    voice_features = list(voice_features)
    if len(faces) < config.face.enroll_min:
        raise InsufficientDataError(
            f"need at least {config.face.enroll_min} valid face samples, got {len(faces)}"
        )
    if len(voice_features) < config.voice.enroll_min:
        raise InsufficientDataError(
            f"need at least {config.voice.enroll_min} valid voice samples, got {len(voice_features)}"
        )
    faces = faces[: config.face.enroll_max]
    voice_features = voice_features[: config.voice.enroll_max]

    vectors = np.vstack([seq.vectors for seq in voice_features])
    codebook = lbg_train(vectors, config.voice.codebook_size, owner=user_id)
    profile = UserProfile(
        user_id=user_id,
        face_template=None,
        voice_codebook=codebook,
        enrollment_faces=tuple(faces),
        voice_sample_count=len(voice_features),
        created=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
    store.save_profile(profile, overwrite=overwrite)
    return profile


def evaluate_probe(
    snapshot: ModelSnapshot,
    face,
    voice_features: MfccSequence,
    config: Config | None = None,
    claimed_user: str | None = None,
) -> AuthOutcome:
    """Score one face/voice probe against a model snapshot.

    Identification scores every enrolled user and keeps the one with
    the lowest fused score (ties break toward the lexicographically
    first user id); verification restricts the candidate set to the
    claimed user. Accept means the winning fused score falls below the
    configured threshold.
    """
    config = config or Config()
    params = config.fusion.fusion_params()
    users = snapshot.user_ids
    if claimed_user is not None:
        if claimed_user not in users:
            raise UnknownUserError(f"user {claimed_user!r} is not enrolled")
        users = (claimed_user,)
    if not users:
        raise NoEnrolledUsersError("no complete profiles to match against")

    coefficients = face if isinstance(face, np.ndarray) else project(snapshot.model, face)
    best_user = None
    best_fused = None
    best_pair = None
    for user in users:
        face_d = float(np.linalg.norm(snapshot.templates[user].coefficients - coefficients))
        voice_d = codebook_distance(voice_features, snapshot.codebooks[user])
        fused = fuse_pair(face_d, voice_d, params).fused
        if best_fused is None or fused < best_fused:
            best_user = user
            best_fused = fused
            best_pair = (face_d, voice_d)
    decision = fuse_pair(best_pair[0], best_pair[1], params)
    return AuthOutcome(
        decision=decision,
        matched_user=best_user,
        face_distance=best_pair[0],
        voice_distance=best_pair[1],
    )


def authenticate_samples(
    store: ProfileStore,
    face,
    voice_features: MfccSequence,
    config: Config | None = None,
    claimed_user: str | None = None,
    snapshot: ModelSnapshot | None = None,
) -> AuthOutcome:
    """Authenticate one probe straight off the store."""
    if snapshot is None:
        snapshot = load_snapshot(store)
    return evaluate_probe(snapshot, face, voice_features, config, claimed_user)


def train_store_model(store: ProfileStore) -> EigenModel:
    """Rebuild the shared face model and refresh every template."""
    return rebuild_model(store)


# ---------------------------------------------------------------------------
# server


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service = self.server.service  # type: ignore[attr-defined]
        while True:
            try:
                payload = read_envelope(self.rfile, service.max_envelope_bytes)
            except EnvelopeError as exc:
                write_envelope(self.wfile, {"status": exc.code, "message": str(exc)})
                return
            if payload is None:
                return
            response = service.handle_payload(payload)
            write_envelope(self.wfile, response)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class AuthServer:
    """TCP front end over a profile store.

    Registrations and model training serialize on a store-level write
    lock; authentications run lock-free against an immutable snapshot
    that is reloaded whenever the store manifest changes on disk.
    """

    def __init__(self, config: Config | None = None, store: ProfileStore | None = None,
                 face_model=None, eye_model=None):
        self.config = config or Config()
        self.store = store or ProfileStore(self.config.store_path)
        self.face_model = face_model
        self.eye_model = eye_model
        self.max_envelope_bytes = self.config.service.max_envelope_bytes
        self._write_lock = threading.Lock()
        self._snapshot_lock = threading.Lock()
        self._snapshot: ModelSnapshot | None = None
        self._server: _Server | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle

    def start(self) -> tuple[str, int]:
        """Bind and serve on a background thread; returns (host, port)."""
        if self._server is not None:
            raise RuntimeError("server already started")
        address = (self.config.service.listen_host, self.config.service.listen_port)
        self._server = _Server(address, _Handler)
        self._server.service = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("server not started")
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    def wait(self, timeout: float | None = None) -> None:
        """Block until the serving thread exits (or the timeout lapses)."""
        if self._thread is not None:
            self._thread.join(timeout)

    def stop(self) -> None:
        if self._server is None:
            return
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self._server = None
        self._thread = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc_info):
        self.stop()

    # -- snapshot cache

    def _snapshot_current(self) -> ModelSnapshot:
        key = store_fingerprint(self.store)
        with self._snapshot_lock:
            if self._snapshot is not None and self._snapshot.fingerprint == key:
                return self._snapshot
        fresh = load_snapshot(self.store)
        with self._snapshot_lock:
            self._snapshot = fresh
        return fresh

    # -- dispatch

    def handle_payload(self, payload: dict) -> dict:
        request_id = payload.get("request_id")
        kind = payload.get("type")
        try:
            if kind == "register":
                body = self._handle_register(payload)
            elif kind == "authenticate":
                body = self._handle_authenticate(payload)
            elif kind == "train_model":
                body = self._handle_train(payload)
            else:
                body = {"status": "bad-envelope", "message": f"unknown request type {kind!r}"}
        except BimodalAuthError as exc:
            body = {"status": _error_code(exc), "message": str(exc)}
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("request failed")
            body = {"status": "internal-error", "message": str(exc)}
        body["request_id"] = request_id
        return body

    def _handle_register(self, payload: dict) -> dict:
        user_id = payload.get("user_id")
        if not isinstance(user_id, str):
            return {"status": "bad-envelope", "message": "register needs a string user_id"}
        face_entries = payload.get("face_samples")
        voice_entries = payload.get("voice_samples")
        if not isinstance(face_entries, list) or not isinstance(voice_entries, list):
            return {"status": "bad-envelope",
                    "message": "register needs face_samples and voice_samples lists"}

        rejected = []
        faces = []
        for i, entry in enumerate(face_entries):
            try:
                faces.append(
                    decode_face_sample(entry, self.config, self.face_model, self.eye_model,
                                       source_id=f"wire:face:{i}")
                )
            except SampleRejectedError as exc:
                rejected.append({"modality": "face", "index": i, "reason": exc.reason,
                                 "message": str(exc)})
        voice_features = []
        for i, entry in enumerate(voice_entries):
            try:
                voice_features.append(decode_voice_sample(entry, self.config))
            except SampleRejectedError as exc:
                rejected.append({"modality": "voice", "index": i, "reason": exc.reason,
                                 "message": str(exc)})

        try:
            with self._write_lock:
                if self.store.has_profile(user_id):
                    return {"status": "user-exists",
                            "message": f"user {user_id!r} already enrolled",
                            "rejected_samples": rejected}
                profile = register_samples(self.store, user_id, faces, voice_features, self.config)
        except ValueError as exc:
            return {"status": "invalid-user-id", "message": str(exc), "rejected_samples": rejected}
        except InsufficientDataError as exc:
            return {"status": "too-few-valid-samples", "message": str(exc),
                    "rejected_samples": rejected}
        return {
            "status": "ok",
            "user_id": user_id,
            "face_samples": len(profile.enrollment_faces),
            "voice_samples": profile.voice_sample_count,
            "rejected_samples": rejected,
            "model_stale": True,
        }

    def _handle_authenticate(self, payload: dict) -> dict:
        claimed = payload.get("claimed_user_id")
        if claimed is not None and not isinstance(claimed, str):
            return {"status": "bad-envelope", "message": "claimed_user_id must be a string"}
        if "face_sample" not in payload or "voice_sample" not in payload:
            return {"status": "bad-envelope",
                    "message": "authenticate needs face_sample and voice_sample"}
        try:
            face = decode_face_sample(payload["face_sample"], self.config,
                                      self.face_model, self.eye_model, source_id="wire:face")
            voice = decode_voice_sample(payload["voice_sample"], self.config)
        except SampleRejectedError as exc:
            return {"status": "invalid-sample", "message": str(exc), "reason": exc.reason}
        snapshot = self._snapshot_current()
        outcome = evaluate_probe(snapshot, face, voice, self.config, claimed)
        scores = {s.modality: s for s in outcome.decision.scores}
        return {
            "status": "ok",
            "decision": "accept" if outcome.accepted else "reject",
            "matched_user": outcome.matched_user,
            "fused_score": outcome.decision.fused,
            "face_score": scores["face"].normalized,
            "voice_score": scores["voice"].normalized,
            "face_distance": outcome.face_distance,
            "voice_distance": outcome.voice_distance,
        }

    def _handle_train(self, payload: dict) -> dict:
        with self._write_lock:
            model = train_store_model(self.store)
        return {
            "status": "ok",
            "components": model.n_components,
            "training_size": model.training_size,
        }


def _error_code(exc: BimodalAuthError) -> str:
    if isinstance(exc, NoEnrolledUsersError):
        return "no-enrolled-users"
    if isinstance(exc, ModelStaleError):
        return "model-stale"
    if isinstance(exc, UnknownUserError):
        return "unknown-user"
    if isinstance(exc, EnvelopeError):
        return exc.code
    if isinstance(exc, ProfileExistsError):
        return "user-exists"
    if isinstance(exc, InsufficientDataError):
        return "too-few-valid-samples"
    return "error"


# ---------------------------------------------------------------------------
# client helper


class AuthClient:
    """Small blocking client for tests and the command line."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")
        self._next_id = 0

    def request(self, kind: str, **fields) -> dict:
        self._next_id += 1
        payload = {"type": kind, "request_id": self._next_id, **fields}
        write_envelope(self._wfile, payload)
        response = read_envelope(self._rfile)
        if response is None:
            raise EnvelopeError("bad-envelope", "server closed the connection")
        return response

    def close(self) -> None:
        try:
            self._rfile.close()
            self._wfile.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
