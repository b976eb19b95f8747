"""File-backed store for user profiles and the shared eigenmodel.

Layout under the store root:

    manifest.json            store version, model hash/staleness, user list
    eigenmodel.bin           shared projection basis (absent until trained)
    <user_id>/meta.json      id, timestamps, sample counts, face provenance
    <user_id>/faces.bin      canonical enrollment faces (model retraining input)
    <user_id>/voice.cb       trained voice codebook
    <user_id>/face.tpl       face template (written by model rebuilds)

Every file is written atomically (temp file in the same directory, then
rename), and readers ignore leftover temp files, so a crash mid-write
never corrupts a profile. Writes to a given user id are serialized by
the caller (the service holds a per-store write lock).

Enrolling or deleting a user marks the shared eigenmodel stale; a
rebuild retrains it from every stored user's canonical faces and
re-projects all templates.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BimodalAuthError, FormatError, InsufficientDataError
from .eigenfaces import (
    EigenModel,
    FaceTemplate,
    decode_eigenmodel,
    decode_face_template,
    encode_eigenmodel,
    encode_face_template,
    mean_template,
    train_eigenmodel,
)
from .face_pipeline import CanonicalFace
from .imaging import GrayImage
from .vq_model import Codebook, decode_codebook, encode_codebook

_USER_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$")
_FACES_MAGIC = b"CFAC"
_STORE_VERSION = 1

MANIFEST_NAME = "manifest.json"
EIGENMODEL_NAME = "eigenmodel.bin"


class ProfileExistsError(BimodalAuthError):
    pass


class ProfileNotFoundError(BimodalAuthError):
    pass


class StoreIntegrityError(FormatError):
    pass


@dataclass(frozen=True)
class UserProfile:
    """One enrolled identity; ``complete`` when both templates exist."""

    user_id: str
    face_template: FaceTemplate | None = None
    voice_codebook: Codebook | None = None
    enrollment_faces: tuple[CanonicalFace, ...] = ()
    voice_sample_count: int = 0
    created: str = ""
    version: int = _STORE_VERSION

    def __post_init__(self):
        if not _USER_ID_RE.match(self.user_id):
            raise ValueError(f"user id {self.user_id!r} is not a filesystem-safe token")

    @property
    def complete(self) -> bool:
        return self.face_template is not None and self.voice_codebook is not None


@dataclass(frozen=True)
class StoreManifest:
    root: str
    eigenmodel_hash: str | None
    model_stale: bool
    users: tuple[tuple[str, bool], ...]  # (user_id, complete), sorted by id

    @property
    def user_ids(self) -> tuple[str, ...]:
        return tuple(u for u, _ in self.users)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _encode_faces(faces: tuple[CanonicalFace, ...]) -> bytes:
    if faces:
        h, w = faces[0].image.pixels.shape
    else:
        h = w = 0
    head = _FACES_MAGIC + struct.pack("<IIII", _STORE_VERSION, len(faces), h, w)
    body = b"".join(f.image.pixels.tobytes() for f in faces)
    return head + body


def _decode_faces(data: bytes, provenance) -> tuple[CanonicalFace, ...]:
    if data[:4] != _FACES_MAGIC:
        raise StoreIntegrityError(f"bad faces magic {data[:4]!r}")
    version, count, h, w = struct.unpack_from("<IIII", data, 4)
    if version > _STORE_VERSION:
        raise StoreIntegrityError(f"faces record version {version} is newer than supported")
    need = 20 + count * h * w
    if len(data) < need:
        raise StoreIntegrityError("truncated faces record")
    faces = []
    offset = 20
    for i in range(count):
        raster = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=offset).reshape(h, w)
        offset += h * w
        meta = provenance[i] if i < len(provenance) else {}
        eyes = meta.get("eyes")
        faces.append(
            CanonicalFace(
                image=GrayImage(raster.copy()),
                source_id=meta.get("source_id", ""),
                eye_centers=(tuple(eyes[0]), tuple(eyes[1])) if eyes else None,
            )
        )
    return tuple(faces)


class ProfileStore:
    def __init__(self, root, create: bool = True):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise ProfileNotFoundError(f"store root {self.root} does not exist")

    # -- manifest ----------------------------------------------------------

    def _read_manifest_file(self) -> dict:
        path = self.root / MANIFEST_NAME
        if not path.exists():
            return {"version": _STORE_VERSION, "eigenmodel_hash": None, "model_stale": False, "users": []}
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreIntegrityError(f"unreadable manifest: {exc}") from None
        if raw.get("version", _STORE_VERSION) > _STORE_VERSION:
            raise StoreIntegrityError(
                f"store version {raw.get('version')} is newer than supported ({_STORE_VERSION})"
            )
        return raw

    def _write_manifest_file(self, manifest: dict) -> None:
        data = json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8")
        _atomic_write(self.root / MANIFEST_NAME, data)

    def _scan_users(self) -> list[tuple[str, bool]]:
        users = []
        for entry in sorted(self.root.iterdir()):
            if not entry.is_dir() or ".tmp" in entry.name:
                continue
            if not (entry / "meta.json").exists():
                continue
            complete = (entry / "face.tpl").exists() and (entry / "voice.cb").exists()
            users.append((entry.name, complete))
        return users

    def list_profiles(self) -> StoreManifest:
        """Scan the store; the manifest file is synced to what is on disk."""
        raw = self._read_manifest_file()
        users = self._scan_users()
        recorded = [[u, c] for u, c in users]
        if raw.get("users") != recorded:
            raw["users"] = recorded
            self._write_manifest_file(raw)
        return StoreManifest(
            root=str(self.root),
            eigenmodel_hash=raw.get("eigenmodel_hash"),
            model_stale=bool(raw.get("model_stale", False)),
            users=tuple((u, c) for u, c in users),
        )

    def _update_manifest(self, **changes) -> None:
        raw = self._read_manifest_file()
        raw["users"] = [[u, c] for u, c in self._scan_users()]
        raw.update(changes)
        self._write_manifest_file(raw)

    def mark_model_stale(self) -> None:
        self._update_manifest(model_stale=True)

    # -- profiles ----------------------------------------------------------

    def _user_dir(self, user_id: str) -> Path:
        if not _USER_ID_RE.match(user_id):
            raise ValueError(f"user id {user_id!r} is not a filesystem-safe token")
        return self.root / user_id

    def has_profile(self, user_id: str) -> bool:
        return (self._user_dir(user_id) / "meta.json").exists()

    def save_profile(self, profile: UserProfile, overwrite: bool = False) -> None:
        """Persist a profile; refuses an existing id unless overwrite is set.

        Saving marks the shared eigenmodel stale, since its training set
        changed.
        """
        user_dir = self._user_dir(profile.user_id)
        if self.has_profile(profile.user_id) and not overwrite:
            raise ProfileExistsError(f"user {profile.user_id!r} already enrolled")
        user_dir.mkdir(parents=True, exist_ok=True)

        provenance = []
        for face in profile.enrollment_faces:
            entry = {"source_id": face.source_id}
            if face.eye_centers is not None:
                entry["eyes"] = [list(face.eye_centers[0]), list(face.eye_centers[1])]
            provenance.append(entry)
        meta = {
            "user_id": profile.user_id,
            "created": profile.created or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "face_samples": len(profile.enrollment_faces),
            "voice_samples": profile.voice_sample_count,
            "version": profile.version,
            "face_provenance": provenance,
        }
        _atomic_write(user_dir / "faces.bin", _encode_faces(profile.enrollment_faces))
        if profile.voice_codebook is not None:
            _atomic_write(user_dir / "voice.cb", encode_codebook(profile.voice_codebook))
        if profile.face_template is not None:
            _atomic_write(user_dir / "face.tpl", encode_face_template(profile.face_template))
        _atomic_write(user_dir / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))
        self.mark_model_stale()

    def load_profile(self, user_id: str) -> UserProfile:
        user_dir = self._user_dir(user_id)
        meta_path = user_dir / "meta.json"
        if not meta_path.exists():
            raise ProfileNotFoundError(f"user {user_id!r} is not enrolled")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise StoreIntegrityError(f"unreadable profile meta for {user_id!r}: {exc}") from None
        if meta.get("version", _STORE_VERSION) > _STORE_VERSION:
            raise StoreIntegrityError(
                f"profile version {meta.get('version')} is newer than supported ({_STORE_VERSION})"
            )

        template = None
        tpl_path = user_dir / "face.tpl"
        if tpl_path.exists():
            template = decode_face_template(tpl_path.read_bytes())
        codebook = None
        cb_path = user_dir / "voice.cb"
        if cb_path.exists():
            codebook = decode_codebook(cb_path.read_bytes())
        faces: tuple[CanonicalFace, ...] = ()
        faces_path = user_dir / "faces.bin"
        if faces_path.exists():
            faces = _decode_faces(faces_path.read_bytes(), meta.get("face_provenance", []))
        return UserProfile(
            user_id=meta["user_id"],
            face_template=template,
            voice_codebook=codebook,
            enrollment_faces=faces,
            voice_sample_count=meta.get("voice_samples", 0),
            created=meta.get("created", ""),
            version=meta.get("version", _STORE_VERSION),
        )

    def delete_profile(self, user_id: str) -> None:
        user_dir = self._user_dir(user_id)
        if not (user_dir / "meta.json").exists():
            raise ProfileNotFoundError(f"user {user_id!r} is not enrolled")
        for child in user_dir.iterdir():
            child.unlink()
        user_dir.rmdir()
        self.mark_model_stale()

    def update_face_template(self, user_id: str, template: FaceTemplate) -> None:
        user_dir = self._user_dir(user_id)
        if not (user_dir / "meta.json").exists():
            raise ProfileNotFoundError(f"user {user_id!r} is not enrolled")
        _atomic_write(user_dir / "face.tpl", encode_face_template(template))

    # -- eigenmodel --------------------------------------------------------

    def save_eigenmodel(self, model: EigenModel) -> None:
        data = encode_eigenmodel(model)
        _atomic_write(self.root / EIGENMODEL_NAME, data)
        self._update_manifest(
            eigenmodel_hash=hashlib.sha256(data).hexdigest(), model_stale=False
        )

    def load_eigenmodel(self) -> EigenModel | None:
        path = self.root / EIGENMODEL_NAME
        if not path.exists():
            return None
        return decode_eigenmodel(path.read_bytes())

    def model_state(self) -> tuple[bool, bool]:
        """(model exists, model stale)."""
        manifest = self._read_manifest_file()
        return (self.root / EIGENMODEL_NAME).exists(), bool(manifest.get("model_stale", False))


def rebuild_model(store: ProfileStore) -> EigenModel:
    """Retrain the shared eigenmodel and re-project every face template.

    Trains on the union of all stored users' canonical enrollment faces
    and replaces each user's face.tpl with the mean projection of their
    faces under the new model.
    """
    manifest = store.list_profiles()
    profiles = [store.load_profile(uid) for uid in manifest.user_ids]
    profiles = [p for p in profiles if p.enrollment_faces]
    if not profiles:
        raise InsufficientDataError("no enrolled faces to train on")
    all_faces = [face for p in profiles for face in p.enrollment_faces]
    model = train_eigenmodel(all_faces)
    for p in profiles:
        template = mean_template(model, p.user_id, p.enrollment_faces)
        store.update_face_template(p.user_id, template)
    store.save_eigenmodel(model)
    return model
