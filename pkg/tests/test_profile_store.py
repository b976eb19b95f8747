"""Store layout, atomicity conventions, staleness, and model rebuilds."""

import hashlib
import json

import numpy as np
import pytest

from bimodalauth.eigenfaces import FaceTemplate, mean_template
from bimodalauth.errors import InsufficientDataError
from bimodalauth.face_pipeline import CanonicalFace
from bimodalauth.imaging import GrayImage
from bimodalauth.profile_store import (
    EIGENMODEL_NAME,
    MANIFEST_NAME,
    ProfileExistsError,
    ProfileNotFoundError,
    ProfileStore,
    StoreIntegrityError,
    UserProfile,
    rebuild_model,
)
from bimodalauth.vq_model import lbg_train


def canonical_face(seed: int, source_id: str = "", eyes=None) -> CanonicalFace:
    rng = np.random.default_rng(seed)
    return CanonicalFace(
        image=GrayImage(rng.integers(0, 256, (70, 70), dtype=np.uint8)),
        source_id=source_id,
        eye_centers=eyes,
    )


def make_profile(user_id: str, seed: int = 0, with_template: bool = True) -> UserProfile:
    rng = np.random.default_rng(seed)
    faces = (
        canonical_face(seed + 1, "cam0", eyes=((20.0, 30.0), (50.0, 30.5))),
        canonical_face(seed + 2, "cam1"),
        canonical_face(seed + 3),
    )
    template = FaceTemplate(user_id, rng.normal(0.0, 1.0, 4), 3) if with_template else None
    codebook = lbg_train(rng.normal(0.0, 1.0, (24, 12)), codebook_size=4, owner=user_id)
    return UserProfile(
        user_id=user_id,
        face_template=template,
        voice_codebook=codebook,
        enrollment_faces=faces,
        voice_sample_count=5,
        created="2026-08-01T10:00:00Z",
    )


def test_profile_roundtrip_preserves_everything(tmp_path):
    store = ProfileStore(tmp_path / "store")
    saved = make_profile("ana")
    store.save_profile(saved)
    loaded = store.load_profile("ana")
    assert loaded.user_id == "ana"
    assert loaded.complete
    assert loaded.created == "2026-08-01T10:00:00Z"
    assert loaded.voice_sample_count == 5
    assert np.array_equal(loaded.face_template.coefficients, saved.face_template.coefficients)
    assert np.array_equal(loaded.voice_codebook.codewords, saved.voice_codebook.codewords)
    assert len(loaded.enrollment_faces) == 3
    for got, put in zip(loaded.enrollment_faces, saved.enrollment_faces):
        assert np.array_equal(got.image.pixels, put.image.pixels)
        assert got.source_id == put.source_id
        assert got.eye_centers == put.eye_centers


def test_user_id_must_be_filesystem_safe(tmp_path):
    store = ProfileStore(tmp_path / "store")
    for bad in ("../evil", "a/b", ".hidden", "", "x" * 65, "sp ace"):
        with pytest.raises(ValueError):
            store.has_profile(bad)
    with pytest.raises(ValueError):
        UserProfile(user_id="../evil")
    assert not store.has_profile("x" * 64)


def test_duplicate_enrollment_is_refused(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    with pytest.raises(ProfileExistsError):
        store.save_profile(make_profile("ana", seed=9))
    store.save_profile(make_profile("ana", seed=9), overwrite=True)
    reread = store.load_profile("ana")
    assert np.array_equal(
        reread.enrollment_faces[0].image.pixels,
        make_profile("ana", seed=9).enrollment_faces[0].image.pixels,
    )


def test_delete_profile_removes_the_user(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    store.delete_profile("ana")
    assert not store.has_profile("ana")
    with pytest.raises(ProfileNotFoundError):
        store.load_profile("ana")
    with pytest.raises(ProfileNotFoundError):
        store.delete_profile("ana")


def test_model_staleness_lifecycle(tmp_path):
    store = ProfileStore(tmp_path / "store")
    assert store.model_state() == (False, False)
    store.save_profile(make_profile("ana"))
    assert store.model_state() == (False, True)
    rebuild_model(store)
    assert store.model_state() == (True, False)
    store.save_profile(make_profile("bob", seed=5))
    assert store.model_state() == (True, True)
    rebuild_model(store)
    store.delete_profile("bob")
    assert store.model_state() == (True, True)


def test_list_profiles_reports_completeness_in_sorted_order(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("zoe"))
    store.save_profile(make_profile("ana", seed=3, with_template=False))
    manifest = store.list_profiles()
    assert manifest.users == (("ana", False), ("zoe", True))
    assert manifest.user_ids == ("ana", "zoe")
    on_disk = json.loads((tmp_path / "store" / MANIFEST_NAME).read_text())
    assert on_disk["users"] == [["ana", False], ["zoe", True]]


def test_scan_ignores_leftover_temp_directories(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    junk = tmp_path / "store" / "ana.tmp42"
    junk.mkdir()
    (junk / "meta.json").write_text("{}")
    assert store.list_profiles().user_ids == ("ana",)


def test_rebuild_retrains_and_reprojects_all_templates(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana", seed=1))
    store.save_profile(make_profile("bob", seed=2))
    model = rebuild_model(store)
    assert model.training_size == 6  # three faces per user
    for uid in ("ana", "bob"):
        profile = store.load_profile(uid)
        expected = mean_template(model, uid, profile.enrollment_faces)
        assert profile.face_template.coefficients == pytest.approx(
            expected.coefficients, abs=1e-9
        )
    saved = store.load_eigenmodel()
    assert np.array_equal(saved.eigenvectors, model.eigenvectors)
    data = (tmp_path / "store" / EIGENMODEL_NAME).read_bytes()
    manifest = store.list_profiles()
    assert manifest.eigenmodel_hash == hashlib.sha256(data).hexdigest()
    assert not manifest.model_stale


def test_rebuild_needs_at_least_one_enrolled_face(tmp_path):
    store = ProfileStore(tmp_path / "store")
    with pytest.raises(InsufficientDataError):
        rebuild_model(store)


def test_future_store_versions_are_refused(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    manifest_path = tmp_path / "store" / MANIFEST_NAME
    raw = json.loads(manifest_path.read_text())
    raw["version"] = 99
    manifest_path.write_text(json.dumps(raw))
    with pytest.raises(StoreIntegrityError):
        store.list_profiles()


def test_future_profile_versions_are_refused(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    meta_path = tmp_path / "store" / "ana" / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["version"] = 99
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(StoreIntegrityError):
        store.load_profile("ana")


def test_corrupt_records_raise_integrity_errors(tmp_path):
    store = ProfileStore(tmp_path / "store")
    store.save_profile(make_profile("ana"))
    faces_path = tmp_path / "store" / "ana" / "faces.bin"
    faces_path.write_bytes(b"XXXX" + faces_path.read_bytes()[4:])
    with pytest.raises(StoreIntegrityError):
        store.load_profile("ana")
    meta_path = tmp_path / "store" / "ana" / "meta.json"
    meta_path.write_text("{not json")
    with pytest.raises(StoreIntegrityError):
        store.load_profile("ana")


def test_missing_store_root_without_create(tmp_path):
    with pytest.raises(ProfileNotFoundError):
        ProfileStore(tmp_path / "nope", create=False)


def test_update_face_template_requires_enrollment(tmp_path):
    store = ProfileStore(tmp_path / "store")
    with pytest.raises(ProfileNotFoundError):
        store.update_face_template("ghost", FaceTemplate("ghost", np.zeros(2), 1))
