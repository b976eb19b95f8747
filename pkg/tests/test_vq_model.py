"""Codebook training dynamics, matching, and serialization."""

import struct

import numpy as np
import pytest

from bimodalauth.errors import ConfigurationError, FormatError, InsufficientDataError
from bimodalauth.speech_features import MfccParams, MfccSequence
from bimodalauth.vq_model import (
    Codebook,
    codebook_distance,
    decode_codebook,
    encode_codebook,
    export_codebook_text,
    lbg_train,
    match_voice,
)


def test_toy_square_reaches_the_known_optimum():
    points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    book = lbg_train(points, codebook_size=2)
    ordered = book.codewords[np.argsort(book.codewords[:, 0])]
    assert np.array_equal(ordered, np.array([[0.0, 0.5], [10.0, 0.5]]))
    assert book.distortion == 0.25


def test_lloyd_distortion_is_monotone_within_every_stage():
    rng = np.random.default_rng(21)
    for _ in range(50):
        n = int(rng.integers(20, 61))
        dim = int(rng.integers(2, 6))
        k = int(rng.choice([2, 4, 8]))
        vectors = rng.normal(0.0, 5.0, (n, dim))
        book = lbg_train(vectors, codebook_size=k)
        assert len(book.lloyd_distortions) == k.bit_length() - 1
        for stage in book.lloyd_distortions:
            assert stage
            for before, after in zip(stage, stage[1:]):
                assert after <= before * (1.0 + 1e-12) + 1e-15
        assert book.distortion <= book.lloyd_distortions[-1][-1] + 1e-12


def test_codebook_grows_by_doubling_to_the_target():
    vectors = np.random.default_rng(22).normal(0.0, 2.0, (40, 3))
    book = lbg_train(vectors, codebook_size=8)
    assert book.size == 8
    assert book.dimension == 3
    assert len(book.lloyd_distortions) == 3


def test_size_one_codebook_is_the_global_mean():
    vectors = np.random.default_rng(23).normal(0.0, 2.0, (15, 4))
    book = lbg_train(vectors, codebook_size=1)
    assert np.array_equal(book.codewords, vectors.mean(axis=0)[None, :])
    expected = ((vectors - vectors.mean(axis=0)) ** 2).sum(axis=1).mean()
    assert book.distortion == pytest.approx(expected, rel=1e-12)
    assert book.lloyd_distortions == ()


def test_degenerate_training_set_keeps_the_codebook_full():
    vectors = np.tile(np.array([[2.0, -3.0]]), (6, 1))
    book = lbg_train(vectors, codebook_size=2)
    assert book.size == 2
    assert book.distortion == 0.0


def test_training_input_validation():
    vectors = np.zeros((4, 2))
    with pytest.raises(ConfigurationError):
        lbg_train(vectors, codebook_size=3)
    with pytest.raises(ConfigurationError):
        lbg_train(vectors, codebook_size=0)
    with pytest.raises(InsufficientDataError):
        lbg_train(np.zeros((0, 2)), codebook_size=2)
    with pytest.raises(ValueError):
        lbg_train(np.zeros(8), codebook_size=2)


def test_training_accepts_feature_sequences():
    rng = np.random.default_rng(24)
    vectors = rng.normal(0.0, 1.0, (30, 12))
    seq = MfccSequence(vectors=vectors, params=MfccParams())
    from_seq = lbg_train(seq, codebook_size=4, owner="ana")
    from_raw = lbg_train(vectors, codebook_size=4)
    assert from_seq.owner == "ana"
    assert np.array_equal(from_seq.codewords, from_raw.codewords)


def brute_force_mean_distance(probe: np.ndarray, words: np.ndarray) -> float:
    total = 0.0
    for v in probe:
        best = min(float(np.sqrt(((v - w) ** 2).sum())) for w in words)
        total += best
    return total / len(probe)


def test_codebook_distance_matches_brute_force():
    rng = np.random.default_rng(25)
    for _ in range(10):
        words = rng.normal(0.0, 3.0, (8, 5))
        probe = rng.normal(0.0, 3.0, (17, 5))
        book = Codebook(codewords=words, distortion=0.0)
        assert codebook_distance(probe, book) == pytest.approx(
            brute_force_mean_distance(probe, words), abs=1e-12
        )


def test_codebook_distance_validation():
    book = Codebook(codewords=np.zeros((2, 3)), distortion=0.0)
    with pytest.raises(InsufficientDataError):
        codebook_distance(np.zeros((0, 3)), book)
    with pytest.raises(ValueError):
        codebook_distance(np.zeros((4, 2)), book)


def test_match_voice_threshold_is_strict_and_ties_go_lexicographic():
    offset = np.array([[3.0, 4.0]])
    books = [
        Codebook(codewords=np.zeros((1, 2)), distortion=0.0, owner="bob"),
        Codebook(codewords=np.zeros((1, 2)), distortion=0.0, owner="alice"),
    ]
    match = match_voice(books, offset, threshold=5.0)
    assert match.user_id == "alice"
    assert match.distance == 5.0
    assert not match.accepted
    assert match_voice(books, offset, threshold=5.0 + 1e-9).accepted
    with pytest.raises(InsufficientDataError):
        match_voice([], offset)


def test_codebook_requires_nonempty_matrix():
    with pytest.raises(ValueError):
        Codebook(codewords=np.zeros((0, 3)), distortion=0.0)
    with pytest.raises(ValueError):
        Codebook(codewords=np.zeros(5), distortion=0.0)


def test_codebook_codec_roundtrip():
    rng = np.random.default_rng(26)
    book = lbg_train(rng.normal(0.0, 2.0, (30, 4)), codebook_size=4, owner="üser-9")
    back = decode_codebook(encode_codebook(book))
    assert back.owner == "üser-9"
    assert back.distortion == book.distortion
    assert np.array_equal(back.codewords, book.codewords)
    assert back.lloyd_distortions == ()  # history is not serialized


def test_codebook_codec_rejects_bad_input():
    book = Codebook(codewords=np.ones((2, 2)), distortion=1.5, owner="u")
    data = encode_codebook(book)
    with pytest.raises(FormatError):
        decode_codebook(b"ZZZZ" + data[4:])
    future = data[:4] + struct.pack("<I", 7) + data[8:]
    with pytest.raises(FormatError):
        decode_codebook(future)
    with pytest.raises(FormatError):
        decode_codebook(data[:-8])


def test_codebook_text_export_is_full_precision():
    book = Codebook(codewords=np.array([[1.0 / 3.0, -2.5], [0.1, 4.0]]), distortion=0.0)
    text = export_codebook_text(book)
    lines = text.strip().split("\n")
    assert len(lines) == 2
    parsed = np.array([[float(v) for v in line.split()] for line in lines])
    assert np.array_equal(parsed, book.codewords)
