"""End-to-end command line tests, run in process through main()."""

import hashlib
import json
import re

import pytest

from bimodalauth.authsvc import authenticate_samples
from bimodalauth.cli import CONFIG_ENV, main
from bimodalauth.config import Config, apply_overrides
from bimodalauth.evaluation import CorpusCache
from bimodalauth.profile_store import ProfileStore

# enrollment counts sized for the 8-sample corpus
SHRINK = [
    "--set", "face.enroll_min=3", "--set", "face.enroll_max=5",
    "--set", "voice.enroll_min=2", "--set", "voice.enroll_max=4",
]
EVAL_SHRINK = [
    "--set", "face.min_valid_samples=4", "--set", "face.enroll_min=4",
    "--set", "face.enroll_max=6", "--set", "face.test_samples=2",
]


def shrunk_config(store_path=None) -> Config:
    overrides = [arg for arg in SHRINK if arg != "--set"]
    if store_path is not None:
        overrides.append(f"store.path={store_path}")
    return apply_overrides(Config(), overrides)


@pytest.fixture(scope="module")
def enrolled(small_corpus, tmp_path_factory):
    """alice (s00) and bob (s01) enrolled and trained via the CLI."""
    store = tmp_path_factory.mktemp("cli-store")
    for user, subject in (("alice", "s00"), ("bob", "s01")):
        code = main([
            *SHRINK, "enroll", "--user", user, "--store", str(store),
            "--faces", str(small_corpus / "faces" / subject),
            "--voices", str(small_corpus / "voices" / subject),
        ])
        assert code == 0
    assert main([*SHRINK, "train-model", "--store", str(store)]) == 0
    return store


def test_enroll_and_train_messages(small_corpus, tmp_path, capsys):
    store = tmp_path / "store"
    code = main([
        *SHRINK, "enroll", "--user", "carol", "--store", str(store),
        "--faces", str(small_corpus / "faces" / "s02"),
        "--voices", str(small_corpus / "voices" / "s02"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "enrolled carol: 5 face samples, 4 voice samples" in out
    assert "run train-model" in out

    code = main([*SHRINK, "train-model", "--store", str(store)])
    out = capsys.readouterr().out
    assert code == 0
    assert re.search(r"trained face model: \d+ components from 5 samples", out)


def test_enroll_duplicate_user_fails_with_error_line(small_corpus, enrolled, capsys):
    code = main([
        *SHRINK, "enroll", "--user", "alice", "--store", str(enrolled),
        "--faces", str(small_corpus / "faces" / "s02"),
        "--voices", str(small_corpus / "voices" / "s02"),
    ])
    captured = capsys.readouterr()
    assert code == 1
    assert re.match(r"^ERROR user-exists: ", captured.err)


def test_auth_before_training_reports_stale_model(small_corpus, tmp_path, capsys):
    store = tmp_path / "store"
    assert main([
        *SHRINK, "enroll", "--user", "dave", "--store", str(store),
        "--faces", str(small_corpus / "faces" / "s03"),
        "--voices", str(small_corpus / "voices" / "s03"),
    ]) == 0
    capsys.readouterr()
    code = main([
        *SHRINK, "auth", "--store", str(store),
        "--face", str(small_corpus / "faces" / "s03" / "img06.pgm"),
        "--voice", str(small_corpus / "voices" / "s03" / "utt06.wav"),
    ])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR model-stale: ")


def test_auth_prints_library_scores(small_corpus, enrolled, capsys):
    face_path = small_corpus / "faces" / "s00" / "img06.pgm"
    voice_path = small_corpus / "voices" / "s00" / "utt06.wav"
    code = main([
        *SHRINK, "auth", "--store", str(enrolled),
        "--face", str(face_path), "--voice", str(voice_path),
    ])
    out = capsys.readouterr().out
    assert code == 0

    cfg = shrunk_config(enrolled)
    cache = CorpusCache(cfg)
    outcome = authenticate_samples(
        ProfileStore(enrolled, create=False),
        cache.face(str(face_path)), cache.mfcc(str(voice_path)), cfg,
    )
    scores = {s.modality: s for s in outcome.decision.scores}
    assert outcome.accepted
    assert out.splitlines() == [
        "decision: accept",
        "matched_user: alice",
        f"face_score: {scores['face'].normalized:.6f}",
        f"voice_score: {scores['voice'].normalized:.6f}",
        f"fused_score: {outcome.decision.fused:.6f}",
    ]


def test_auth_rejects_impostor_with_exit_zero(small_corpus, enrolled, capsys):
    # a clean reject is a successful run, not an error
    code = main([
        *SHRINK, "auth", "--store", str(enrolled), "--user", "bob",
        "--face", str(small_corpus / "faces" / "s00" / "img07.pgm"),
        "--voice", str(small_corpus / "voices" / "s00" / "utt07.wav"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "decision: reject" in out
    assert "matched_user: bob" in out


def test_auth_unknown_claimed_user(small_corpus, enrolled, capsys):
    code = main([
        *SHRINK, "auth", "--store", str(enrolled), "--user", "mallory",
        "--face", str(small_corpus / "faces" / "s00" / "img07.pgm"),
        "--voice", str(small_corpus / "voices" / "s00" / "utt07.wav"),
    ])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR unknown-user: ")


def test_auth_against_missing_store(small_corpus, tmp_path, capsys):
    code = main([
        "auth", "--store", str(tmp_path / "nowhere"),
        "--face", str(small_corpus / "faces" / "s00" / "img07.pgm"),
        "--voice", str(small_corpus / "voices" / "s00" / "utt07.wav"),
    ])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR unknown-user: ")


# ---------------------------------------------------------------------------
# corpus generation and evaluation


def tree_digest(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_gen_corpus_is_deterministic(tmp_path, capsys):
    for name in ("one", "two"):
        code = main(["gen-corpus", "--seed", "11", "--subjects", "2",
                     "--samples", "8", "--out", str(tmp_path / name)])
        out = capsys.readouterr().out
        assert code == 0
        assert "seed: 11" in out
        assert "generated 2 subjects x 8 samples" in out
    assert tree_digest(tmp_path / "one") == tree_digest(tmp_path / "two")


def test_gen_corpus_rejects_bad_counts(tmp_path, capsys):
    code = main(["gen-corpus", "--seed", "1", "--subjects", "0",
                 "--out", str(tmp_path / "c")])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR invalid-argument: ")


def test_evaluate_writes_reports_deterministically(small_corpus, tmp_path, capsys):
    outputs = []
    for name in ("r1", "r2"):
        code = main([
            *EVAL_SHRINK, "evaluate",
            "--faces", str(small_corpus / "faces"),
            "--voices", str(small_corpus / "voices"),
            "--seed", "5", "--iterations", "1",
            "--out", str(tmp_path / name),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "seed: 5" in out
        assert "iterations: 1" in out
        for label in ("face:", "voice:", "ensemble:"):
            assert label in out
        outputs.append((tmp_path / name / "report.json").read_bytes())
        parsed = json.loads(outputs[-1])
        assert parsed["seed"] == 5
        assert (tmp_path / name / "report.csv").exists()
    assert outputs[0] == outputs[1]


def test_evaluate_on_missing_dataset(tmp_path, capsys):
    code = main(["evaluate", "--faces", str(tmp_path / "nope"),
                 "--voices", str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR insufficient-data: ")


def test_sweep_writes_one_row_per_threshold(small_corpus, tmp_path, capsys):
    out_csv = tmp_path / "sweep.csv"
    code = main([
        *EVAL_SHRINK, "sweep", "--modality", "face",
        "--from", "1000", "--to", "5000", "--step", "200",
        "--faces", str(small_corpus / "faces"),
        "--voices", str(small_corpus / "voices"),
        "--seed", "5", "--iterations", "1", "--out", str(out_csv),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "21 thresholds swept" in out
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "threshold,fpr,fnr,accuracy"
    assert len(lines) == 22
    grid = [float(line.split(",")[0]) for line in lines[1:]]
    assert grid == [1000.0 + 200.0 * i for i in range(21)]


def test_sweep_validates_grid(small_corpus, tmp_path, capsys):
    base = ["sweep", "--modality", "face",
            "--faces", str(small_corpus / "faces"),
            "--voices", str(small_corpus / "voices"),
            "--out", str(tmp_path / "s.csv")]
    code = main(base + ["--from", "10", "--to", "5", "--step", "1"])
    assert code == 1
    assert capsys.readouterr().err.startswith("ERROR config-error: ")
    code = main(base + ["--from", "1", "--to", "5", "--step", "0"])
    assert code == 1
    assert capsys.readouterr().err.startswith("ERROR config-error: ")


# ---------------------------------------------------------------------------
# configuration plumbing


def test_store_flag_overrides_config(tmp_path, capsys):
    target = tmp_path / "deliberate-store"
    code = main(["train-model", "--store", str(target)])
    captured = capsys.readouterr()
    assert code == 1  # empty store cannot be trained
    assert captured.err.startswith("ERROR insufficient-data: ")
    assert target.is_dir()  # but the flag decided where the store lives


def test_config_file_and_overrides_precedence(small_corpus, tmp_path, capsys, monkeypatch):
    env_file = tmp_path / "env.conf"
    env_file.write_text("[evaluation]\nseed = 5\n", encoding="ascii")
    monkeypatch.setenv(CONFIG_ENV, str(env_file))

    args = [
        "evaluate",
        "--faces", str(small_corpus / "faces"),
        "--voices", str(small_corpus / "voices"),
        "--iterations", "1", "--out", str(tmp_path / "r"),
    ]

    # environment-selected file supplies the seed
    assert main(EVAL_SHRINK + args) == 0
    assert "seed: 5" in capsys.readouterr().out

    # an explicit --set beats the file
    assert main([*EVAL_SHRINK, "--set", "evaluation.seed=9"] + args) == 0
    assert "seed: 9" in capsys.readouterr().out

    # and the dedicated flag beats both
    assert main(EVAL_SHRINK + args + ["--seed", "3"]) == 0
    assert "seed: 3" in capsys.readouterr().out


def test_bad_override_reports_config_error(capsys):
    code = main(["--set", "nosuch.key=1", "train-model", "--store", "x"])
    captured = capsys.readouterr()
    assert code == 1
    assert captured.err.startswith("ERROR config-error: ")


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
