"""Command line entry point: enrollment, model training, one-shot
authentication, dataset evaluation, threshold sweeps, synthetic corpus
generation and the TCP service."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .authsvc import (
    AuthServer,
    ModelStaleError,
    NoEnrolledUsersError,
    UnknownUserError,
    authenticate_samples,
    register_samples,
    train_store_model,
)
from .config import Config, apply_overrides, load_config
from .errors import (
    BimodalAuthError,
    ConfigurationError,
    FormatError,
    InsufficientDataError,
)
from .evaluation import (
    CorpusCache,
    build_trials,
    collect_scores,
    generate_synthetic_corpus,
    index_dataset,
    render_report_csv,
    render_report_json,
    render_sweep_csv,
    run_evaluation,
    threshold_sweep,
)
from .face_detect import (
    EyeNotFoundError,
    NoFaceError,
    eye_regions_from_annotation,
    load_cascade_file,
    load_eye_annotation_file,
)
from .face_pipeline import acquire_canonical_face
from .imaging import load_pgm_file
from .profile_store import ProfileExistsError, ProfileNotFoundError, ProfileStore
from .speech_features import extract_mfcc, load_wav_file

CONFIG_ENV = "BIMODAL_CONFIG"


def _error_code(exc: Exception) -> str:
    if isinstance(exc, NoEnrolledUsersError):
        return "no-enrolled-users"
    if isinstance(exc, ModelStaleError):
        return "model-stale"
    if isinstance(exc, UnknownUserError) or isinstance(exc, ProfileNotFoundError):
        return "unknown-user"
    if isinstance(exc, ProfileExistsError):
        return "user-exists"
    if isinstance(exc, NoFaceError):
        return "no-face"
    if isinstance(exc, EyeNotFoundError):
        return "missing-eye"
    if isinstance(exc, InsufficientDataError):
        return "insufficient-data"
    if isinstance(exc, ConfigurationError):
        return "config-error"
    if isinstance(exc, FormatError):
        return "format-error"
    if isinstance(exc, OSError):
        return "io-error"
    if isinstance(exc, ValueError):
        return "invalid-argument"
    return "error"


def _load_config(args) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV)
    config = load_config(path) if path else Config()
    if args.set:
        config = apply_overrides(config, args.set)
    if getattr(args, "store", None):
        config = apply_overrides(config, [f"store.path={args.store}"])
    return config


def _load_cascades(config: Config):
    face_model = eye_model = None
    if config.face.cascade_path:
        face_model = load_cascade_file(config.face.cascade_path)
    if config.face.eye_cascade_path:
        eye_model = load_cascade_file(config.face.eye_cascade_path)
    return face_model, eye_model


def _collect_files(paths, extension: str) -> list[Path]:
    out: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{extension}")))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not out:
        raise InsufficientDataError(f"no {extension} files found under {list(paths)}")
    return out


def _acquire_face(path: Path, config: Config, face_model, eye_model):
    img = load_pgm_file(path)
    eyes = None
    sidecar = path.with_suffix(".eyes")
    if sidecar.exists():
        left, right = load_eye_annotation_file(sidecar)
        eyes = eye_regions_from_annotation(
            left, right, img.width, img.height, config.face.eye_geometry()
        )
    return acquire_canonical_face(
        img, eyes, face_model, eye_model,
        eye_geometry=config.face.eye_geometry(),
        params=config.face.canonical_params(),
        bilateral=config.face.bilateral_params(),
        scaling_width=config.face.scaling_width,
        source_id=str(path),
    )


# ---------------------------------------------------------------------------
# commands


def _cmd_enroll(args) -> int:
    config = _load_config(args)
    face_model, eye_model = _load_cascades(config)
    store = ProfileStore(config.store_path)

    faces = []
    skipped = []
    for path in _collect_files(args.faces, ".pgm"):
        try:
            faces.append(_acquire_face(path, config, face_model, eye_model))
        except BimodalAuthError as exc:
            skipped.append((path, exc))
    voice_features = []
    for path in _collect_files(args.voices, ".wav"):
        try:
            signal = load_wav_file(path)
            if signal.rate != config.voice.rate:
                raise FormatError(f"rate {signal.rate} != configured {config.voice.rate}")
            voice_features.append(extract_mfcc(signal, config.voice.mfcc_params()))
        except BimodalAuthError as exc:
            skipped.append((path, exc))

    for path, exc in skipped:
        print(f"skipped {path}: {exc}", file=sys.stderr)
    profile = register_samples(
        store, args.user, faces, voice_features, config, overwrite=args.overwrite
    )
    print(f"enrolled {profile.user_id}: {len(profile.enrollment_faces)} face samples, "
          f"{profile.voice_sample_count} voice samples")
    print("face model is stale; run train-model before authenticating")
    return 0


def _cmd_train_model(args) -> int:
    config = _load_config(args)
    store = ProfileStore(config.store_path)
    model = train_store_model(store)
    print(f"trained face model: {model.n_components} components "
          f"from {model.training_size} samples")
    return 0


def _cmd_auth(args) -> int:
    config = _load_config(args)
    face_model, eye_model = _load_cascades(config)
    store = ProfileStore(config.store_path, create=False)
    face = _acquire_face(Path(args.face), config, face_model, eye_model)
    signal = load_wav_file(args.voice)
    if signal.rate != config.voice.rate:
        raise FormatError(f"rate {signal.rate} != configured {config.voice.rate}")
    voice = extract_mfcc(signal, config.voice.mfcc_params())
    outcome = authenticate_samples(store, face, voice, config, claimed_user=args.user)
    scores = {s.modality: s for s in outcome.decision.scores}
    print(f"decision: {'accept' if outcome.accepted else 'reject'}")
    print(f"matched_user: {outcome.matched_user}")
    print(f"face_score: {scores['face'].normalized:.6f}")
    print(f"voice_score: {scores['voice'].normalized:.6f}")
    print(f"fused_score: {outcome.decision.fused:.6f}")
    return 0


def _indexes_and_plan(args, config: Config):
    face_model, eye_model = _load_cascades(config)
    face_index = index_dataset(args.faces, "face", config, face_model, eye_model)
    voice_index = index_dataset(args.voices, "voice", config)
    seed = args.seed if args.seed is not None else config.evaluation.seed
    iterations = args.iterations if args.iterations is not None else config.evaluation.iterations
    plan = build_trials(face_index, voice_index, seed, iterations, config)
    cache = CorpusCache(config, face_model, eye_model)
    return plan, cache, seed


def _print_metrics(label: str, part) -> None:
    m = part.metrics.rounded()
    cells = ", ".join(
        f"{name.upper()}={'n/a' if m[name] is None else f'{m[name]:.2f}'}"
        for name in ("accuracy", "tpr", "fpr", "tnr", "fnr", "precision")
    )
    print(f"{label:>9}: {cells}")


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    plan, cache, seed = _indexes_and_plan(args, config)
    print(f"seed: {seed}")
    result = run_evaluation(plan, config, cache)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(render_report_csv(result), encoding="ascii")
    (out_dir / "report.json").write_text(render_report_json(result), encoding="ascii")
    print(f"iterations: {result.iterations}, probes: {result.probe_count}, "
          f"exclusions: {result.exclusions}")
    _print_metrics("face", result.face)
    _print_metrics("voice", result.voice)
    _print_metrics("ensemble", result.ensemble)
    print(f"reports written to {out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    if args.step <= 0:
        raise ConfigurationError("--step must be positive")
    if args.to < getattr(args, "from"):
        raise ConfigurationError("--to must be >= --from")
    start = getattr(args, "from")
    count = int((args.to - start) / args.step + 1e-9) + 1
    thresholds = [start + i * args.step for i in range(count)]

    plan, cache, seed = _indexes_and_plan(args, config)
    print(f"seed: {seed}")
    scores, _ = collect_scores(plan, config, cache)
    points = threshold_sweep(plan, config, args.modality, thresholds, scores=scores)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(render_sweep_csv(points), encoding="ascii")
    print(f"{len(points)} thresholds swept over [{start!r}, {args.to!r}] "
          f"for {args.modality}; wrote {out_path}")
    return 0


def _cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    generate_synthetic_corpus(
        args.seed, args.subjects, args.samples, out / "faces", out / "voices"
    )
    print(f"seed: {args.seed}")
    print(f"generated {args.subjects} subjects x {args.samples} samples "
          f"under {out / 'faces'} and {out / 'voices'}")
    return 0


def _cmd_serve(args) -> int:
    config = _load_config(args)
    if args.host:
        config = apply_overrides(config, [f"service.listen_host={args.host}"])
    if args.port is not None:
        config = apply_overrides(config, [f"service.listen_port={args.port}"])
    face_model, eye_model = _load_cascades(config)
    server = AuthServer(config, face_model=face_model, eye_model=eye_model)
    host, port = server.start()
    print(f"listening on {host}:{port} (store: {config.store_path})")
    try:
        while True:
            server.wait(1.0)  # wake periodically so SIGINT lands
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.stop()
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bimodalauth",
        description="Bimodal face and voice authentication toolkit",
    )
    parser.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enroll", help="register a user from face and voice sample files")
    p.add_argument("--user", required=True)
    p.add_argument("--faces", nargs="+", required=True, metavar="PATH",
                   help="PGM files or directories of them")
    p.add_argument("--voices", nargs="+", required=True, metavar="PATH",
                   help="WAV files or directories of them")
    p.add_argument("--store")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_enroll)

    p = sub.add_parser("train-model", help="rebuild the shared face model from the store")
    p.add_argument("--store")
    p.set_defaults(func=_cmd_train_model)

    p = sub.add_parser("auth", help="authenticate one face/voice sample pair")
    p.add_argument("--face", required=True, metavar="PGM")
    p.add_argument("--voice", required=True, metavar="WAV")
    p.add_argument("--user", help="claimed identity (verification); omit for identification")
    p.add_argument("--store")
    p.set_defaults(func=_cmd_auth)

    p = sub.add_parser("evaluate", help="run the randomized evaluation protocol")
    p.add_argument("--faces", required=True, metavar="DIR")
    p.add_argument("--voices", required=True, metavar="DIR")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", default="reports", metavar="DIR")
    p.add_argument("--store")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep a decision threshold over a grid")
    p.add_argument("--modality", choices=["face", "voice", "fused"], required=True)
    p.add_argument("--from", type=float, required=True, dest="from")
    p.add_argument("--to", type=float, required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--faces", required=True, metavar="DIR")
    p.add_argument("--voices", required=True, metavar="DIR")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", default="sweep.csv", metavar="CSV")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gen-corpus", help="generate a deterministic synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out", default="corpus", metavar="DIR")
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("serve", help="run the TCP authentication service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--store")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BimodalAuthError, OSError, ValueError) as exc:
        print(f"ERROR {_error_code(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
