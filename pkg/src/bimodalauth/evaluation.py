"""Evaluation harness: dataset indexing, trial planning, metric tables,
threshold sweeps and a synthetic corpus generator.

The protocol pairs every voice subject with a distinct face subject
into a chimeric identity, splits identities into registered and
non-registered pools, enrolls the registered ones (face training
samples feed a per-iteration eigenmodel, voice training samples feed
per-user codebooks) and probes with every face/voice test sample pair.
Unimodal tallies threshold each modality's best-match distance; the
ensemble tally fuses per-user normalized scores and thresholds the best
fused value. All sampling is driven by one seeded RNG, so a plan and
its results are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .errors import BimodalAuthError, InsufficientDataError
from .eigenfaces import mean_template, project, train_eigenmodel
from .face_detect import eye_regions_from_annotation, load_eye_annotation_file
from .face_pipeline import CanonicalFace, acquire_canonical_face
from .imaging import GrayImage, load_pgm_file, save_pgm_file
from .speech_features import (
    MfccSequence,
    PcmSignal,
    extract_mfcc,
    load_wav_file,
    save_wav_file,
)
from .fusion import fuse_wss, normalize_double_sigmoid
from .vq_model import codebook_distance, lbg_train

log = logging.getLogger(__name__)

UNDEFINED = None  # marker for metrics with a zero denominator


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ConfusionMatrix:
    """Counts over actual (registered or not) vs recognized (accepted or not)."""

    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def add(self, actual_registered: bool, accepted: bool) -> None:
        if actual_registered:
            if accepted:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if accepted:
                self.fp += 1
            else:
                self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Percentages, or None where the denominator is zero."""

    accuracy: float | None
    tpr: float | None
    fpr: float | None
    tnr: float | None
    fnr: float | None
    precision: float | None

    def rounded(self) -> dict:
        out = {}
        for name in ("accuracy", "tpr", "fpr", "tnr", "fnr", "precision"):
            value = getattr(self, name)
            out[name] = None if value is None else round(value, 2)
        return out


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Standard detection metrics as percentages.

    TNR and FNR are computed as complements of FPR and TPR so the pairs
    sum to exactly 100 whenever defined.
    """
    total = cm.total
    pos = cm.tp + cm.fn
    neg = cm.fp + cm.tn
    pred_pos = cm.tp + cm.fp
    accuracy = 100.0 * (cm.tp + cm.tn) / total if total else UNDEFINED
    tpr = 100.0 * cm.tp / pos if pos else UNDEFINED
    fpr = 100.0 * cm.fp / neg if neg else UNDEFINED
    tnr = 100.0 - fpr if fpr is not None else UNDEFINED
    fnr = 100.0 - tpr if tpr is not None else UNDEFINED
    precision = 100.0 * cm.tp / pred_pos if pred_pos else UNDEFINED
    return MetricsReport(accuracy, tpr, fpr, tnr, fnr, precision)


# ---------------------------------------------------------------------------
# dataset indexing


@dataclass(frozen=True)
class SampleRecord:
    path: str
    valid: bool
    reason: str | None = None


@dataclass(frozen=True)
class DatasetIndex:
    """Valid samples per subject after applying the minimum-count rule."""

    modality: str
    root: str
    subjects: dict
    records: tuple[SampleRecord, ...]
    excluded_subjects: tuple[tuple[str, str], ...]

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.subjects))


def _validate_face_sample(path: Path, config: Config, face_model, eye_model) -> SampleRecord:
    try:
        img = load_pgm_file(path)
    except BimodalAuthError as exc:
        return SampleRecord(str(path), False, f"bad-pgm: {exc}")
    sidecar = path.with_suffix(".eyes")
    if sidecar.exists():
        try:
            left, right = load_eye_annotation_file(sidecar)
            if not right[0] > left[0]:
                raise BimodalAuthError("right eye must lie at greater x")
            eye_regions_from_annotation(left, right, img.width, img.height,
                                        config.face.eye_geometry())
        except BimodalAuthError as exc:
            return SampleRecord(str(path), False, f"bad-annotation: {exc}")
        return SampleRecord(str(path), True)
    if face_model is None or eye_model is None:
        return SampleRecord(str(path), False, "missing-eye")
    try:
        acquire_canonical_face(
            img, None, face_model, eye_model,
            eye_geometry=config.face.eye_geometry(),
            params=config.face.canonical_params(),
            bilateral=config.face.bilateral_params(),
            scaling_width=config.face.scaling_width,
        )
    except BimodalAuthError as exc:
        reason = "no-face" if "face" in str(exc) else "missing-eye"
        return SampleRecord(str(path), False, reason)
    return SampleRecord(str(path), True)


def _validate_voice_sample(path: Path, config: Config) -> SampleRecord:
    try:
        signal = load_wav_file(path)
    except BimodalAuthError as exc:
        return SampleRecord(str(path), False, f"bad-wav: {exc}")
    if signal.rate != config.voice.rate:
        return SampleRecord(str(path), False, f"rate {signal.rate} != {config.voice.rate}")
    if signal.samples.size < config.voice.frame_length:
        return SampleRecord(str(path), False, "too-short")
    return SampleRecord(str(path), True)


def index_dataset(
    root,
    modality: str,
    config: Config | None = None,
    face_model=None,
    eye_model=None,
) -> DatasetIndex:
    """Scan <root>/<subject>/<sample> and validate every sample.

    Face samples are valid when an eye sidecar parses (or, lacking one,
    when the configured cascades find a face and both eyes); voice
    samples must be 16-bit mono PCM at the configured rate with at
    least one full frame. Subjects with fewer valid samples than the
    configured minimum are excluded.
    """
    if modality not in ("face", "voice"):
        raise ValueError(f"unknown modality {modality!r}")
    config = config or Config()
    root = Path(root)
    if not root.is_dir():
        raise InsufficientDataError(f"dataset root {root} does not exist")
    extension = ".pgm" if modality == "face" else ".wav"
    minimum = config.face.min_valid_samples if modality == "face" else config.voice.min_valid_samples

    subjects = {}
    records = []
    excluded = []
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        valid_paths = []
        for sample in sorted(subject_dir.glob(f"*{extension}")):
            if modality == "face":
                record = _validate_face_sample(sample, config, face_model, eye_model)
            else:
                record = _validate_voice_sample(sample, config)
            records.append(record)
            if record.valid:
                valid_paths.append(str(sample))
        if len(valid_paths) >= minimum:
            subjects[subject_dir.name] = tuple(valid_paths)
        else:
            excluded.append((subject_dir.name, f"only {len(valid_paths)} valid samples (minimum {minimum})"))
            log.warning("excluding %s subject %s: %s", modality, subject_dir.name, excluded[-1][1])
    return DatasetIndex(
        modality=modality, root=str(root), subjects=subjects,
        records=tuple(records), excluded_subjects=tuple(excluded),
    )


# ---------------------------------------------------------------------------
# trial planning


@dataclass(frozen=True)
class SubjectAssignment:
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class TrialIteration:
    pairing: tuple[tuple[str, str], ...]  # (identity, face subject), sorted
    registered: frozenset
    face_samples: dict
    voice_samples: dict


@dataclass(frozen=True)
class TrialPlan:
    seed: int
    iterations: tuple[TrialIteration, ...]
    warnings: tuple[str, ...] = ()


def _assign(rng: random.Random, paths, test_count: int, train_lo: int, train_hi: int,
            min_train: int, label: str, warnings: list) -> SubjectAssignment:
    n = len(paths)
    test = max(1, min(test_count, n - min_train))
    target = rng.randint(train_lo, train_hi)
    train = min(target, n - test)
    if test < test_count or train < train_lo:
        message = (f"{label}: clamped to {train} train / {test} test "
                   f"(wanted {train_lo}..{train_hi} / {test_count}, have {n})")
        if message not in warnings:
            warnings.append(message)
            log.warning("%s", message)
    drawn = rng.sample(list(paths), test + train)
    return SubjectAssignment(train=tuple(drawn[test:]), test=tuple(drawn[:test]))


def build_trials(
    face_index: DatasetIndex,
    voice_index: DatasetIndex,
    seed: int,
    iterations: int = 100,
    config: Config | None = None,
) -> TrialPlan:
    """Build a deterministic trial plan from the two indexes.

    Each iteration pairs every voice subject with a distinct uniformly
    drawn face subject, splits the chimeric identities into registered
    and non-registered pools, and samples train/test sets without
    replacement (counts clamped to availability, with warnings).
    Subjects that cannot meet the clamping floor (2 train + 1 test
    faces, 1 train + 1 test voice samples) are dropped up front.
    """
    config = config or Config()
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    warnings: list[str] = []

    face_pool = []
    for subject in face_index.subject_ids:
        if len(face_index.subjects[subject]) >= 3:
            face_pool.append(subject)
        else:
            warnings.append(f"face subject {subject} dropped: cannot supply 2 train + 1 test")
            log.warning("%s", warnings[-1])
    voice_pool = []
    for subject in voice_index.subject_ids:
        if len(voice_index.subjects[subject]) >= 2:
            voice_pool.append(subject)
        else:
            warnings.append(f"voice subject {subject} dropped: cannot supply 1 train + 1 test")
            log.warning("%s", warnings[-1])

    if not voice_pool:
        raise InsufficientDataError("no usable voice subjects")
    if len(face_pool) < len(voice_pool):
        raise InsufficientDataError(
            f"need at least {len(voice_pool)} face subjects, have {len(face_pool)}"
        )

    fraction = config.evaluation.registered_fraction
    if not 0.0 < fraction <= 1.0:
        raise ValueError("registered fraction must lie in (0, 1]")
    n_registered = min(len(voice_pool), max(1, int(round(len(voice_pool) * fraction))))

    rng = random.Random(seed)
    iteration_list = []
    for _ in range(iterations):
        faces_drawn = rng.sample(face_pool, len(voice_pool))
        pairing = tuple(zip(voice_pool, faces_drawn))
        registered = frozenset(rng.sample(voice_pool, n_registered))
        face_samples = {}
        voice_samples = {}
        for identity, face_subject in pairing:
            face_samples[identity] = _assign(
                rng, face_index.subjects[face_subject], config.face.test_samples,
                config.face.enroll_min, config.face.enroll_max, 2,
                f"face subject {face_subject}", warnings,
            )
            voice_samples[identity] = _assign(
                rng, voice_index.subjects[identity], config.voice.test_samples,
                config.voice.enroll_min, config.voice.enroll_max, 1,
                f"voice subject {identity}", warnings,
            )
        iteration_list.append(
            TrialIteration(
                pairing=pairing, registered=registered,
                face_samples=face_samples, voice_samples=voice_samples,
            )
        )
    return TrialPlan(seed=seed, iterations=tuple(iteration_list), warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# running trials


class CorpusCache:
    """Preprocessed sample cache keyed by path (samples are immutable)."""

    def __init__(self, config: Config, face_model=None, eye_model=None):
        self.config = config
        self.face_model = face_model
        self.eye_model = eye_model
        self._faces: dict[str, CanonicalFace] = {}
        self._mfcc: dict[str, MfccSequence] = {}

    def face(self, path: str) -> CanonicalFace:
        if path not in self._faces:
            p = Path(path)
            img = load_pgm_file(p)
            eyes = None
            sidecar = p.with_suffix(".eyes")
            if sidecar.exists():
                left, right = load_eye_annotation_file(sidecar)
                eyes = eye_regions_from_annotation(
                    left, right, img.width, img.height, self.config.face.eye_geometry()
                )
            self._faces[path] = acquire_canonical_face(
                img, eyes, self.face_model, self.eye_model,
                eye_geometry=self.config.face.eye_geometry(),
                params=self.config.face.canonical_params(),
                bilateral=self.config.face.bilateral_params(),
                scaling_width=self.config.face.scaling_width,
                source_id=path,
            )
        return self._faces[path]

    def mfcc(self, path: str) -> MfccSequence:
        if path not in self._mfcc:
            signal = load_wav_file(path)
            self._mfcc[path] = extract_mfcc(signal, self.config.voice.mfcc_params())
        return self._mfcc[path]


@dataclass(frozen=True)
class ProbeScore:
    """Raw scores for one face/voice probe pair against one iteration's models."""

    identity: str
    registered: bool
    face_distance: float
    voice_distance: float
    fused: float
    face_user: str
    voice_user: str
    fused_user: str


@dataclass(frozen=True)
class ModalityResult:
    confusion: ConfusionMatrix
    metrics: MetricsReport
    identity_confusions: int


@dataclass(frozen=True)
class EvaluationResult:
    seed: int
    iterations: int
    probe_count: int
    exclusions: int
    face: ModalityResult
    voice: ModalityResult
    ensemble: ModalityResult
    warnings: tuple[str, ...] = ()


def collect_scores(plan: TrialPlan, config: Config, cache: CorpusCache | None = None):
    """Run every probe in the plan; returns (scores, exclusion count).

    Scores are computed once and can be re-thresholded arbitrarily; the
    fused score for a probe is the minimum over enrolled users of the
    weighted sum of that user's normalized face and voice distances.
    """
    cache = cache or CorpusCache(config)
    fusion_params = config.fusion.fusion_params()
    scores: list[ProbeScore] = []
    exclusions = 0

    for iteration in plan.iterations:
        users = sorted(iteration.registered)

        train_faces = {}
        for user in users:
            faces = []
            for path in iteration.face_samples[user].train:
                try:
                    faces.append(cache.face(path))
                except BimodalAuthError:
                    exclusions += 1
            train_faces[user] = faces
        usable = [u for u in users if len(train_faces[u]) >= 1]
        all_train = [f for u in usable for f in train_faces[u]]
        if len(all_train) < 2 or not usable:
            log.warning("iteration skipped: not enough usable training faces")
            continue
        model = train_eigenmodel(all_train)
        templates = {u: mean_template(model, u, train_faces[u]) for u in usable}

        codebooks = {}
        for user in list(usable):
            vectors = []
            for path in iteration.voice_samples[user].train:
                try:
                    vectors.append(cache.mfcc(path).vectors)
                except BimodalAuthError:
                    exclusions += 1
            if not vectors or sum(v.shape[0] for v in vectors) < 1:
                usable.remove(user)
                continue
            codebooks[user] = lbg_train(
                np.vstack(vectors), config.voice.codebook_size, owner=user
            )
        usable = [u for u in usable if u in codebooks and u in templates]
        if not usable:
            log.warning("iteration skipped: no fully enrolled users")
            continue

        for identity, _face_subject in iteration.pairing:
            is_registered = identity in iteration.registered and identity in usable
            if identity in iteration.registered and identity not in usable:
                # enrollment failed; its probes cannot be scored fairly
                exclusions += len(iteration.face_samples[identity].test) * len(
                    iteration.voice_samples[identity].test
                )
                continue
            face_tests = []
            for path in iteration.face_samples[identity].test:
                try:
                    face_tests.append(project(model, cache.face(path)))
                except BimodalAuthError:
                    exclusions += 1
            voice_tests = []
            for path in iteration.voice_samples[identity].test:
                try:
                    voice_tests.append(cache.mfcc(path))
                except BimodalAuthError:
                    exclusions += 1

            for coeffs in face_tests:
                face_d = {
                    u: float(np.linalg.norm(templates[u].coefficients - coeffs)) for u in usable
                }
                face_user = min(usable, key=lambda u: (face_d[u], u))
                face_phi = {
                    u: normalize_double_sigmoid(face_d[u], fusion_params.face) for u in usable
                }
                for seq in voice_tests:
                    voice_d = {u: codebook_distance(seq, codebooks[u]) for u in usable}
                    voice_user = min(usable, key=lambda u: (voice_d[u], u))
                    fused_by_user = {
                        u: fuse_wss([
                            (face_phi[u], fusion_params.face.weight),
                            (normalize_double_sigmoid(voice_d[u], fusion_params.voice),
                             fusion_params.voice.weight),
                        ])
                        for u in usable
                    }
                    fused_user = min(usable, key=lambda u: (fused_by_user[u], u))
                    scores.append(
                        ProbeScore(
                            identity=identity,
                            registered=is_registered,
                            face_distance=face_d[face_user],
                            voice_distance=voice_d[voice_user],
                            fused=fused_by_user[fused_user],
                            face_user=face_user,
                            voice_user=voice_user,
                            fused_user=fused_user,
                        )
                    )
    return scores, exclusions


def _tally(scores, accept, true_user) -> ModalityResult:
    cm = ConfusionMatrix()
    confusions = 0
    for s in scores:
        accepted = accept(s)
        cm.add(s.registered, accepted)
        if s.registered and accepted and true_user(s) != s.identity:
            confusions += 1
    return ModalityResult(confusion=cm, metrics=compute_metrics(cm), identity_confusions=confusions)


def run_evaluation(plan: TrialPlan, config: Config, cache: CorpusCache | None = None) -> EvaluationResult:
    """Score the plan and tally unimodal and ensemble confusion matrices."""
    scores, exclusions = collect_scores(plan, config, cache)
    face_threshold = config.face.threshold
    voice_threshold = config.voice.threshold
    fused_threshold = config.fusion.accept_threshold
    face = _tally(scores, lambda s: s.face_distance < face_threshold, lambda s: s.face_user)
    voice = _tally(scores, lambda s: s.voice_distance < voice_threshold, lambda s: s.voice_user)
    ensemble = _tally(scores, lambda s: s.fused < fused_threshold, lambda s: s.fused_user)
    return EvaluationResult(
        seed=plan.seed,
        iterations=len(plan.iterations),
        probe_count=len(scores),
        exclusions=exclusions,
        face=face,
        voice=voice,
        ensemble=ensemble,
        warnings=plan.warnings,
    )


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    fpr: float | None
    fnr: float | None
    accuracy: float | None


def threshold_sweep(
    plan: TrialPlan,
    config: Config,
    target: str,
    thresholds,
    cache: CorpusCache | None = None,
    scores=None,
) -> list[SweepPoint]:
    """Re-threshold precomputed scores over a grid.

    ``target`` selects which score is swept: "face" or "voice" raw
    distances, or "fused" weighted sums. Scores are computed once for
    the whole grid.
    """
    if target not in ("face", "voice", "fused"):
        raise ValueError(f"unknown sweep target {target!r}")
    if scores is None:
        scores, _ = collect_scores(plan, config, cache)
    attr = {"face": "face_distance", "voice": "voice_distance", "fused": "fused"}[target]
    points = []
    for threshold in thresholds:
        cm = ConfusionMatrix()
        for s in scores:
            cm.add(s.registered, getattr(s, attr) < threshold)
        m = compute_metrics(cm)
        points.append(SweepPoint(threshold=float(threshold), fpr=m.fpr, fnr=m.fnr, accuracy=m.accuracy))
    return points


# ---------------------------------------------------------------------------
# reports


def _result_dict(result: EvaluationResult) -> dict:
    def modality(part: ModalityResult) -> dict:
        cm = part.confusion
        return {
            "confusion": {"tp": cm.tp, "fn": cm.fn, "fp": cm.fp, "tn": cm.tn},
            "metrics": {
                name: getattr(part.metrics, name)
                for name in ("accuracy", "tpr", "fpr", "tnr", "fnr", "precision")
            },
            "identity_confusions": part.identity_confusions,
        }

    return {
        "seed": result.seed,
        "iterations": result.iterations,
        "probes": result.probe_count,
        "exclusions": result.exclusions,
        "face": modality(result.face),
        "voice": modality(result.voice),
        "ensemble": modality(result.ensemble),
        "warnings": list(result.warnings),
    }


def render_report_json(result: EvaluationResult) -> str:
    return json.dumps(_result_dict(result), indent=2, sort_keys=True) + "\n"


def render_report_csv(result: EvaluationResult) -> str:
    """One row per modality metric, percentages printed to 2 decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["modality", "metric", "value"])
    for name, part in (("face", result.face), ("voice", result.voice), ("ensemble", result.ensemble)):
        for metric, value in part.metrics.rounded().items():
            writer.writerow([name, metric, "" if value is None else f"{value:.2f}"])
        cm = part.confusion
        for metric, value in (("tp", cm.tp), ("fn", cm.fn), ("fp", cm.fp), ("tn", cm.tn)):
            writer.writerow([name, metric, value])
    writer.writerow(["plan", "seed", result.seed])
    writer.writerow(["plan", "iterations", result.iterations])
    writer.writerow(["plan", "probes", result.probe_count])
    writer.writerow(["plan", "exclusions", result.exclusions])
    return buf.getvalue()


def render_sweep_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "fnr", "accuracy"])
    for p in points:
        writer.writerow([
            repr(p.threshold),
            "" if p.fpr is None else f"{p.fpr:.2f}",
            "" if p.fnr is None else f"{p.fnr:.2f}",
            "" if p.accuracy is None else f"{p.accuracy:.2f}",
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synthetic corpus


def generate_synthetic_corpus(
    seed: int,
    subjects: int,
    samples_per_subject: int,
    face_root,
    voice_root,
    rate: int = 16000,
    duration: float = 3.0,
) -> None:
    """Write a deterministic synthetic face and voice corpus.

    Faces are 140x140 arrangements of Gaussian blobs whose geometry is
    jittered per identity; samples of one identity differ by an
    illumination gradient, a brightness offset and pixel noise. Exact
    planted eye centers are written as sidecar annotations. Voices are
    harmonic tones shaped by per-identity formant envelopes, detuned
    and re-phased per sample. The same seed always produces byte
    identical corpora.
    """
    if subjects < 1 or samples_per_subject < 1:
        raise ValueError("subjects and samples_per_subject must be >= 1")
    rng = np.random.default_rng(seed)
    face_root = Path(face_root)
    voice_root = Path(voice_root)

    size = 140
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    def blob(cx, cy, sigma):
        return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))

    t = np.arange(int(round(rate * duration)), dtype=np.float64) / rate

    for s in range(subjects):
        subject_id = f"s{s:02d}"
        face_dir = face_root / subject_id
        voice_dir = voice_root / subject_id
        face_dir.mkdir(parents=True, exist_ok=True)
        voice_dir.mkdir(parents=True, exist_ok=True)

        # identity geometry; the aligner normalizes the eye baseline, so
        # identity must live in features relative to it and in texture
        lx = 42.0 + rng.uniform(-5.0, 5.0)
        rx = 98.0 + rng.uniform(-5.0, 5.0)
        ly = 49.0 + rng.uniform(-3.0, 3.0)
        ry = 49.0 + rng.uniform(-3.0, 3.0)
        eye_sigma = rng.uniform(2.6, 4.8)
        eye_depth = rng.uniform(50.0, 160.0)
        nose_x = 70.0 + rng.uniform(-6.0, 6.0)
        nose_y = 76.0 + rng.uniform(-7.0, 7.0)
        nose_sigma = rng.uniform(3.0, 7.0)
        nose_gain = rng.uniform(30.0, 80.0)
        mouth_x = 70.0 + rng.uniform(-7.0, 7.0)
        mouth_y = 101.0 + rng.uniform(-7.0, 7.0)
        mouth_sigma = rng.uniform(4.5, 9.5)
        mouth_depth = rng.uniform(50.0, 130.0)
        oval_cx = rng.uniform(64.0, 76.0)
        oval_cy = rng.uniform(66.0, 82.0)
        oval_sigma = rng.uniform(31.0, 45.0)
        brow_drop = rng.uniform(30.0, 80.0)
        brow_dy = rng.uniform(9.0, 14.0)
        brow_sx = rng.uniform(6.0, 10.0)
        brow_sy = rng.uniform(1.5, 3.0)
        # distinguishing marks and a broad skin texture, both strong
        # enough to survive equalization and the bilateral filter
        marks = [
            (rng.uniform(40.0, 100.0), rng.uniform(32.0, 104.0),
             rng.uniform(3.0, 6.5), rng.uniform(90.0, 170.0) * rng.choice([-1.0, 1.0]))
            for _ in range(5)
        ]
        tex_ux = rng.uniform(0.02, 0.06) * rng.choice([-1.0, 1.0])
        tex_uy = rng.uniform(0.02, 0.06) * rng.choice([-1.0, 1.0])
        tex_phase = rng.uniform(0.0, 2.0 * np.pi)
        tex_amp = rng.uniform(25.0, 50.0)

        base = 60.0 + 130.0 * blob(oval_cx, oval_cy, oval_sigma)
        base = base - eye_depth * (blob(lx, ly, eye_sigma) + blob(rx, ry, eye_sigma))
        base = base + nose_gain * blob(nose_x, nose_y, nose_sigma)
        base = base - mouth_depth * blob(mouth_x, mouth_y, mouth_sigma)
        for ex, ey in ((lx, ly), (rx, ry)):
            base = base - brow_drop * np.exp(
                -((xs - ex) ** 2) / (2.0 * brow_sx ** 2)
                - ((ys - (ey - brow_dy)) ** 2) / (2.0 * brow_sy ** 2)
            )
        for mx, my, ms, ma in marks:
            base = base + ma * blob(mx, my, ms)
        base = base + tex_amp * np.cos(2.0 * np.pi * (tex_ux * xs + tex_uy * ys) + tex_phase)

        # identity voice: fundamental plus five spectral resonances
        f0 = rng.uniform(85.0, 240.0)
        formants = np.sort(rng.uniform(280.0, 5200.0, size=5))
        formant_gains = rng.uniform(0.25, 1.2, size=5)
        formant_widths = rng.uniform(70.0, 200.0, size=5)

        for k in range(samples_per_subject):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            strength = rng.uniform(0.0, 22.0)
            offset = rng.uniform(-10.0, 10.0)
            ramp = (np.cos(angle) * xs + np.sin(angle) * ys) / size - 0.5
            noisy = base + strength * 2.0 * ramp + offset + rng.normal(0.0, 4.0, base.shape)
            img = GrayImage(np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8))
            stem = face_dir / f"img{k:02d}"
            save_pgm_file(img, stem.with_suffix(".pgm"))
            stem.with_suffix(".eyes").write_text(f"{lx!r} {ly!r} {rx!r} {ry!r}\n", encoding="ascii")

            detune = rng.uniform(0.99, 1.01)
            centers = formants * rng.uniform(0.995, 1.005, size=5)
            base_f = f0 * detune
            harmonics = np.arange(1, int(7600.0 / base_f) + 1, dtype=np.float64) * base_f
            envelope = np.full(harmonics.shape, 0.015)
            for center, gain, width in zip(centers, formant_gains, formant_widths):
                envelope = envelope + gain * np.exp(-((harmonics - center) ** 2) / (2.0 * width * width))
            phases = rng.uniform(0.0, 2.0 * np.pi, size=harmonics.size)
            wave = np.zeros_like(t)
            for freq, amp, phase in zip(harmonics, envelope, phases):
                wave += amp * np.sin(2.0 * np.pi * freq * t + phase)
            wave = wave / np.max(np.abs(wave)) * 0.35
            wave = wave + rng.normal(0.0, 1e-4, wave.shape)
            samples = np.clip(np.floor(wave * 32767.0 + 0.5), -32768, 32767).astype(np.int16)
            save_wav_file(PcmSignal(rate=rate, samples=samples), voice_dir / f"utt{k:02d}.wav")
