"""Score normalization and weighted-sum fusion.

Raw matcher outputs are distances on incomparable scales (pixel-space
coefficients for faces, cepstral distances for voice). Each is mapped
into (0, 1) by a double sigmoid centered on its decision threshold tau:

    phi(s) = 1 / (1 + exp(-2 (s - tau) / alpha_left))   for s <  tau
             1 / (1 + exp(-2 (s - tau) / alpha_right))  otherwise

so phi(tau) = 0.5, genuine scores land below 0.5 and impostor scores
above, with separately tunable steepness on each side. Normalized
scores are combined as a weighted sum (weights summing to 1) and the
fused value is accepted when it falls below the fused threshold
(default 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

WEIGHT_SUM_TOLERANCE = 1e-9
DEFAULT_FUSED_THRESHOLD = 0.5

# open-interval clamps so phi never reaches 0 or 1 even for extreme scores
_PHI_MIN = 5e-324
_PHI_MAX = 1.0 - 2.220446049250313e-16


@dataclass(frozen=True)
class ModalityParams:
    """Normalization and weighting for one modality."""

    tau: float
    alpha_left: float
    alpha_right: float
    weight: float

    def __post_init__(self):
        if self.alpha_left <= 0 or self.alpha_right <= 0:
            raise ConfigurationError("sigmoid widths must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigurationError("weight must lie in [0, 1]")


@dataclass(frozen=True)
class MatchScore:
    modality: str
    raw: float
    normalized: float


@dataclass(frozen=True)
class FusionDecision:
    fused: float
    accepted: bool
    threshold: float
    scores: tuple[MatchScore, ...] = ()


def normalize_double_sigmoid(score: float, params: ModalityParams) -> float:
    """Map a raw distance into (0, 1); 0.5 exactly at score == tau."""
    score = float(score)
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score!r}")
    alpha = params.alpha_left if score < params.tau else params.alpha_right
    e = -2.0 * (score - params.tau) / alpha
    if e >= 0.0:
        z = math.exp(-e)
        phi = z / (1.0 + z)
    else:
        phi = 1.0 / (1.0 + math.exp(e))
    return min(max(phi, _PHI_MIN), _PHI_MAX)


def fuse_wss(components) -> float:
    """Weighted sum of normalized scores; weights must sum to 1."""
    components = list(components)
    if not components:
        raise ConfigurationError("fusion needs at least one component")
    total_weight = math.fsum(w for _, w in components)
    if abs(total_weight - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ConfigurationError(f"weights sum to {total_weight!r}, expected 1")
    return math.fsum(phi * w for phi, w in components)


def decide(fused: float, threshold: float = DEFAULT_FUSED_THRESHOLD, scores=()) -> FusionDecision:
    """Accept when the fused score falls below the threshold."""
    if not 0.0 < fused < 1.0:
        raise ValueError(f"fused score must lie in (0, 1), got {fused!r}")
    return FusionDecision(
        fused=fused, accepted=fused < threshold, threshold=threshold, scores=tuple(scores)
    )


@dataclass(frozen=True)
class FusionParams:
    """Both modalities plus the fused accept threshold."""

    face: ModalityParams = ModalityParams(tau=2800.0, alpha_left=200.0, alpha_right=3400.0, weight=0.35)
    voice: ModalityParams = ModalityParams(tau=2.6, alpha_left=0.3, alpha_right=3.1, weight=0.65)
    accept_threshold: float = DEFAULT_FUSED_THRESHOLD

    def __post_init__(self):
        total = self.face.weight + self.voice.weight
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ConfigurationError(f"modality weights sum to {total!r}, expected 1")


def fuse_pair(face_score: float, voice_score: float, params: FusionParams = FusionParams()) -> FusionDecision:
    """Normalize, fuse and decide a face/voice raw score pair."""
    face_phi = normalize_double_sigmoid(face_score, params.face)
    voice_phi = normalize_double_sigmoid(voice_score, params.voice)
    fused = fuse_wss([(face_phi, params.face.weight), (voice_phi, params.voice.weight)])
    return decide(
        fused,
        params.accept_threshold,
        scores=(
            MatchScore("face", float(face_score), face_phi),
            MatchScore("voice", float(voice_score), voice_phi),
        ),
    )
