"""Engine configuration: dataclasses with defaults plus file parsing.

Config files are plain key=value text with bracketed sections, read by
configparser. Every tunable has a default here; the CLI layers flag
overrides on top and honors the BIMODAL_CONFIG environment variable
for the file path.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .face_detect import EyeGeometry
from .face_pipeline import CanonicalParams
from .fusion import FusionParams, ModalityParams
from .imaging import BilateralParams
from .speech_features import MfccParams


@dataclass
class FaceSection:
    scaling_width: int = 320
    size: int = 70
    threshold: float = 2800.0
    enroll_min: int = 20
    enroll_max: int = 30
    test_samples: int = 10
    min_valid_samples: int = 10
    left_eye_x: float = 0.19
    right_eye_x: float = 0.81
    eye_y: float = 0.30
    eye_region_left_x: float = 0.16
    eye_region_top_y: float = 0.26
    eye_region_width: float = 0.30
    eye_region_height: float = 0.28
    bilateral_sigma_spatial: float = 2.0
    bilateral_sigma_range: float = 20.0
    mask_cx: float = 35.0
    mask_cy: float = 28.0
    mask_a: float = 29.75
    mask_b: float = 48.0
    cascade_path: str = ""
    eye_cascade_path: str = ""

    def canonical_params(self) -> CanonicalParams:
        return CanonicalParams(
            size=self.size,
            left_eye_x=self.left_eye_x,
            right_eye_x=self.right_eye_x,
            eye_y=self.eye_y,
            mask_cx=self.mask_cx,
            mask_cy=self.mask_cy,
            mask_a=self.mask_a,
            mask_b=self.mask_b,
        )

    def bilateral_params(self) -> BilateralParams:
        return BilateralParams(self.bilateral_sigma_spatial, self.bilateral_sigma_range)

    def eye_geometry(self) -> EyeGeometry:
        return EyeGeometry(
            left_x=self.eye_region_left_x,
            top_y=self.eye_region_top_y,
            width=self.eye_region_width,
            height=self.eye_region_height,
        )


@dataclass
class VoiceSection:
    rate: int = 16000
    frame_length: int = 512
    overlap: float = 0.5
    window_phi: float = 0.54
    filter_count: int = 26
    coeff_count: int = 12
    codebook_size: int = 8
    threshold: float = 2.6
    enroll_min: int = 5
    enroll_max: int = 7
    test_samples: int = 2
    min_valid_samples: int = 3
    preemphasis: float = 0.0

    def mfcc_params(self) -> MfccParams:
        return MfccParams(
            rate=self.rate,
            frame_length=self.frame_length,
            overlap=self.overlap,
            window_phi=self.window_phi,
            filter_count=self.filter_count,
            coeff_count=self.coeff_count,
            preemphasis=self.preemphasis,
        )


@dataclass
class FusionSection:
    face_tau: float = 2800.0
    face_alpha1: float = 200.0
    face_alpha2: float = 3400.0
    face_weight: float = 0.35
    voice_tau: float = 2.6
    voice_alpha1: float = 0.3
    voice_alpha2: float = 3.1
    voice_weight: float = 0.65
    accept_threshold: float = 0.5

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            face=ModalityParams(self.face_tau, self.face_alpha1, self.face_alpha2, self.face_weight),
            voice=ModalityParams(self.voice_tau, self.voice_alpha1, self.voice_alpha2, self.voice_weight),
            accept_threshold=self.accept_threshold,
        )


@dataclass
class EvaluationSection:
    seed: int = 0
    iterations: int = 100
    registered_fraction: float = 0.5


@dataclass
class ServiceSection:
    listen_host: str = "127.0.0.1"
    listen_port: int = 9325
    max_envelope_bytes: int = 64 * 1024 * 1024


@dataclass
class Config:
    face: FaceSection = field(default_factory=FaceSection)
    voice: VoiceSection = field(default_factory=VoiceSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    service: ServiceSection = field(default_factory=ServiceSection)
    store_path: str = "store"


_SECTIONS = {
    "face": "face",
    "voice": "voice",
    "fusion": "fusion",
    "evaluation": "evaluation",
    "service": "service",
}


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from None


def _apply(config: Config, section: str, key: str, raw: str) -> None:
    if section == "store" and key == "path":
        config.store_path = raw.strip()
        return
    attr = _SECTIONS.get(section)
    if attr is None:
        raise ConfigurationError(f"unknown config section [{section}]")
    target = getattr(config, attr)
    fields = {f.name: f for f in dataclasses.fields(target)}
    if key not in fields:
        raise ConfigurationError(f"unknown config key {section}.{key}")
    current = getattr(target, key)
    setattr(target, key, _coerce(raw, type(current), f"{section}.{key}"))


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse key=value config text with bracketed sections into a Config."""
    config = base if base is not None else Config()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"bad config file: {exc}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(config, section.lower(), key.lower(), raw)
    return config


def load_config(path, base: Config | None = None) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def apply_overrides(config: Config, overrides) -> Config:
    """Apply "section.key=value" override strings (CLI --set flags)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not section.key=value")
        target, raw = item.split("=", 1)
        if "." not in target:
            raise ConfigurationError(f"override {item!r} is not section.key=value")
        section, key = target.split(".", 1)
        _apply(config, section.strip().lower(), key.strip().lower(), raw)
    return config
