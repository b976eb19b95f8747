"""Config defaults, file parsing, and override layering."""

import pytest

from bimodalauth.config import Config, apply_overrides, load_config, parse_config
from bimodalauth.errors import ConfigurationError
from bimodalauth.face_detect import EyeGeometry
from bimodalauth.face_pipeline import CanonicalParams
from bimodalauth.fusion import FusionParams
from bimodalauth.imaging import BilateralParams
from bimodalauth.speech_features import MfccParams


def test_defaults_form_the_documented_operating_point():
    cfg = Config()
    assert cfg.face.threshold == 2800.0
    assert (cfg.face.enroll_min, cfg.face.enroll_max) == (20, 30)
    assert cfg.face.test_samples == 10
    assert cfg.face.size == 70
    assert cfg.face.scaling_width == 320
    assert cfg.voice.rate == 16000
    assert cfg.voice.frame_length == 512
    assert cfg.voice.overlap == 0.5
    assert cfg.voice.window_phi == 0.54
    assert (cfg.voice.filter_count, cfg.voice.coeff_count) == (26, 12)
    assert cfg.voice.codebook_size == 8
    assert cfg.voice.threshold == 2.6
    assert (cfg.voice.enroll_min, cfg.voice.enroll_max) == (5, 7)
    assert cfg.voice.test_samples == 2
    assert (cfg.fusion.face_weight, cfg.fusion.voice_weight) == (0.35, 0.65)
    assert (cfg.fusion.face_alpha1, cfg.fusion.face_alpha2) == (200.0, 3400.0)
    assert (cfg.fusion.voice_alpha1, cfg.fusion.voice_alpha2) == (0.3, 3.1)
    assert cfg.fusion.accept_threshold == 0.5
    assert cfg.evaluation.iterations == 100
    assert cfg.evaluation.registered_fraction == 0.5
    assert cfg.service.listen_host == "127.0.0.1"
    assert cfg.service.max_envelope_bytes == 64 * 1024 * 1024
    assert cfg.store_path == "store"


def test_section_builders_mirror_the_module_defaults():
    cfg = Config()
    assert cfg.face.canonical_params() == CanonicalParams()
    assert cfg.face.bilateral_params() == BilateralParams()
    assert cfg.face.eye_geometry() == EyeGeometry()
    assert cfg.voice.mfcc_params() == MfccParams()
    assert cfg.fusion.fusion_params() == FusionParams()


def test_parse_reads_sections_keys_and_store_path():
    cfg = parse_config(
        """
        [face]
        threshold = 3000
        enroll_min = 4

        [voice]
        rate = 8000
        preemphasis = 0.97

        [fusion]
        face_weight = 0.4
        voice_weight = 0.6

        [evaluation]
        seed = 7
        iterations = 3

        [service]
        listen_port = 4242

        [store]
        path = /tmp/profiles
        """
    )
    assert cfg.face.threshold == 3000.0
    assert cfg.face.enroll_min == 4
    assert cfg.voice.rate == 8000
    assert cfg.voice.preemphasis == 0.97
    assert cfg.fusion.face_weight == 0.4
    assert cfg.evaluation.seed == 7
    assert cfg.evaluation.iterations == 3
    assert cfg.service.listen_port == 4242
    assert cfg.store_path == "/tmp/profiles"
    # untouched keys keep their defaults
    assert cfg.face.enroll_max == 30
    assert cfg.voice.threshold == 2.6


def test_parse_rejects_unknown_sections_and_keys():
    with pytest.raises(ConfigurationError):
        parse_config("[nosuch]\nkey = 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("[face]\nnot_a_knob = 1\n")


def test_parse_rejects_uncoercible_values():
    with pytest.raises(ConfigurationError):
        parse_config("[face]\nthreshold = soft\n")
    with pytest.raises(ConfigurationError):
        parse_config("[voice]\nrate = 16k\n")


def test_parse_rejects_malformed_files():
    with pytest.raises(ConfigurationError):
        parse_config("just some words\n")


def test_parse_layers_onto_a_base_config():
    base = parse_config("[face]\nthreshold = 2500\nenroll_min = 3\n")
    layered = parse_config("[face]\nthreshold = 2700\n", base=base)
    assert layered.face.threshold == 2700.0
    assert layered.face.enroll_min == 3


def test_load_config_reads_files(tmp_path):
    path = tmp_path / "engine.cfg"
    path.write_text("[evaluation]\nseed = 99\n", encoding="utf-8")
    assert load_config(path).evaluation.seed == 99


def test_overrides_apply_after_files():
    cfg = parse_config("[face]\nthreshold = 2500\n")
    apply_overrides(cfg, ["face.threshold=2650", "voice.codebook_size=16",
                          "store.path=/tmp/alt"])
    assert cfg.face.threshold == 2650.0
    assert cfg.voice.codebook_size == 16
    assert cfg.store_path == "/tmp/alt"


def test_override_format_validation():
    cfg = Config()
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["face.threshold"])
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["threshold=2650"])
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["face.nosuch=1"])
