"""Shared fixtures: synthetic corpora and handcrafted cascades."""

import numpy as np
import pytest

from bimodalauth.evaluation import generate_synthetic_corpus
from bimodalauth.face_detect import CascadeModel, CascadeStage, HaarRect, WeakClassifier
from bimodalauth.imaging import GrayImage


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """6 subjects x 8 samples; enough for protocol tests, quick to build."""
    root = tmp_path_factory.mktemp("corpus-small")
    generate_synthetic_corpus(11, 6, 8, root / "faces", root / "voices")
    return root


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory):
    """The pinned seed-7, 12-subject, 16-sample corpus."""
    root = tmp_path_factory.mktemp("corpus-7")
    generate_synthetic_corpus(7, 12, 16, root / "faces", root / "voices")
    return root


def center_contrast_cascade(center_threshold: float = 0.2,
                            symmetry_threshold: float = 0.15) -> CascadeModel:
    """Two-stage 16x16 cascade accepting bright-center windows.

    Every feature's weighted rectangle areas sum to zero, so decisions
    are invariant to affine intensity remapping. Loose thresholds fire
    on noise (good for exercising the scanner); tight ones localize.
    """
    center = WeakClassifier(
        threshold=center_threshold,
        leaf_below=0.0,
        leaf_above=1.0,
        rects=(HaarRect(0, 0, 16, 16, -1.0), HaarRect(4, 4, 8, 8, 4.0)),
    )
    top_heavy = WeakClassifier(
        threshold=symmetry_threshold,
        leaf_below=1.0,
        leaf_above=0.0,
        rects=(HaarRect(0, 0, 16, 8, 1.0), HaarRect(0, 8, 16, 8, -1.0)),
    )
    bottom_heavy = WeakClassifier(
        threshold=symmetry_threshold,
        leaf_below=1.0,
        leaf_above=0.0,
        rects=(HaarRect(0, 8, 16, 8, 1.0), HaarRect(0, 0, 16, 8, -1.0)),
    )
    return CascadeModel(
        window_w=16,
        window_h=16,
        stages=(
            CascadeStage(threshold=1.0, weaks=(center,)),
            CascadeStage(threshold=2.0, weaks=(top_heavy, bottom_heavy)),
        ),
    )


def blob_image(width: int, height: int, cx: float, cy: float,
               sigma: float = 3.0, amplitude: float = 90.0,
               background: float = 100.0, noise: float = 0.0,
               seed: int = 0) -> GrayImage:
    """Gray background with one bright Gaussian blob (optional noise)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    values = background + amplitude * np.exp(
        -((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma)
    )
    if noise:
        values = values + np.random.default_rng(seed).normal(0.0, noise, values.shape)
    return GrayImage(np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8))
