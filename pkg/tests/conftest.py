"""Shared fixtures: corpora, golden files, and the trained models used by the
acceptance suite.

Training scale is controlled by environment variables so the suite stays
honest at any budget (the thresholds never change, only the step count):

    DSIC_ACCEPT_STEPS   training steps per acceptance run (default 450)
    DSIC_ACCEPT_IMAGES  held-out images evaluated per criterion (default 60)
    DSIC_ACCEPT_FULL=1  full protocol: 20000 steps, every held-out image
"""

import os
from pathlib import Path

import numpy as np
import pytest

from deepsic import toydata, training
from deepsic.networks import preset

GOLDEN = Path(__file__).parent / "golden"

ACCEPT_FULL = os.environ.get("DSIC_ACCEPT_FULL", "") == "1"
ACCEPT_STEPS = 20000 if ACCEPT_FULL else int(os.environ.get("DSIC_ACCEPT_STEPS", "450"))
ACCEPT_IMAGES = None if ACCEPT_FULL else int(os.environ.get("DSIC_ACCEPT_IMAGES", "60"))
ACCEPT_PER_CLASS = 200


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """10 classes x 12 tiny images; enough to drive fast training loops."""
    root = tmp_path_factory.mktemp("small_corpus")
    toydata.generate_toy_corpus(root, per_class=12, size=32, seed=101)
    return root


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """The desk-scale corpus: 10 classes, 200 images each, 128x128."""
    root = tmp_path_factory.mktemp("toy_corpus")
    toydata.generate_toy_corpus(root, per_class=ACCEPT_PER_CLASS, size=128, seed=2026)
    return root


@pytest.fixture(scope="session")
def bench_images(tmp_path_factory):
    """24 photographic-geometry (768x512) test scenes, or a mounted set."""
    mounted = os.environ.get("DSIC_KODAK_DIR")
    if mounted:
        paths = sorted(Path(mounted).glob("*.png"))
        if len(paths) >= 24:
            return paths[:24]
    root = tmp_path_factory.mktemp("bench")
    return toydata.generate_bench_images(root, count=24, size_hw=(512, 768), seed=7)


def _train_preset(corpus_dir, preset_name, variant, steps=None):
    config = training.TrainConfig(
        corpus=corpus_dir,
        rate_cfg=preset(preset_name),
        variant=variant,
        steps=ACCEPT_STEPS if steps is None else steps,
        batch=32,
        patch_size=128,
        seed=7,
    )
    return training.train(config)


@pytest.fixture(scope="session")
def trained_mid_post(toy_corpus):
    return _train_preset(toy_corpus, "mid", "post")


@pytest.fixture(scope="session")
def trained_mid_pre(toy_corpus):
    return _train_preset(toy_corpus, "mid", "pre")


@pytest.fixture(scope="session")
def trained_lo_post(toy_corpus):
    return _train_preset(toy_corpus, "lo", "post")


@pytest.fixture(scope="session")
def trained_hi_post(toy_corpus):
    return _train_preset(toy_corpus, "hi", "post")
