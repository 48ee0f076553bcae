"""Shared seeded fixtures.

`tiny_cfg` shrinks every dimension so a full train/eval pass runs in seconds:
1024-sample segments at 8 kHz with a 64-point STFT (33 × 31 spectrograms).
"""

import json

import numpy as np
import pytest

from core.config import config_from_dict
from core.datagen import Corpus
from core.trainer import train_e2e, train_vae
from core.types import AudioBuffer

TINY = {
    "seed": 3,
    "stft": {"fft_bins": 64, "window_len": 64, "hop_len": 32},
    "datagen": {"sample_rate": 8000, "segment_len": 1024},
    "vae": {
        "epochs": 2,
        "train_examples_per_epoch": 6,
        "val_examples_per_epoch": 6,
        "batch_size": 3,
        "latent_dim": 8,
        "channels": [2, 4, 4, 4],
    },
    "e2e": {
        "epochs": 2,
        "train_examples_per_epoch": 4,
        "val_examples_per_epoch": 2,
        "batch_size": 2,
        "controller_hidden": [16, 8],
    },
    "mrstft": {"fft_sizes": [32, 128, 512]},
    "analysis": {
        "classifier_examples_per_effect": 8,
        "pca_components": 8,
        "rf_trees": 10,
        "mmi_examples": 40,
        "eval_examples": 3,
    },
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg(tmp_path):
    doc = dict(TINY, run_dir=str(tmp_path / "run"))
    return config_from_dict(doc).validate()


@pytest.fixture
def corpus(tiny_cfg):
    d = tiny_cfg.datagen
    return Corpus.synthetic_corpus(d.sample_rate, d.patch_len, d.synth_kinds)


@pytest.fixture
def noise(rng):
    return AudioBuffer(0.3 * rng.standard_normal(4096), 8000)


@pytest.fixture(scope="session")
def session_cfg(tmp_path_factory):
    doc = dict(TINY, run_dir=str(tmp_path_factory.mktemp("session_run")))
    return config_from_dict(doc).validate()


@pytest.fixture(scope="session")
def session_corpus(session_cfg):
    d = session_cfg.datagen
    return Corpus.synthetic_corpus(d.sample_rate, d.patch_len, d.synth_kinds)


@pytest.fixture(scope="session")
def trained_vae(session_cfg, session_corpus):
    """Tiny β-VAE, trained once per session."""
    return train_vae(session_cfg, session_corpus)


@pytest.fixture(scope="session")
def trained_e2e(session_cfg, session_corpus, trained_vae):
    """Tiny overdrive matcher on the frozen session encoder."""
    return train_e2e(session_cfg, "overdrive", session_corpus, trained_vae.checkpoint)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path
