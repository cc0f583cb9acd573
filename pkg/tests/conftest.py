"""
Shared fixtures for the confidence lab test suite
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from confidence_lab.models.transformer import ModelConfig, init_params
from confidence_lab.services.corpus_generator import CorpusSpec


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Small enough for finite differences over the whole model"""
    return ModelConfig(
        vocab_size=30,
        feat_dim=4,
        d_model=8,
        n_heads=2,
        n_encoder_layers=1,
        n_decoder_layers=1,
        max_seq_len=16,
        ff_multiplier=2,
        dropout_rate=0.0,
    )


@pytest.fixture
def tiny_asr(tiny_config):
    return init_params(tiny_config, seed=3)


@pytest.fixture
def small_corpus_spec() -> CorpusSpec:
    return CorpusSpec(
        vocab_size=8,
        word_length=(2, 3),
        sentence_length=(1, 3),
        noise_sigma=0.3,
        feat_dim=4,
        n_utterances=20,
        seed=11,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
