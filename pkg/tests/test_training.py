"""
Training loop tests: memorization, determinism, frozen encoder, divergence
"""

import numpy as np
import pytest

from confidence_lab.core.exceptions import LengthError, ParameterError, TrainingDivergedError
from confidence_lab.models.data_models import DecoderMask, TokenAggregation, Utterance
from confidence_lab.models.records import DecodedRecord
from confidence_lab.models.transformer import EncoderDecoderModel, ModelConfig, convert_to_confidence_model, init_params
from confidence_lab.services import training_service
from confidence_lab.services.corpus_generator import generate_corpus
from confidence_lab.services.labeling_service import label_record
from confidence_lab.services.tokenizer import EOS_ID, tokenizer
from confidence_lab.services.training_service import (
    ConfidenceExample,
    TrainingConfig,
    build_confidence_examples,
    confidence_word_scores,
    train_asr,
    train_confidence_model,
)


@pytest.fixture
def config():
    return ModelConfig(
        feat_dim=4,
        d_model=16,
        n_heads=2,
        n_encoder_layers=1,
        n_decoder_layers=1,
        max_seq_len=32,
        ff_multiplier=2,
        dropout_rate=0.0,
    )


@pytest.fixture
def corpus(small_corpus_spec):
    return generate_corpus(small_corpus_spec)


def decoded_record(utterance, hypothesis):
    ids = tokenizer.tokenize(hypothesis) + [EOS_ID]
    return DecodedRecord(
        utterance_id=utterance.id,
        reference=utterance.text,
        hypothesis=hypothesis,
        token_ids=ids,
        token_probs=[0.9] * len(ids),
        word_final_indices=tokenizer.word_final_indices(ids, use_markers=True),
    )


@pytest.fixture
def labeled_records(corpus):
    """Every other hypothesis has its first word replaced, so both labels occur"""
    records = []
    for i, utterance in enumerate(corpus):
        words = utterance.words
        if i % 2:
            words = ["zq"] + words[1:]
        records.append(label_record(decoded_record(utterance, " ".join(words))))
    return records


class TestAsrTraining:
    def test_memorizes_one_utterance(self, config):
        frames = np.random.default_rng(0).normal(size=(6, config.feat_dim))
        utterance = Utterance(id="u", text="ab c", frames=frames)
        result = train_asr([utterance], config, TrainingConfig(lr=1e-2, batch_size=1, max_steps=400), seed=1)
        assert result.losses[-1] < 0.01
        model = EncoderDecoderModel(result.params).eval()
        decoded = model.greedy_decode(model.encode(frames), max_len=10)
        assert decoded.tokens == tokenizer.tokenize("ab c") + [EOS_ID]

    def test_deterministic(self, config, corpus):
        hyper = TrainingConfig(lr=5e-3, batch_size=4, max_steps=6)
        first = train_asr(corpus, config, hyper, seed=2)
        second = train_asr(corpus, config, hyper, seed=2)
        assert first.losses == second.losses
        for name in first.params.names():
            np.testing.assert_array_equal(first.params[name].data, second.params[name].data)

    def test_loss_decreases(self, config, corpus):
        result = train_asr(corpus, config, TrainingConfig(lr=5e-3, batch_size=4, epochs=5), seed=0)
        means = result.epoch_means()
        assert len(means) == 5
        assert means[-1] < means[0]

    def test_learning_rate_decays_linearly(self, config, corpus):
        result = train_asr(corpus, config, TrainingConfig(lr=1e-3, batch_size=5, epochs=2), seed=0)
        assert result.steps_per_epoch == 4
        np.testing.assert_allclose(result.lrs, [1e-3 * (1 - s / 8) for s in range(8)])
        assert [r.step for r in result.loss_records()] == list(range(8))

    def test_empty_corpus(self, config):
        with pytest.raises(ParameterError):
            train_asr([], config)

    def test_reference_too_long(self, config):
        utterance = Utterance(id="long", text="a" * 40, frames=np.zeros((4, config.feat_dim)))
        with pytest.raises(LengthError):
            train_asr([utterance], config)

    def test_divergence_is_reported(self, config, corpus, monkeypatch):
        original = training_service.scale
        monkeypatch.setattr(training_service, "scale", lambda tensor, weight: original(tensor, float("nan")))
        with pytest.raises(TrainingDivergedError) as exc:
            train_asr(corpus, config, TrainingConfig(batch_size=4, max_steps=3))
        assert exc.value.step == 0


class TestConfidenceExamples:
    def test_targets_and_masks(self):
        ids = tokenizer.tokenize("ab cd") + [EOS_ID]
        example = ConfidenceExample("u", np.zeros((2, 4)), ids, [2, 5], [1, 0])
        np.testing.assert_array_equal(example.targets(), [1, 1, 1, 0, 0, 0])
        np.testing.assert_array_equal(example.loss_mask(all_tokens=False), [0, 0, 1, 0, 0, 1])
        np.testing.assert_array_equal(example.loss_mask(all_tokens=True), [1] * 6)

    def test_word_less_records_are_skipped(self, corpus, labeled_records):
        empty = label_record(decoded_record(corpus[0], ""))
        examples = build_confidence_examples([empty] + labeled_records, corpus, max_seq_len=32)
        assert len(examples) == len(labeled_records)

    def test_missing_manifest_entry(self, corpus, labeled_records):
        with pytest.raises(ParameterError):
            build_confidence_examples(labeled_records, corpus[1:], max_seq_len=32)


class TestConfidenceTraining:
    @pytest.fixture
    def asr(self, config):
        return init_params(config, seed=4)

    @pytest.fixture
    def examples(self, labeled_records, corpus):
        return build_confidence_examples(labeled_records, corpus, max_seq_len=32)

    def test_frozen_encoder_is_untouched(self, asr, examples):
        result = train_confidence_model(asr, examples, hyperparams=TrainingConfig(lr=5e-3, batch_size=4, max_steps=200))
        assert len(result.losses) == 200
        encoder = [name for name in asr.names() if name.startswith("encoder.")]
        assert encoder
        for name in encoder:
            np.testing.assert_array_equal(result.params[name].data, asr[name].data)
        moved = [
            name for name in asr.names()
            if name.startswith("decoder.") and not np.array_equal(result.params[name].data, asr[name].data)
        ]
        assert moved
        assert np.any(result.params["head.confidence.weight"].data != 0.0)

    def test_unfrozen_encoder_moves(self, asr, examples):
        result = train_confidence_model(asr, examples, freeze_encoder=False, hyperparams=TrainingConfig(lr=1e-2, batch_size=4, max_steps=5))
        assert not np.array_equal(result.params["encoder.input_proj.weight"].data, asr["encoder.input_proj.weight"].data)

    @pytest.mark.parametrize("mask", list(DecoderMask))
    def test_deterministic(self, asr, examples, mask):
        hyper = TrainingConfig(lr=5e-3, batch_size=4, max_steps=8)
        first = train_confidence_model(asr, examples, mask=mask, hyperparams=hyper, seed=3)
        second = train_confidence_model(asr, examples, mask=mask, hyperparams=hyper, seed=3)
        assert first.losses == second.losses
        assert first.params.config.decoder_mask == mask

    def test_loss_decreases(self, asr, examples):
        result = train_confidence_model(asr, examples, hyperparams=TrainingConfig(lr=1e-2, batch_size=4, epochs=8))
        means = result.epoch_means()
        assert means[-1] < means[0]

    def test_all_token_loss_variant_runs(self, asr, examples):
        result = train_confidence_model(asr, examples, loss_on_all_tokens=True, hyperparams=TrainingConfig(batch_size=4, max_steps=3))
        assert len(result.losses) == 3 and all(np.isfinite(result.losses))

    def test_asr_weights_are_not_modified(self, asr, examples):
        before = {name: asr[name].data.copy() for name in asr.names()}
        train_confidence_model(asr, examples, freeze_encoder=False, hyperparams=TrainingConfig(batch_size=4, max_steps=3))
        for name, data in before.items():
            np.testing.assert_array_equal(asr[name].data, data)


class TestWordScores:
    def test_untrained_head_scores_one_half(self, config, corpus, labeled_records):
        model = convert_to_confidence_model(init_params(config, seed=0))
        scores = confidence_word_scores(model, labeled_records, corpus)
        assert [len(s) for s in scores] == [len(r.labels) for r in labeled_records]
        assert all(v == 0.5 for s in scores for v in s)

    def test_word_less_records_score_empty(self, config, corpus):
        model = convert_to_confidence_model(init_params(config, seed=0))
        empty = label_record(decoded_record(corpus[0], ""))
        assert confidence_word_scores(model, [empty], corpus, TokenAggregation.MIN) == [[]]

    def test_missing_manifest_entry(self, config, corpus, labeled_records):
        model = convert_to_confidence_model(init_params(config, seed=0))
        with pytest.raises(ParameterError):
            confidence_word_scores(model, labeled_records[:1], [])
