"""
Synthetic corpus and manifest storage tests
"""

import numpy as np
import pytest
from pydantic import ValidationError

from confidence_lab.core.exceptions import ParameterError, RecordFormatError
from confidence_lab.models.data_models import Split
from confidence_lab.services.corpus_generator import (
    CorpusGenerator,
    CorpusSpec,
    generate_corpus,
    generate_shifted_corpus,
    read_manifest,
    write_manifest,
)
from confidence_lab.services.tokenizer import tokenizer
from confidence_lab.utils.record_storage import read_json_document, read_records, write_records


@pytest.fixture
def spec():
    return CorpusSpec(vocab_size=12, n_utterances=30, feat_dim=3, noise_sigma=0.5, seed=5)


class TestGeneration:
    def test_deterministic(self, spec):
        first, second = generate_corpus(spec), generate_corpus(spec)
        assert [u.text for u in first] == [u.text for u in second]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_seed_changes_corpus(self, spec):
        other = spec.model_copy(update={"seed": 6})
        assert [u.text for u in generate_corpus(spec)] != [u.text for u in generate_corpus(other)]

    def test_frame_count_follows_tokens(self, spec):
        for utterance in generate_corpus(spec):
            expected = spec.frames_per_token * len(tokenizer.tokenize(utterance.text))
            assert utterance.frames.shape == (expected, spec.feat_dim)
            assert utterance.frame_count <= spec.max_frames()

    def test_noiseless_frames_repeat_prototypes(self, spec):
        clean = spec.model_copy(update={"noise_sigma": 0.0})
        generator = CorpusGenerator(clean)
        seen = {}
        for utterance in generator.generate():
            tokens = tokenizer.tokenize(utterance.text)
            for position, token in enumerate(tokens):
                for k in range(clean.frames_per_token):
                    frame = utterance.frames[position * clean.frames_per_token + k]
                    if token in seen:
                        assert np.array_equal(frame, seen[token])
                    seen[token] = frame
        assert len(seen) > 3

    def test_sentence_lengths_within_range(self, spec):
        low, high = spec.sentence_length
        assert all(low <= len(u.words) <= high for u in generate_corpus(spec))

    def test_vocabulary_has_confusable_pairs(self):
        generator = CorpusGenerator(CorpusSpec(vocab_size=20, confusable_fraction=0.5, feat_dim=2, n_utterances=0))
        words = generator.vocabulary
        assert len(words) == len(set(words)) == 20

        def one_edit(a, b):
            return len(a) == len(b) and sum(x != y for x, y in zip(a, b)) == 1

        confusable = [w for w in words[10:] if any(one_edit(w, base) for base in words[:10])]
        assert len(confusable) == 10

    def test_ids_are_unique_and_ordered(self, spec):
        ids = [u.id for u in generate_corpus(spec)]
        assert ids == [f"utt-{i:05d}" for i in range(spec.n_utterances)]

    def test_splits_follow_fractions(self, spec):
        corpus = generate_corpus(spec)
        counts = {s: sum(u.split == s for u in corpus) for s in Split}
        assert counts == {Split.ASR_TRAIN: 18, Split.CONF_TRAIN: 6, Split.EVAL: 6}

    def test_zero_utterances(self, spec):
        assert generate_corpus(spec.model_copy(update={"n_utterances": 0})) == []


class TestShiftedCorpus:
    def test_eval_only_with_novel_words(self, spec):
        vocabulary = set(CorpusGenerator(spec).vocabulary)
        shifted = generate_shifted_corpus(spec, noise_scale=2.0, novel_word_fraction=0.5, n_utterances=40)
        assert len(shifted) == 40
        assert all(u.split == Split.EVAL and u.id.startswith("ood-") for u in shifted)
        words = {w for u in shifted for w in u.words}
        assert words - vocabulary

    def test_no_novel_words(self, spec):
        vocabulary = set(CorpusGenerator(spec).vocabulary)
        shifted = generate_shifted_corpus(spec, novel_word_fraction=0.0, n_utterances=20)
        assert {w for u in shifted for w in u.words} <= vocabulary

    def test_bad_fraction(self, spec):
        with pytest.raises(ParameterError):
            generate_shifted_corpus(spec, novel_word_fraction=1.5)


@pytest.mark.parametrize(
    "overrides",
    [
        {"word_length": (0, 3)},
        {"sentence_length": (4, 2)},
        {"split_fractions": (0.5, 0.5, 0.5)},
        {"noise_sigma": -1.0},
        {"vocab_size": 0},
    ],
)
def test_invalid_spec(overrides):
    with pytest.raises(ValidationError):
        CorpusSpec(**overrides)


class TestManifest:
    def test_round_trip_is_bit_exact(self, tmp_path, spec):
        corpus = generate_corpus(spec)
        loaded = read_manifest(write_manifest(corpus, tmp_path / "m.jsonl"))
        assert [(u.id, u.text, u.split) for u in loaded] == [(u.id, u.text, u.split) for u in corpus]
        for a, b in zip(loaded, corpus):
            assert a.frames.tobytes() == b.frames.tobytes()

    def test_empty_corpus_round_trip(self, tmp_path):
        path = write_manifest([], tmp_path / "empty.jsonl")
        assert path.read_text().count("\n") == 1
        assert read_manifest(path) == []

    def test_zero_byte_file(self, tmp_path):
        path = tmp_path / "zero.jsonl"
        path.write_bytes(b"")
        assert read_manifest(path) == []

    def test_truncated_final_line(self, tmp_path, spec):
        path = write_manifest(generate_corpus(spec)[:3], tmp_path / "m.jsonl")
        text = path.read_text()
        path.write_text(text[: len(text) - 20])
        with pytest.raises(RecordFormatError) as exc:
            read_manifest(path)
        assert exc.value.line_number == 4

    def test_corrupt_line_is_located(self, tmp_path, spec):
        path = write_manifest(generate_corpus(spec)[:3], tmp_path / "m.jsonl")
        lines = path.read_text().splitlines()
        lines[2] = lines[2].replace('"frames":"', '"frames":"!!')
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(RecordFormatError) as exc:
            read_manifest(path)
        assert exc.value.line_number == 3

    def test_invalid_utf8_is_located(self, tmp_path, spec):
        path = write_manifest(generate_corpus(spec)[:3], tmp_path / "m.jsonl")
        lines = path.read_bytes().split(b"\n")
        lines[2] = lines[2].replace(b'"text":"', b'"text":"\xff', 1)
        path.write_bytes(b"\n".join(lines))
        with pytest.raises(RecordFormatError, match="UTF-8") as exc:
            read_manifest(path)
        assert exc.value.line_number == 3
        assert exc.value.path == str(path)

    def test_invalid_utf8_in_json_document(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_bytes(b'{\n  "seed": "\xfe"\n}\n')
        with pytest.raises(RecordFormatError) as exc:
            read_json_document(path)
        assert exc.value.line_number == 2

    def test_wrong_stream_kind(self, tmp_path, spec):
        path = write_manifest(generate_corpus(spec)[:1], tmp_path / "m.jsonl")
        with pytest.raises(RecordFormatError, match="cwl-decoded"):
            read_records(path, "cwl-decoded", type(None))

    def test_duplicate_ids(self, tmp_path, spec):
        corpus = generate_corpus(spec)[:2]
        corpus[1].id = corpus[0].id
        with pytest.raises(RecordFormatError, match="duplicate"):
            read_manifest(write_manifest(corpus, tmp_path / "m.jsonl"))

    def test_failed_write_leaves_no_file(self, tmp_path):
        def records():
            raise RuntimeError("boom")
            yield  # pragma: no cover

        target = tmp_path / "partial.jsonl"
        with pytest.raises(RuntimeError):
            write_records(target, "cwl-manifest", records())
        assert list(tmp_path.iterdir()) == []
