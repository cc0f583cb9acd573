"""
Synthetic Corpus Generator
==========================

Desk-scale stand-in for real speech data. A fixed random word vocabulary (part of
it one-character edits of other words) is sampled into sentences; every token of
the reference text is rendered as ``frames_per_token`` copies of a fixed random
prototype vector plus Gaussian noise. Audio therefore predicts text, yet the
confusable words concentrate recognition errors on substitutions.

Also provides shifted (out-of-domain) evaluation sets and manifest I/O.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.exceptions import ParameterError, RecordFormatError
from ..models.data_models import Split, Utterance
from ..models.records import MANIFEST_KIND, ManifestRecord
from ..utils.record_storage import read_records, write_records
from .tokenizer import Tokenizer, tokenizer as default_tokenizer

logger = logging.getLogger(__name__)

_MAX_ATTEMPTS_PER_WORD = 2000


class CorpusSpec(BaseModel):
    """Knobs of the synthetic corpus"""
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(40, gt=0)
    word_length: Tuple[int, int] = (2, 5)
    confusable_fraction: float = Field(0.3, ge=0.0, le=1.0)
    sentence_length: Tuple[int, int] = (2, 5)
    noise_sigma: float = Field(1.5, ge=0.0)
    frames_per_token: int = Field(2, ge=1)
    feat_dim: int = Field(16, gt=0)
    n_utterances: int = Field(400, ge=0)
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "CorpusSpec":
        for name in ("word_length", "sentence_length"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise ValueError(f"{name} must be a nonempty range of positive integers, got {(low, high)}")
        if any(f < 0 for f in self.split_fractions) or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split_fractions must be non-negative and sum to 1, got {self.split_fractions}")
        return self

    def max_frames(self) -> int:
        """Frame count of the longest possible utterance"""
        words = self.sentence_length[1]
        return self.frames_per_token * (words * self.word_length[1] + words - 1)


class CorpusGenerator:
    """Builds the vocabulary and acoustic prototypes once, then samples corpora"""

    def __init__(self, spec: CorpusSpec, tokenizer: Tokenizer = default_tokenizer):
        self.spec = spec
        self.tokenizer = tokenizer
        vocab_seq, proto_seq, self._sentence_seq, self._noise_seq, self._split_seq = np.random.SeedSequence(spec.seed).spawn(5)
        self.vocabulary = self._build_vocabulary(np.random.default_rng(vocab_seq))
        self.prototypes = self._build_prototypes(np.random.default_rng(proto_seq))

    # ------------------------------------------
    # vocabulary and prototypes
    # ------------------------------------------

    def _random_word(self, rng: np.random.Generator) -> str:
        low, high = self.spec.word_length
        length = int(rng.integers(low, high + 1))
        letters = self.tokenizer.alphabet
        return "".join(letters[int(i)] for i in rng.integers(0, len(letters), size=length))

    def _build_vocabulary(self, rng: np.random.Generator) -> List[str]:
        spec = self.spec
        n_confusable = int(round(spec.confusable_fraction * spec.vocab_size))
        n_base = max(1, spec.vocab_size - n_confusable)
        words: List[str] = []
        seen = set()
        budget = _MAX_ATTEMPTS_PER_WORD * spec.vocab_size

        while len(words) < n_base:
            budget -= 1
            if budget < 0:
                raise ParameterError("cannot draw enough distinct words; widen word_length or shrink vocab_size")
            word = self._random_word(rng)
            if word not in seen:
                seen.add(word)
                words.append(word)

        letters = self.tokenizer.alphabet
        while len(words) < spec.vocab_size:
            budget -= 1
            if budget < 0:
                raise ParameterError("cannot draw enough confusable words; lower confusable_fraction")
            base = words[int(rng.integers(0, n_base))]
            position = int(rng.integers(0, len(base)))
            replacement = letters[int(rng.integers(0, len(letters)))]
            if replacement == base[position]:
                continue
            word = base[:position] + replacement + base[position + 1:]
            if word not in seen:
                seen.add(word)
                words.append(word)
        logger.info(f"📚 Vocabulary built: {len(words)} words ({spec.vocab_size - n_base} confusable)")
        return words

    def _build_prototypes(self, rng: np.random.Generator) -> Dict[int, np.ndarray]:
        token_ids = sorted(self.tokenizer.id_to_char)
        return {token: rng.normal(0.0, 1.0, size=self.spec.feat_dim) for token in token_ids}

    # ------------------------------------------
    # sampling
    # ------------------------------------------

    def render_frames(self, text: str, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
        """Prototype frames for every token of text plus Gaussian noise"""
        tokens = self.tokenizer.tokenize(text)
        repeat = self.spec.frames_per_token
        clean = np.array([self.prototypes[t] for t in tokens for _ in range(repeat)]).reshape(len(tokens) * repeat, self.spec.feat_dim)
        if noise_sigma == 0.0:
            return clean
        return clean + noise_sigma * rng.normal(0.0, 1.0, size=clean.shape)

    def _sample_sentence(self, rng: np.random.Generator, words: Sequence[str]) -> str:
        low, high = self.spec.sentence_length
        count = int(rng.integers(low, high + 1))
        return " ".join(words[int(i)] for i in rng.integers(0, len(words), size=count))

    def _assign_splits(self, count: int) -> List[Split]:
        rng = np.random.default_rng(self._split_seq)
        order = rng.permutation(count)
        n_asr = int(round(count * self.spec.split_fractions[0]))
        n_conf = int(round(count * self.spec.split_fractions[1]))
        splits = [Split.EVAL] * count
        for rank, index in enumerate(order):
            if rank < n_asr:
                splits[index] = Split.ASR_TRAIN
            elif rank < n_asr + n_conf:
                splits[index] = Split.CONF_TRAIN
        return splits

    def generate(self) -> List[Utterance]:
        spec = self.spec
        sentence_rng = np.random.default_rng(self._sentence_seq)
        noise_rng = np.random.default_rng(self._noise_seq)
        splits = self._assign_splits(spec.n_utterances)
        corpus = []
        for i in range(spec.n_utterances):
            text = self._sample_sentence(sentence_rng, self.vocabulary)
            frames = self.render_frames(text, spec.noise_sigma, noise_rng)
            corpus.append(Utterance(id=f"utt-{i:05d}", text=text, frames=frames, split=splits[i]))
        logger.info(f"✅ Generated corpus: {len(corpus)} utterances (sigma={spec.noise_sigma}, seed={spec.seed})")
        return corpus

    def generate_shifted(self, noise_scale: float = 2.0, novel_word_fraction: float = 0.2, n_utterances: int = 0) -> List[Utterance]:
        """EVAL-only corpus with stronger noise and words never seen in training"""
        if noise_scale < 0:
            raise ParameterError(f"noise_scale must be non-negative, got {noise_scale}")
        if not 0.0 <= novel_word_fraction <= 1.0:
            raise ParameterError(f"novel_word_fraction must be in [0, 1], got {novel_word_fraction}")
        count = n_utterances or max(1, int(round(self.spec.n_utterances * self.spec.split_fractions[2])))
        shift_seq, novel_seq, noise_seq = np.random.SeedSequence([self.spec.seed, 1]).spawn(3)

        novel: List[str] = []
        if novel_word_fraction > 0:
            novel_rng = np.random.default_rng(novel_seq)
            seen = set(self.vocabulary)
            target = max(1, int(round(novel_word_fraction * self.spec.vocab_size)))
            budget = _MAX_ATTEMPTS_PER_WORD * target
            while len(novel) < target:
                budget -= 1
                if budget < 0:
                    raise ParameterError("cannot draw enough novel words for the shifted corpus")
                word = self._random_word(novel_rng)
                if word not in seen:
                    seen.add(word)
                    novel.append(word)

        sentence_rng = np.random.default_rng(shift_seq)
        noise_rng = np.random.default_rng(noise_seq)
        sigma = self.spec.noise_sigma * noise_scale
        low, high = self.spec.sentence_length
        corpus = []
        for i in range(count):
            words = []
            for _ in range(int(sentence_rng.integers(low, high + 1))):
                pool = novel if novel and sentence_rng.random() < novel_word_fraction else self.vocabulary
                words.append(pool[int(sentence_rng.integers(0, len(pool)))])
            text = " ".join(words)
            corpus.append(Utterance(id=f"ood-{i:05d}", text=text, frames=self.render_frames(text, sigma, noise_rng), split=Split.EVAL))
        logger.info(f"✅ Generated shifted corpus: {count} utterances (sigma={sigma}, novel words={len(novel)})")
        return corpus


def generate_corpus(spec: CorpusSpec) -> List[Utterance]:
    """Pure function of spec (seed included)"""
    return CorpusGenerator(spec).generate()


def generate_shifted_corpus(spec: CorpusSpec, noise_scale: float = 2.0, novel_word_fraction: float = 0.2, n_utterances: int = 0) -> List[Utterance]:
    return CorpusGenerator(spec).generate_shifted(noise_scale, novel_word_fraction, n_utterances)


# ==========================================
# MANIFEST I/O
# ==========================================

def write_manifest(corpus: Sequence[Utterance], path: Union[str, Path]) -> Path:
    write_records(path, MANIFEST_KIND, (ManifestRecord.from_utterance(u) for u in corpus))
    return Path(path)


def read_manifest(path: Union[str, Path]) -> List[Utterance]:
    corpus = [record.to_utterance() for record in read_records(path, MANIFEST_KIND, ManifestRecord)]
    seen = set()
    for line_number, utterance in enumerate(corpus, start=2):
        if utterance.id in seen:
            raise RecordFormatError(str(path), line_number, f"duplicate utterance id {utterance.id}")
        seen.add(utterance.id)
    return corpus
