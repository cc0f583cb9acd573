"""
Transcription service
Greedy hypothesis decoding with the toy ASR and the softmax word-confidence baseline
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from ..core.exceptions import ConfigurationError, ParameterError
from ..models.data_models import BaselineStrategy, HeadKind, Hypothesis, Utterance
from ..models.records import DecodedRecord
from ..models.transformer import EncoderDecoderModel, ModelParams
from .tokenizer import Tokenizer, tokenizer as default_tokenizer

logger = logging.getLogger(__name__)


def build_hypothesis(
    token_ids: Sequence[int],
    token_probs: Sequence[float],
    truncated: bool = False,
    tokenizer: Tokenizer = default_tokenizer,
) -> Hypothesis:
    """Attach marker-based word boundaries and detokenized words to decoded tokens"""
    ids = [int(t) for t in token_ids]
    return Hypothesis(
        token_ids=ids,
        token_probs=[float(p) for p in token_probs],
        word_final_indices=tokenizer.word_final_indices(ids, use_markers=True),
        words=tokenizer.detokenize(ids).split(),
        truncated=truncated,
    )


def transcribe(
    model: ModelParams,
    audio: np.ndarray,
    max_len: Optional[int] = None,
    tokenizer: Tokenizer = default_tokenizer,
) -> Hypothesis:
    """Greedy-decode one utterance into a Hypothesis"""
    if model.config.head_kind != HeadKind.LM:
        raise ConfigurationError("transcribe needs an LM-head (ASR) model")
    runner = EncoderDecoderModel(model).eval()
    features = runner.encode(audio)
    result = runner.greedy_decode(features, max_len=max_len)
    return build_hypothesis(result.tokens, result.probs, result.truncated, tokenizer)


def transcribe_corpus(model: ModelParams, corpus: Sequence[Utterance], max_len: Optional[int] = None) -> List[DecodedRecord]:
    records = []
    for i, utterance in enumerate(corpus, start=1):
        hypothesis = transcribe(model, utterance.frames, max_len=max_len)
        records.append(DecodedRecord.from_hypothesis(utterance.id, utterance.text, hypothesis))
        if i % 50 == 0:
            logger.info(f"🎙️ Decoded {i}/{len(corpus)} utterances")
    truncated = sum(1 for r in records if r.truncated)
    if truncated:
        logger.warning(f"⚠️ {truncated} hypothesis(es) hit the decode length limit")
    return records


def _aggregate(values: Sequence[float], strategy: BaselineStrategy) -> float:
    if strategy == BaselineStrategy.MIN:
        return min(values)
    if strategy == BaselineStrategy.MAX:
        return max(values)
    if strategy == BaselineStrategy.SUM:
        return math.fsum(values)
    if strategy == BaselineStrategy.MEAN:
        return math.fsum(values) / len(values)
    if strategy == BaselineStrategy.PRODUCT:
        return math.prod(values)
    raise ParameterError(f"unknown baseline strategy {strategy}")


def softmax_word_confidence(
    hypothesis: Hypothesis,
    strategy: BaselineStrategy = BaselineStrategy.MIN,
    tokenizer: Tokenizer = default_tokenizer,
) -> List[float]:
    """Per-word score from the ASR's own token probabilities; boundary markers are excluded"""
    if not hypothesis.words:
        raise ParameterError("softmax_word_confidence needs a hypothesis with at least one word")
    strategy = BaselineStrategy(strategy)
    scores = []
    for span in hypothesis.word_spans():
        values = [hypothesis.token_probs[i] for i in span if not tokenizer.is_marker(hypothesis.token_ids[i])]
        scores.append(_aggregate(values, strategy))
    return scores
