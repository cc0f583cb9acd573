"""
Labeling service
Reference-hypothesis word alignment, binary correctness labels and
token-to-word confidence aggregation
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from ..core.exceptions import LabelingError
from ..models.data_models import Alignment, EditKind, EditOp, LabeledHypothesis, TokenAggregation
from ..models.records import DecodedRecord, LabeledRecord

logger = logging.getLogger(__name__)


def _suffix_costs(ref: Sequence[str], hyp: Sequence[str]) -> np.ndarray:
    """costs[i, j] = edit distance between ref[i:] and hyp[j:] with unit costs"""
    n, m = len(ref), len(hyp)
    costs = np.zeros((n + 1, m + 1), dtype=np.int64)
    costs[n, :] = np.arange(m, -1, -1)
    costs[:, m] = np.arange(n, -1, -1)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            diagonal = costs[i + 1, j + 1] + (0 if ref[i] == hyp[j] else 1)
            costs[i, j] = min(diagonal, costs[i + 1, j] + 1, costs[i, j + 1] + 1)
    return costs


def align(ref_words: Sequence[str], hyp_words: Sequence[str]) -> Alignment:
    """Levenshtein-optimal word alignment.

    Traced forward from the start; at equal cost MATCH/SUBSTITUTE is preferred,
    then DELETE, then INSERT.
    """
    costs = _suffix_costs(ref_words, hyp_words)
    n, m = len(ref_words), len(hyp_words)
    ops: List[EditOp] = []
    i = j = 0
    while i < n or j < m:
        here = costs[i, j]
        if i < n and j < m:
            same = ref_words[i] == hyp_words[j]
            if here == costs[i + 1, j + 1] + (0 if same else 1):
                ops.append(EditOp(EditKind.MATCH if same else EditKind.SUBSTITUTE, i, j))
                i, j = i + 1, j + 1
                continue
        if i < n and here == costs[i + 1, j] + 1:
            ops.append(EditOp(EditKind.DELETE, ref_index=i))
            i += 1
            continue
        ops.append(EditOp(EditKind.INSERT, hyp_index=j))
        j += 1
    return Alignment(ops)


def levenshtein_distance(ref_words: Sequence[str], hyp_words: Sequence[str]) -> int:
    return int(_suffix_costs(ref_words, hyp_words)[0, 0])


def label_words(alignment: Alignment, hyp_words: Sequence[str]) -> LabeledHypothesis:
    """1 for hypothesis words in a MATCH, 0 for substitutions and insertions"""
    labels: List[Optional[int]] = [None] * len(hyp_words)
    deletions = 0
    for op in alignment.ops:
        if op.kind == EditKind.DELETE:
            deletions += 1
            continue
        if op.hyp_index is None or not 0 <= op.hyp_index < len(hyp_words) or labels[op.hyp_index] is not None:
            raise LabelingError(f"alignment does not cover the hypothesis exactly once (op {op})")
        labels[op.hyp_index] = 1 if op.kind == EditKind.MATCH else 0
    if any(label is None for label in labels):
        raise LabelingError("alignment leaves hypothesis words unlabeled")
    return LabeledHypothesis(words=list(hyp_words), labels=[int(label) for label in labels], deletions=deletions)


def aggregate_token_confidence(
    token_confidences: Sequence[float],
    word_final_indices: Sequence[int],
    strategy: TokenAggregation = TokenAggregation.LAST,
) -> List[float]:
    """Word confidences from token confidences; LAST takes the word-final token"""
    strategy = TokenAggregation(strategy)
    values = [float(c) for c in token_confidences]
    previous = -1
    for final in word_final_indices:
        if final <= previous or final >= len(values):
            raise LabelingError(f"word-final indices must be strictly increasing and below {len(values)}: {list(word_final_indices)}")
        previous = final

    scores = []
    start = 0
    for final in word_final_indices:
        span = values[start:final + 1]
        if not span:
            raise LabelingError(f"empty token span ending at {final}")
        if strategy == TokenAggregation.LAST:
            scores.append(span[-1])
        elif strategy == TokenAggregation.MIN:
            scores.append(min(span))
        elif strategy == TokenAggregation.MAX:
            scores.append(max(span))
        elif strategy == TokenAggregation.MEAN:
            scores.append(math.fsum(span) / len(span))
        else:
            scores.append(math.prod(span))
        start = final + 1
    return scores


def label_record(record: DecodedRecord, word_confidences: Optional[Sequence[float]] = None) -> LabeledRecord:
    """Align one decoded record against its reference and attach labels"""
    ref_words = record.reference.split()
    hyp_words = record.hypothesis.split()
    alignment = align(ref_words, hyp_words)
    labeled = label_words(alignment, hyp_words)
    return LabeledRecord(
        **record.model_dump(),
        labels=labeled.labels,
        substitutions=alignment.substitutions,
        insertions=alignment.insertions,
        deletions=alignment.deletions,
        reference_words=len(ref_words),
        word_confidences=None if word_confidences is None else [float(c) for c in word_confidences],
    )
