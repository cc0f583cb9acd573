"""
Alignment, labeling and token aggregation tests, including exhaustive and
independent-distance oracles
"""

import itertools

import numpy as np
import pytest

from confidence_lab.core.exceptions import LabelingError
from confidence_lab.models.data_models import Alignment, EditKind, EditOp, TokenAggregation
from confidence_lab.models.records import DecodedRecord
from confidence_lab.services.labeling_service import (
    aggregate_token_confidence,
    align,
    label_record,
    label_words,
    levenshtein_distance,
)
from confidence_lab.services.metrics_service import wer

M, S, I, D = EditKind.MATCH, EditKind.SUBSTITUTE, EditKind.INSERT, EditKind.DELETE


def kinds(alignment):
    return [op.kind for op in alignment.ops]


def distance_only(ref, hyp):
    """Two-row Wagner-Fischer distance, independent of align()"""
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i]
        for j, h in enumerate(hyp, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (r != h)))
        previous = current
    return previous[-1]


def all_alignment_costs(ref, hyp):
    """Cost of every monotone alignment, by recursion over the first operation"""
    if not ref:
        return {len(hyp)}
    if not hyp:
        return {len(ref)}
    costs = set()
    costs |= {c + (ref[0] != hyp[0]) for c in all_alignment_costs(ref[1:], hyp[1:])}
    costs |= {c + 1 for c in all_alignment_costs(ref[1:], hyp)}
    costs |= {c + 1 for c in all_alignment_costs(ref, hyp[1:])}
    return costs


def assert_covers_in_order(alignment, ref, hyp):
    assert [op.ref_index for op in alignment.ops if op.ref_index is not None] == list(range(len(ref)))
    assert [op.hyp_index for op in alignment.ops if op.hyp_index is not None] == list(range(len(hyp)))
    for op in alignment.ops:
        if op.kind == M:
            assert ref[op.ref_index] == hyp[op.hyp_index]
        if op.kind == S:
            assert ref[op.ref_index] != hyp[op.hyp_index]


class TestAlign:
    def test_identity(self):
        assert kinds(align(["the", "cat", "sat"], ["the", "cat", "sat"])) == [M, M, M]

    def test_substitution(self):
        assert kinds(align(["the", "cat", "sat"], ["the", "bat", "sat"])) == [M, S, M]

    def test_insertion(self):
        alignment = align(["the", "cat"], ["the", "the", "cat"])
        assert kinds(alignment) == [M, I, M]
        assert alignment.errors == 1

    def test_both_empty(self):
        assert align([], []).ops == []

    def test_empty_hypothesis(self):
        assert kinds(align(["a", "b"], [])) == [D, D]

    def test_substitution_preferred_over_delete_insert(self):
        assert kinds(align(["a"], ["b"])) == [S]

    def test_substitution_preferred_at_equal_cost(self):
        # delete a, match b, insert c costs the same
        assert kinds(align(["a", "b"], ["b", "c"])) == [S, S]

    def test_leading_deletion(self):
        assert kinds(align(["a", "b"], ["b"])) == [D, M]

    def test_cost_matches_exhaustive_enumeration(self):
        alphabet = ["x", "y", "z"]
        for n in range(5):
            for m in range(5):
                for ref in itertools.product(alphabet[:2] if n + m > 6 else alphabet, repeat=n):
                    for hyp in itertools.product(alphabet[:2] if n + m > 6 else alphabet, repeat=m):
                        alignment = align(list(ref), list(hyp))
                        assert alignment.errors == min(all_alignment_costs(ref, hyp))
                        assert_covers_in_order(alignment, ref, hyp)

    def test_cost_matches_independent_distance(self):
        r = np.random.default_rng(17)
        vocab = ["a", "b", "c", "d", "e"]
        for _ in range(500):
            ref = [vocab[i] for i in r.integers(0, 5, size=r.integers(0, 11))]
            hyp = [vocab[i] for i in r.integers(0, 5, size=r.integers(0, 11))]
            alignment = align(ref, hyp)
            assert alignment.errors == distance_only(ref, hyp) == levenshtein_distance(ref, hyp)
            assert_covers_in_order(alignment, ref, hyp)
            if ref:
                assert wer([alignment]) == distance_only(ref, hyp) / len(ref)

    def test_deterministic(self):
        ref, hyp = ["a", "b", "a", "b"], ["b", "a", "b", "a"]
        assert align(ref, hyp) == align(ref, hyp)


class TestLabelWords:
    def test_identity(self):
        hyp = ["the", "cat"]
        labeled = label_words(align(hyp, hyp), hyp)
        assert labeled.labels == [1, 1] and labeled.deletions == 0

    def test_substitution(self):
        hyp = ["the", "bat", "sat"]
        assert label_words(align(["the", "cat", "sat"], hyp), hyp).labels == [1, 0, 1]

    def test_insertion_is_incorrect(self):
        hyp = ["the", "the", "cat"]
        assert label_words(align(["the", "cat"], hyp), hyp).labels == [1, 0, 1]

    def test_empty_hypothesis(self):
        labeled = label_words(align(["a", "b", "c"], []), [])
        assert labeled.labels == [] and labeled.deletions == 3

    def test_coverage_mismatch(self):
        with pytest.raises(LabelingError):
            label_words(Alignment([EditOp(M, 0, 0)]), ["a", "b"])
        with pytest.raises(LabelingError):
            label_words(Alignment([EditOp(M, 0, 0), EditOp(I, hyp_index=0)]), ["a"])

    def test_length_always_matches(self):
        r = np.random.default_rng(2)
        for _ in range(100):
            ref = ["ab"[i] for i in r.integers(0, 2, size=r.integers(0, 6))]
            hyp = ["ab"[i] for i in r.integers(0, 2, size=r.integers(0, 6))]
            assert len(label_words(align(ref, hyp), hyp).labels) == len(hyp)


class TestAggregate:
    def test_last(self):
        assert aggregate_token_confidence([0.9, 0.4], [1]) == [0.4]

    def test_product(self):
        assert aggregate_token_confidence([0.9, 0.4], [1], TokenAggregation.PRODUCT)[0] == pytest.approx(0.36)

    def test_min_mean_max(self):
        values = [0.2, 0.8, 0.5, 0.9, 0.1]
        finals = [2, 4]
        assert aggregate_token_confidence(values, finals, TokenAggregation.MIN) == [0.2, 0.1]
        assert aggregate_token_confidence(values, finals, TokenAggregation.MAX) == [0.8, 0.9]
        assert aggregate_token_confidence(values, finals, TokenAggregation.MEAN) == pytest.approx([0.5, 0.5])

    def test_singletons_agree_across_strategies(self):
        values = [0.3, 0.6, 0.9]
        results = {s: aggregate_token_confidence(values, [0, 1, 2], s) for s in TokenAggregation}
        assert all(r == pytest.approx(values) for r in results.values())

    @pytest.mark.parametrize("finals", [[1, 1], [2, 1], [0, 5], [-1]])
    def test_invalid_indices(self, finals):
        with pytest.raises(LabelingError):
            aggregate_token_confidence([0.5] * 3, finals)


def test_label_record_carries_counts():
    record = DecodedRecord(
        utterance_id="u1",
        reference="the cat sat",
        hypothesis="the bat",
        token_ids=[23, 11, 8, 3, 5, 4, 23, 2],
        token_probs=[0.9] * 8,
        word_final_indices=[3, 7],
    )
    labeled = label_record(record, [0.8, 0.2])
    assert labeled.labels == [1, 0]
    assert (labeled.substitutions, labeled.insertions, labeled.deletions) == (1, 0, 1)
    assert labeled.reference_words == 3
    assert labeled.word_confidences == [0.8, 0.2]
