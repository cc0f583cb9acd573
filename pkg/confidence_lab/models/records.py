"""
Record Schemas
==============

Pydantic models for every line-delimited stream the pipeline writes:
manifests, decoded hypotheses, labeled hypotheses and training loss logs.
"""

import base64
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .data_models import Hypothesis, LabeledHypothesis, Split, Utterance

MANIFEST_KIND = "cwl-manifest"
DECODED_KIND = "cwl-decoded"
LABELED_KIND = "cwl-labeled"
LOSS_KIND = "cwl-loss-log"

_FLOAT = np.dtype("<f8")


# ==========================================
# MANIFEST
# ==========================================

class ManifestRecord(BaseModel):
    """One utterance with its frames as base64 little-endian float64"""
    id: str
    split: Split
    text: str
    shape: List[int] = Field(min_length=2, max_length=2)
    frames: str

    @model_validator(mode="after")
    def _check_payload(self) -> "ManifestRecord":
        try:
            raw = base64.b64decode(self.frames, validate=True)
        except ValueError as e:
            raise ValueError(f"frame payload is not base64: {e}") from e
        expected = self.shape[0] * self.shape[1] * _FLOAT.itemsize
        if len(raw) != expected:
            raise ValueError(f"frame payload has {len(raw)} bytes, shape {self.shape} needs {expected}")
        return self

    @classmethod
    def from_utterance(cls, utterance: Utterance) -> "ManifestRecord":
        frames = np.ascontiguousarray(utterance.frames, dtype=_FLOAT)
        return cls(
            id=utterance.id,
            split=utterance.split,
            text=utterance.text,
            shape=list(frames.shape),
            frames=base64.b64encode(frames.tobytes()).decode("ascii"),
        )

    def to_utterance(self) -> Utterance:
        raw = base64.b64decode(self.frames)
        frames = np.frombuffer(raw, dtype=_FLOAT).astype(np.float64).reshape(self.shape)
        return Utterance(id=self.id, text=self.text, frames=frames, split=self.split)


# ==========================================
# DECODED / LABELED HYPOTHESES
# ==========================================

class DecodedRecord(BaseModel):
    """Decoder output for one utterance"""
    utterance_id: str
    reference: str
    hypothesis: str
    token_ids: List[int]
    token_probs: List[float]
    word_final_indices: List[int]
    truncated: bool = False

    @model_validator(mode="after")
    def _check_lengths(self) -> "DecodedRecord":
        if len(self.token_probs) != len(self.token_ids):
            raise ValueError("token_probs and token_ids differ in length")
        if len(self.word_final_indices) != len(self.hypothesis.split()):
            raise ValueError("word_final_indices and hypothesis word count differ")
        return self

    @classmethod
    def from_hypothesis(cls, utterance_id: str, reference: str, hypothesis: Hypothesis) -> "DecodedRecord":
        return cls(
            utterance_id=utterance_id,
            reference=reference,
            hypothesis=hypothesis.text,
            token_ids=list(hypothesis.token_ids),
            token_probs=list(hypothesis.token_probs),
            word_final_indices=list(hypothesis.word_final_indices),
            truncated=hypothesis.truncated,
        )

    def to_hypothesis(self) -> Hypothesis:
        return Hypothesis(
            token_ids=list(self.token_ids),
            token_probs=list(self.token_probs),
            word_final_indices=list(self.word_final_indices),
            words=self.hypothesis.split(),
            truncated=self.truncated,
        )


class LabeledRecord(DecodedRecord):
    """Decoded record extended with alignment labels and word confidences"""
    labels: List[int]
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_words: int = 0
    word_confidences: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_labels(self) -> "LabeledRecord":
        if len(self.labels) != len(self.word_final_indices):
            raise ValueError("labels and hypothesis word count differ")
        if any(label not in (0, 1) for label in self.labels):
            raise ValueError("labels must be 0 or 1")
        if self.word_confidences is not None and len(self.word_confidences) != len(self.labels):
            raise ValueError("word_confidences and labels differ in length")
        return self

    def to_labeled_hypothesis(self) -> LabeledHypothesis:
        return LabeledHypothesis(
            words=self.hypothesis.split(),
            labels=list(self.labels),
            deletions=self.deletions,
            word_confidences=None if self.word_confidences is None else list(self.word_confidences),
            utterance_id=self.utterance_id,
        )


class LossRecord(BaseModel):
    """One optimizer step of a training run"""
    step: int
    loss: float
    lr: float
