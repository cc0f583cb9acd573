"""
Data models for the confidence lab
Enums shared across stages plus the in-memory utterance, hypothesis, alignment
and evaluation report types.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np


class HeadKind(str, Enum):
    """Output head carried by a model"""
    LM = "LM"
    CONFIDENCE = "CONFIDENCE"


class DecoderMask(str, Enum):
    """Decoder self-attention mask"""
    CAUSAL = "CAUSAL"
    NON_CAUSAL = "NON_CAUSAL"


class Split(str, Enum):
    """Corpus partition an utterance belongs to"""
    ASR_TRAIN = "ASR_TRAIN"
    CONF_TRAIN = "CONF_TRAIN"
    EVAL = "EVAL"


class BaselineStrategy(str, Enum):
    """Token-probability aggregation for the softmax baseline"""
    MIN = "MIN"
    MEAN = "MEAN"
    SUM = "SUM"
    PRODUCT = "PRODUCT"
    MAX = "MAX"


class TokenAggregation(str, Enum):
    """Token-confidence to word-confidence aggregation"""
    LAST = "LAST"
    MIN = "MIN"
    MEAN = "MEAN"
    PRODUCT = "PRODUCT"
    MAX = "MAX"


class EditKind(str, Enum):
    MATCH = "MATCH"
    SUBSTITUTE = "SUBSTITUTE"
    INSERT = "INSERT"
    DELETE = "DELETE"


class Polarity(str, Enum):
    """Which class counts as positive for AUC-PR"""
    POS = "POS"
    NEG = "NEG"


@dataclass
class Utterance:
    """One corpus item: reference text and its synthetic acoustic frames"""
    id: str
    text: str
    frames: np.ndarray
    split: Split = Split.ASR_TRAIN

    @property
    def words(self) -> List[str]:
        return self.text.split()

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class Hypothesis:
    """Greedy-decoded transcript with per-token probabilities and word boundaries"""
    token_ids: List[int]
    token_probs: List[float]
    word_final_indices: List[int]
    words: List[str]
    truncated: bool = False

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def word_spans(self) -> List[range]:
        """Token index range of every word: (previous word-final, this word-final]"""
        spans = []
        start = 0
        for final in self.word_final_indices:
            spans.append(range(start, final + 1))
            start = final + 1
        return spans


@dataclass(frozen=True)
class EditOp:
    """One alignment step; indices are None where the side does not participate"""
    kind: EditKind
    ref_index: Optional[int] = None
    hyp_index: Optional[int] = None


@dataclass
class Alignment:
    """Ordered edit operations turning a reference word sequence into a hypothesis"""
    ops: List[EditOp]

    def count(self, kind: EditKind) -> int:
        return sum(1 for op in self.ops if op.kind == kind)

    @property
    def substitutions(self) -> int:
        return self.count(EditKind.SUBSTITUTE)

    @property
    def insertions(self) -> int:
        return self.count(EditKind.INSERT)

    @property
    def deletions(self) -> int:
        return self.count(EditKind.DELETE)

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def reference_length(self) -> int:
        return sum(1 for op in self.ops if op.ref_index is not None)

    @property
    def hypothesis_length(self) -> int:
        return sum(1 for op in self.ops if op.hyp_index is not None)


@dataclass
class LabeledHypothesis:
    """Hypothesis words with binary correctness labels and (later) word confidences"""
    words: List[str]
    labels: List[int]
    deletions: int = 0
    word_confidences: Optional[List[float]] = None
    utterance_id: Optional[str] = None


@dataclass
class CalibrationBin:
    """One equal-width histogram bin"""
    lower: float
    upper: float
    count: int
    correct: int
    calibrated: float


@dataclass
class EvalReport:
    """All confidence metrics for one (model, dataset) pair"""
    source: str
    dataset: str
    nce: float
    auc_roc: float
    auc_pr_pos: float
    auc_pr_neg: float
    wer: float
    n_words: int
    n_correct: int
    n_utterances: int
    n_bins: int
    calibration_bins: List[CalibrationBin] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        bins = [CalibrationBin(**b) for b in data.get("calibration_bins", [])]
        return cls(**{**data, "calibration_bins": bins})

    def metric(self, name: str) -> float:
        return float(getattr(self, name))
