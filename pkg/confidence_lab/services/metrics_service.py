"""
Metrics Service
===============

Histogram-binning calibration and every confidence metric the lab reports:
normalized cross entropy, AUC-ROC, AUC-PR with either class as positive, and
pooled word error rate. ``evaluate`` pools all words of a labeled corpus and
assembles an EvalReport; ``render_report_table`` lays reports out as
metric x model rows against dataset columns.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import MetricError, ParameterError
from ..models.data_models import Alignment, CalibrationBin, EvalReport, Polarity
from ..models.records import LabeledRecord
from ..utils.record_storage import read_json_document, write_json_document

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20

REPORT_METRICS: Tuple[Tuple[str, str], ...] = (
    ("nce", "NCE"),
    ("auc_roc", "AUC-ROC"),
    ("auc_pr_pos", "AUC-PR POS"),
    ("auc_pr_neg", "AUC-PR NEG"),
    ("wer", "WER"),
)


def _as_arrays(metric: str, scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(metric, f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise MetricError(metric, "empty input")
    if not np.all(np.isfinite(s)):
        raise MetricError(metric, "scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError(metric, "labels must be 0 or 1")
    return s, y.astype(np.int64)


# ==========================================
# HISTOGRAM BINNING
# ==========================================

@dataclass
class BinningCalibrator:
    """Equal-width bins over [0, 1], each mapped to its Laplace-smoothed accuracy.

    Scores seen at fit time outside [0, 1] switch the calibrator to min-max
    normalization with the fitted range; the same transform is applied at
    calibration time and the result clipped into [0, 1].
    """
    n_bins: int
    bins: List[CalibrationBin] = field(default_factory=list)
    fallback: float = 0.5
    score_min: float = 0.0
    score_max: float = 1.0

    def normalize(self, scores: np.ndarray) -> np.ndarray:
        if self.score_min == 0.0 and self.score_max == 1.0:
            return np.clip(scores, 0.0, 1.0)
        return np.clip((scores - self.score_min) / (self.score_max - self.score_min), 0.0, 1.0)

    def bin_index(self, scores: np.ndarray) -> np.ndarray:
        normalized = self.normalize(np.asarray(scores, dtype=np.float64))
        return np.minimum(np.floor(normalized * self.n_bins).astype(np.int64), self.n_bins - 1)

    @classmethod
    def fit(cls, scores: Sequence[float], labels: Sequence[int], n_bins: int = DEFAULT_BINS) -> "BinningCalibrator":
        if n_bins < 1:
            raise ParameterError(f"n_bins must be >= 1, got {n_bins}")
        s, y = _as_arrays("calibration", scores, labels)
        low, high = float(s.min()), float(s.max())
        calibrator = cls(n_bins=n_bins)
        if low < 0.0 or high > 1.0:
            calibrator.score_min = low
            calibrator.score_max = high if high > low else low + 1.0
        calibrator.fallback = (int(y.sum()) + 1) / (y.size + 2)

        index = calibrator.bin_index(s)
        counts = np.bincount(index, minlength=n_bins)
        correct = np.bincount(index, weights=y, minlength=n_bins).astype(np.int64)
        for b in range(n_bins):
            count, hits = int(counts[b]), int(correct[b])
            value = (hits + 1) / (count + 2) if count else calibrator.fallback
            calibrator.bins.append(CalibrationBin(lower=b / n_bins, upper=(b + 1) / n_bins, count=count, correct=hits, calibrated=value))
        return calibrator

    def calibrate(self, scores: Sequence[float]) -> np.ndarray:
        table = np.array([b.calibrated for b in self.bins], dtype=np.float64)
        return table[self.bin_index(np.asarray(scores, dtype=np.float64))]


def fit_calibrator(scores: Sequence[float], labels: Sequence[int], n_bins: int = DEFAULT_BINS) -> BinningCalibrator:
    return BinningCalibrator.fit(scores, labels, n_bins)


def calibrate(calibrator: BinningCalibrator, scores: Sequence[float]) -> np.ndarray:
    return calibrator.calibrate(scores)


# ==========================================
# METRICS
# ==========================================

def _cross_entropy(scores: Sequence[float], labels: Sequence[int]) -> float:
    correct = [math.log(c) for c, y in zip(scores, labels) if y == 1]
    incorrect = [math.log1p(-c) for c, y in zip(scores, labels) if y == 0]
    return -(math.fsum(correct) + math.fsum(incorrect))


def nce(calibrated_scores: Sequence[float], labels: Sequence[int]) -> float:
    """Normalized cross entropy: 1 for a perfect predictor, 0 for the class prior"""
    s, y = _as_arrays("nce", calibrated_scores, labels)
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise MetricError("nce", "scores must lie strictly inside (0, 1); calibrate first")
    n_correct = int(y.sum())
    if n_correct in (0, y.size):
        raise MetricError("nce", "undefined when every word has the same label")
    prior = n_correct / y.size
    label_list = y.tolist()
    h_max = _cross_entropy([prior] * y.size, label_list)
    h_conf = _cross_entropy(s.tolist(), label_list)
    return (h_max - h_conf) / h_max


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Fraction of (correct, incorrect) pairs ranked correctly; ties count one half"""
    s, y = _as_arrays("auc_roc", scores, labels)
    positives = s[y == 1]
    negatives = np.sort(s[y == 0])
    if positives.size == 0 or negatives.size == 0:
        raise MetricError("auc_roc", "needs at least one correct and one incorrect word")
    below = np.searchsorted(negatives, positives, side="left")
    at_or_below = np.searchsorted(negatives, positives, side="right")
    wins = int(below.sum())
    ties = int((at_or_below - below).sum())
    return (2 * wins + ties) / (2 * positives.size * negatives.size)


def auc_pr(scores: Sequence[float], labels: Sequence[int], polarity: Polarity = Polarity.POS) -> float:
    """Average precision over descending-score thresholds, each tie group taken at once.

    NEG makes incorrect words the positives, ranked by 1 - confidence.
    """
    polarity = Polarity(polarity)
    name = f"auc_pr_{polarity.value.lower()}"
    s, y = _as_arrays(name, scores, labels)
    if polarity == Polarity.NEG:
        s, y = -s, 1 - y
    total_positive = int(y.sum())
    if total_positive == 0:
        raise MetricError(name, "no positive words under this polarity")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    ends = np.append(boundaries, s.size)

    tp = np.cumsum(y)[ends - 1]
    seen = ends
    area = 0.0
    previous_recall = 0.0
    for hits, count in zip(tp.tolist(), seen.tolist()):
        recall = hits / total_positive
        area += (recall - previous_recall) * (hits / count)
        previous_recall = recall
    return area


def wer(alignments: Sequence[Alignment]) -> float:
    """(substitutions + insertions + deletions) / reference words, pooled"""
    return wer_from_counts(sum(a.errors for a in alignments), sum(a.reference_length for a in alignments))


def wer_from_counts(errors: int, reference_words: int) -> float:
    if reference_words <= 0:
        raise MetricError("wer", "no reference words")
    return errors / reference_words


# ==========================================
# EVALUATION
# ==========================================

def _record_scores(records: Sequence[LabeledRecord], word_scores: Optional[Sequence[Sequence[float]]]) -> List[List[float]]:
    if word_scores is None:
        missing = [r.utterance_id for r in records if r.word_confidences is None]
        if missing:
            raise MetricError("evaluate", f"records without word confidences, first: {missing[0]}")
        return [list(r.word_confidences) for r in records]
    if len(word_scores) != len(records):
        raise MetricError("evaluate", f"{len(word_scores)} score lists for {len(records)} records")
    scores = []
    for record, values in zip(records, word_scores):
        if len(values) != len(record.labels):
            raise MetricError("evaluate", f"{record.utterance_id}: {len(values)} scores for {len(record.labels)} words")
        scores.append([float(v) for v in values])
    return scores


def calibration_split(utterance_ids: Sequence[str], fraction: float, seed: int) -> set:
    """Deterministic subset of utterance ids held out for fitting the calibrator"""
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"calibration_fraction must be in (0, 1), got {fraction}")
    ordered = sorted(utterance_ids)
    n_held = int(round(fraction * len(ordered)))
    if n_held < 1 or n_held >= len(ordered):
        raise ParameterError(f"calibration_fraction {fraction} leaves an empty side for {len(ordered)} utterances")
    order = np.random.default_rng(seed).permutation(len(ordered))
    return {ordered[i] for i in order[:n_held]}


def evaluate(
    records: Sequence[LabeledRecord],
    word_scores: Optional[Sequence[Sequence[float]]] = None,
    source: str = "",
    dataset: str = "",
    n_bins: int = DEFAULT_BINS,
    calibration_fraction: float = 0.0,
    seed: int = 0,
) -> EvalReport:
    """Pool words over all utterances, calibrate, and compute every metric.

    Ranking metrics use the raw scores; NCE uses the calibrated ones. With
    calibration_fraction > 0 the calibrator is fitted on a held-out subset of
    utterances and all metrics are reported on the remainder.
    """
    scores = _record_scores(records, word_scores)
    fit_records, fit_scores = list(records), scores
    eval_records, eval_scores = list(records), scores
    if calibration_fraction > 0.0:
        held = calibration_split([r.utterance_id for r in records], calibration_fraction, seed)
        fit_pairs = [(r, s) for r, s in zip(records, scores) if r.utterance_id in held]
        eval_pairs = [(r, s) for r, s in zip(records, scores) if r.utterance_id not in held]
        fit_records, fit_scores = [p[0] for p in fit_pairs], [p[1] for p in fit_pairs]
        eval_records, eval_scores = [p[0] for p in eval_pairs], [p[1] for p in eval_pairs]

    def pooled(recs: Sequence[LabeledRecord], values: Sequence[Sequence[float]]) -> Tuple[np.ndarray, np.ndarray]:
        flat_scores = [v for vs in values for v in vs]
        flat_labels = [label for r in recs for label in r.labels]
        return np.asarray(flat_scores, dtype=np.float64), np.asarray(flat_labels, dtype=np.int64)

    s, y = pooled(eval_records, eval_scores)
    fit_s, fit_y = pooled(fit_records, fit_scores)
    calibrator = fit_calibrator(fit_s, fit_y, n_bins)
    calibrated = calibrator.calibrate(s)

    report = EvalReport(
        source=source,
        dataset=dataset,
        nce=nce(calibrated, y),
        auc_roc=auc_roc(s, y),
        auc_pr_pos=auc_pr(s, y, Polarity.POS),
        auc_pr_neg=auc_pr(s, y, Polarity.NEG),
        wer=wer_from_counts(
            sum(r.substitutions + r.insertions + r.deletions for r in eval_records),
            sum(r.reference_words for r in eval_records),
        ),
        n_words=int(y.size),
        n_correct=int(y.sum()),
        n_utterances=len(eval_records),
        n_bins=n_bins,
        calibration_bins=list(calibrator.bins),
    )
    logger.info(
        f"📊 {source or 'scores'} on {dataset or 'dataset'}: NCE={report.nce:.4f} "
        f"AUC-ROC={report.auc_roc:.4f} WER={report.wer:.4f} ({report.n_words} words)"
    )
    return report


# ==========================================
# REPORT I/O AND TABLES
# ==========================================

def save_report(report: EvalReport, path: Union[str, Path]) -> Path:
    write_json_document(path, report.to_dict())
    return Path(path)


def load_report(path: Union[str, Path]) -> EvalReport:
    return EvalReport.from_dict(read_json_document(path))


def render_report_table(reports: Mapping[str, Mapping[str, EvalReport]], precision: int = 4) -> str:
    """One row per (metric, model), one column per dataset; missing cells print '-'"""
    datasets: List[str] = []
    for by_dataset in reports.values():
        for name in by_dataset:
            if name not in datasets:
                datasets.append(name)

    header = ["Metric", "Model", *datasets]
    rows: List[List[str]] = []
    for attribute, label in REPORT_METRICS:
        for model, by_dataset in reports.items():
            cells = [f"{by_dataset[d].metric(attribute):.{precision}f}" if d in by_dataset else "-" for d in datasets]
            rows.append([label, model, *cells])

    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(header)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def reports_by_model(reports: Sequence[EvalReport]) -> Dict[str, Dict[str, EvalReport]]:
    table: Dict[str, Dict[str, EvalReport]] = {}
    for report in reports:
        table.setdefault(report.source, {})[report.dataset] = report
    return table
