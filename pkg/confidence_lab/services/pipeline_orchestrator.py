"""
Pipeline Orchestrator
=====================

One function per pipeline stage. Each stage reads only the files the previous
stage declared, writes its outputs atomically, and is deterministic given its
inputs and the run configuration. The CLI is a thin layer over these.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from ..config.run_config import RunConfig
from ..core.exceptions import ConfigurationError, LabelingError, ParameterError
from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.data_models import BaselineStrategy, DecoderMask, EvalReport, HeadKind, Split, TokenAggregation, Utterance
from ..models.records import DECODED_KIND, LABELED_KIND, LOSS_KIND, DecodedRecord, LabeledRecord
from ..models.transformer import ModelParams
from ..utils.record_storage import atomic_write, read_json_document, read_records, write_json_document, write_records
from .corpus_generator import generate_corpus, generate_shifted_corpus, read_manifest, write_manifest
from .labeling_service import label_record
from .metrics_service import evaluate, load_report, render_report_table, reports_by_model, save_report
from .tokenizer import tokenizer
from .training_service import (
    TrainingResult,
    build_confidence_examples,
    confidence_word_scores,
    train_asr,
    train_confidence_model,
)
from .transcription_service import softmax_word_confidence, transcribe_corpus

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ABLATION_KIND = "cwl-ablation"


def loss_log_path(checkpoint_path: PathLike) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(path.name + ".loss.jsonl")


def _load_head(path: PathLike, kind: HeadKind, command: str) -> ModelParams:
    params = load_checkpoint(path)
    if params.config.head_kind != kind:
        raise ConfigurationError(
            f"{command} needs a {kind.value}-head checkpoint, {path} holds a {params.config.head_kind.value}-head model"
        )
    return params


def _save_training(result: TrainingResult, out: PathLike) -> Path:
    save_checkpoint(result.params, out)
    write_records(loss_log_path(out), LOSS_KIND, result.loss_records())
    return Path(out)


# ==========================================
# GEN / TRAIN-ASR / DECODE
# ==========================================

def run_gen(config: RunConfig, out: PathLike, shift_noise_scale: Optional[float] = None, novel_word_fraction: float = 0.2) -> List[Utterance]:
    """Write the corpus manifest; with shift_noise_scale set, an out-of-domain EVAL set instead"""
    if shift_noise_scale is None:
        corpus = generate_corpus(config.corpus)
    else:
        corpus = generate_shifted_corpus(config.corpus, shift_noise_scale, novel_word_fraction)
    write_manifest(corpus, out)
    return corpus


def run_train_asr(manifest: PathLike, config: RunConfig, out: PathLike) -> TrainingResult:
    corpus = [u for u in read_manifest(manifest) if u.split == Split.ASR_TRAIN]
    if not corpus:
        raise ParameterError(f"{manifest} has no {Split.ASR_TRAIN.value} utterances")
    feat_dim = corpus[0].frames.shape[1]
    model_config = config.model_config_for(tokenizer.vocab_size, feat_dim)
    result = train_asr(corpus, model_config, config.asr_training(), seed=config.seed)
    _save_training(result, out)
    return result


def run_decode(checkpoint: PathLike, manifest: PathLike, split: Optional[Split], out: PathLike) -> List[DecodedRecord]:
    """Greedy-decode one split (or every utterance when split is None)"""
    model = _load_head(checkpoint, HeadKind.LM, "decode")
    corpus = [u for u in read_manifest(manifest) if split is None or u.split == split]
    records = transcribe_corpus(model, corpus)
    write_records(out, DECODED_KIND, records)
    return records


# ==========================================
# LABEL
# ==========================================

def softmax_scores(record: DecodedRecord, strategy: BaselineStrategy) -> List[float]:
    hypothesis = record.to_hypothesis()
    return softmax_word_confidence(hypothesis, strategy) if hypothesis.words else []


def run_label(decoded: PathLike, manifest: PathLike, out: PathLike, baseline: BaselineStrategy = BaselineStrategy.MIN) -> List[LabeledRecord]:
    """Align every decoded record with its reference; word confidences default to the softmax baseline"""
    references = {u.id: u.text for u in read_manifest(manifest)}
    labeled = []
    for record in read_records(decoded, DECODED_KIND, DecodedRecord):
        reference = references.get(record.utterance_id)
        if reference is None:
            raise LabelingError(f"{record.utterance_id} from {decoded} is not in manifest {manifest}")
        if reference != record.reference:
            raise LabelingError(f"{record.utterance_id}: reference text differs between {decoded} and {manifest}")
        labeled.append(label_record(record, softmax_scores(record, baseline)))
    write_records(out, LABELED_KIND, labeled)
    n_words = sum(len(r.labels) for r in labeled)
    n_correct = sum(sum(r.labels) for r in labeled)
    logger.info(f"🏷️ Labeled {len(labeled)} hypotheses: {n_correct}/{n_words} words correct")
    return labeled


# ==========================================
# TRAIN-CONF
# ==========================================

def run_train_conf(
    asr_checkpoint: PathLike,
    labeled: PathLike,
    manifest: PathLike,
    config: RunConfig,
    out: PathLike,
    mask: Optional[DecoderMask] = None,
) -> TrainingResult:
    asr = _load_head(asr_checkpoint, HeadKind.LM, "train-conf")
    records = read_records(labeled, LABELED_KIND, LabeledRecord)
    examples = build_confidence_examples(records, read_manifest(manifest), asr.config.max_seq_len)
    result = train_confidence_model(
        asr,
        examples,
        mask=mask or config.decoder_mask,
        freeze_encoder=config.freeze_encoder,
        hyperparams=config.confidence_training(),
        seed=config.seed,
        loss_on_all_tokens=config.loss_on_all_tokens,
    )
    _save_training(result, out)
    return result


# ==========================================
# EVAL / ABLATE / REPORT
# ==========================================

@dataclass(frozen=True)
class ScoreSource:
    """SOFTMAX:<strategy> or CONF:<checkpoint>[:<aggregation>]"""
    kind: str
    strategy: Optional[BaselineStrategy] = None
    checkpoint: Optional[Path] = None
    aggregation: Optional[TokenAggregation] = None

    @property
    def name(self) -> str:
        if self.kind == "SOFTMAX":
            return f"SOFTMAX:{self.strategy.value}"
        return f"CONF:{self.checkpoint.stem}:{self.aggregation.value}"


def parse_score_source(text: str, default_aggregation: TokenAggregation = TokenAggregation.LAST) -> ScoreSource:
    kind, _, rest = text.partition(":")
    kind = kind.upper()
    if kind == "SOFTMAX":
        try:
            return ScoreSource(kind, strategy=BaselineStrategy((rest or "MIN").upper()))
        except ValueError:
            raise ConfigurationError(f"unknown softmax strategy {rest!r}; use one of {[s.value for s in BaselineStrategy]}") from None
    if kind == "CONF" and rest:
        path, _, suffix = rest.rpartition(":")
        if path and suffix.upper() in TokenAggregation.__members__:
            return ScoreSource(kind, checkpoint=Path(path), aggregation=TokenAggregation(suffix.upper()))
        return ScoreSource(kind, checkpoint=Path(rest), aggregation=default_aggregation)
    raise ConfigurationError(f"score source must be SOFTMAX:<strategy> or CONF:<checkpoint>[:<aggregation>], got {text!r}")


def score_records(
    source: ScoreSource,
    records: Sequence[LabeledRecord],
    manifest: Optional[PathLike],
) -> List[List[float]]:
    if source.kind == "SOFTMAX":
        return [softmax_scores(r, source.strategy) for r in records]
    if manifest is None:
        raise ConfigurationError("CONF score sources need --manifest for the audio frames")
    model = _load_head(source.checkpoint, HeadKind.CONFIDENCE, "eval")
    return confidence_word_scores(model, records, read_manifest(manifest), source.aggregation)


def run_eval(
    labeled: PathLike,
    source: str,
    config: RunConfig,
    out: PathLike,
    manifest: Optional[PathLike] = None,
    dataset: Optional[str] = None,
) -> EvalReport:
    parsed = parse_score_source(source, config.aggregation)
    records = read_records(labeled, LABELED_KIND, LabeledRecord)
    report = evaluate(
        records,
        score_records(parsed, records, manifest),
        source=parsed.name,
        dataset=dataset or Path(labeled).stem,
        n_bins=config.n_bins,
        calibration_fraction=config.calibration_fraction,
        seed=config.seed,
    )
    save_report(report, out)
    return report


def run_ablate(
    asr_checkpoint: PathLike,
    labeled: PathLike,
    manifest: PathLike,
    config: RunConfig,
    out: PathLike,
    eval_labeled: Optional[PathLike] = None,
) -> Dict[str, EvalReport]:
    """Train CAUSAL and NON_CAUSAL confidence models identically and evaluate both"""
    asr = _load_head(asr_checkpoint, HeadKind.LM, "ablate")
    corpus = read_manifest(manifest)
    train_records = read_records(labeled, LABELED_KIND, LabeledRecord)
    eval_path = eval_labeled or labeled
    eval_records = train_records if eval_labeled is None else read_records(eval_labeled, LABELED_KIND, LabeledRecord)
    examples = build_confidence_examples(train_records, corpus, asr.config.max_seq_len)

    reports: Dict[str, EvalReport] = {}
    for mask in (DecoderMask.CAUSAL, DecoderMask.NON_CAUSAL):
        result = train_confidence_model(
            asr,
            examples,
            mask=mask,
            freeze_encoder=config.freeze_encoder,
            hyperparams=config.confidence_training(),
            seed=config.seed,
            loss_on_all_tokens=config.loss_on_all_tokens,
        )
        scores = confidence_word_scores(result.params, eval_records, corpus, config.aggregation)
        reports[mask.value] = evaluate(
            eval_records,
            scores,
            source=mask.value,
            dataset=Path(eval_path).stem,
            n_bins=config.n_bins,
            calibration_fraction=config.calibration_fraction,
            seed=config.seed,
        )

    gap = reports[DecoderMask.CAUSAL.value].auc_roc - reports[DecoderMask.NON_CAUSAL.value].auc_roc
    logger.info(f"🔬 Ablation AUC-ROC gap (CAUSAL - NON_CAUSAL): {gap:+.4f}")
    write_json_document(out, {
        "format": ABLATION_KIND,
        "version": 1,
        "variants": {name: report.to_dict() for name, report in reports.items()},
    })
    return reports


def load_ablation(path: PathLike) -> Dict[str, EvalReport]:
    document = read_json_document(path)
    if document.get("format") != ABLATION_KIND:
        raise ConfigurationError(f"{path} is not an ablation report")
    return {name: EvalReport.from_dict(data) for name, data in document["variants"].items()}


def run_report(paths: Sequence[PathLike], out: Optional[PathLike] = None) -> str:
    """Table of metric x model rows against dataset columns for saved reports"""
    reports: List[EvalReport] = []
    for path in paths:
        document = read_json_document(path)
        if document.get("format") == ABLATION_KIND:
            reports.extend(load_ablation(path).values())
        else:
            reports.append(load_report(path))
    if not reports:
        raise ParameterError("report needs at least one report file")
    table = render_report_table(reports_by_model(reports))
    if out is not None:
        with atomic_write(out) as handle:
            handle.write(table)
    return table


def ablation_table(reports: Dict[str, EvalReport]) -> str:
    return render_report_table(reports_by_model(list(reports.values())))


def eval_table(report: EvalReport) -> str:
    return render_report_table(reports_by_model([report]))
