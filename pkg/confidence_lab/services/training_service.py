"""
Training Service
================

Mini-batch training loops for the toy ASR (teacher-forced cross entropy) and
for the confidence model (masked binary cross entropy on hypothesis tokens).
Both share one loop: shuffle per epoch, accumulate per-utterance gradients,
take an Adam step under linearly decaying learning rate, and abort on a
non-finite loss.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import LengthError, ParameterError, TrainingDivergedError
from ..core.optim import AdamState, LrSchedule, adam_step
from ..core.tensor import Tensor, bce_loss, cross_entropy, no_grad, scale
from ..models.data_models import DecoderMask, TokenAggregation, Utterance
from ..models.records import LabeledRecord, LossRecord
from ..models.transformer import (
    EncoderDecoderModel,
    EncoderFeatures,
    ModelConfig,
    ModelParams,
    convert_to_confidence_model,
    init_params,
)
from .labeling_service import aggregate_token_confidence
from .tokenizer import BOS_ID, EOS_ID, tokenizer

logger = logging.getLogger(__name__)


class TrainingConfig(BaseModel):
    """Optimizer and loop settings shared by both trainers"""
    model_config = ConfigDict(frozen=True)

    lr: float = Field(1e-3, ge=0.0)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(16, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    log_every: int = Field(25, ge=1)


@dataclass
class TrainingResult:
    params: ModelParams
    losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    steps_per_epoch: int = 0

    def loss_records(self) -> List[LossRecord]:
        return [LossRecord(step=i, loss=loss, lr=lr) for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))]

    def epoch_means(self) -> List[float]:
        """Mean step loss of every complete epoch"""
        if self.steps_per_epoch <= 0:
            return []
        n = len(self.losses) // self.steps_per_epoch
        return [float(np.mean(self.losses[i * self.steps_per_epoch:(i + 1) * self.steps_per_epoch])) for i in range(n)]


# Loss of one example, already weighted for its share of the batch
ExampleLoss = Callable[[EncoderDecoderModel, int, float], Tensor]


def _run_loop(
    params: ModelParams,
    n_examples: int,
    example_weight: Callable[[Sequence[int]], Dict[int, float]],
    example_loss: ExampleLoss,
    hyperparams: TrainingConfig,
    rng: np.random.Generator,
    label: str,
) -> TrainingResult:
    if n_examples == 0:
        raise ParameterError(f"{label}: no training examples")
    steps_per_epoch = math.ceil(n_examples / hyperparams.batch_size)
    total_steps = hyperparams.max_steps or hyperparams.epochs * steps_per_epoch
    schedule = LrSchedule(hyperparams.lr, total_steps)
    state = AdamState()
    model = EncoderDecoderModel(params).train(rng)
    trainable = params.trainable()
    result = TrainingResult(params=params, steps_per_epoch=steps_per_epoch)

    logger.info(f"🚀 {label}: {n_examples} examples, {total_steps} steps, lr={hyperparams.lr}, batch={hyperparams.batch_size}")
    step = 0
    while step < total_steps:
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, hyperparams.batch_size):
            if step >= total_steps:
                break
            batch = [int(i) for i in order[start:start + hyperparams.batch_size]]
            weights = example_weight(batch)
            params.zero_grad()
            step_loss = 0.0
            for index in batch:
                loss = example_loss(model, index, weights[index])
                loss.backward()
                step_loss += float(loss.data)
            if not math.isfinite(step_loss):
                logger.error(f"❌ {label} diverged at step {step}")
                raise TrainingDivergedError(step, step_loss)
            lr = schedule.lr(step)
            adam_step(trainable, state, lr, frozen=params.frozen)
            result.losses.append(step_loss)
            result.lrs.append(lr)
            if step % hyperparams.log_every == 0 or step == total_steps - 1:
                logger.info(f"📉 {label} step {step}/{total_steps} loss={step_loss:.5f} lr={lr:.3g}")
            step += 1
    logger.info(f"✅ {label} finished: final loss {result.losses[-1]:.5f}")
    return result


# ==========================================
# ASR
# ==========================================

def _asr_targets(utterance: Utterance, max_seq_len: int) -> List[int]:
    tokens = tokenizer.tokenize(utterance.text)
    if len(tokens) + 1 > max_seq_len:
        raise LengthError(f"{utterance.id}: {len(tokens)} tokens do not fit max_seq_len {max_seq_len} with BOS")
    return tokens


def train_asr(
    corpus: Sequence[Utterance],
    config: ModelConfig,
    hyperparams: TrainingConfig = TrainingConfig(),
    seed: int = 0,
) -> TrainingResult:
    """Teacher-forced cross-entropy training of an LM-head model; deterministic given seed"""
    if not corpus:
        raise ParameterError("train_asr needs a nonempty corpus")
    params = init_params(config, seed)
    targets = [_asr_targets(u, config.max_seq_len) for u in corpus]

    def weights(batch: Sequence[int]) -> Dict[int, float]:
        return {i: 1.0 / len(batch) for i in batch}

    def example_loss(model: EncoderDecoderModel, index: int, weight: float) -> Tensor:
        features = model.encode(corpus[index].frames)
        tokens = targets[index]
        logits = model.lm_logits(features, [BOS_ID] + tokens)
        return scale(cross_entropy(logits, tokens + [EOS_ID]), weight)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return _run_loop(params, len(corpus), weights, example_loss, hyperparams, rng, "ASR training")


# ==========================================
# CONFIDENCE MODEL
# ==========================================

@dataclass
class ConfidenceExample:
    """Audio frames plus a labeled hypothesis, ready for the BCE loss"""
    utterance_id: str
    frames: np.ndarray
    token_ids: List[int]
    word_final_indices: List[int]
    labels: List[int]

    def targets(self) -> np.ndarray:
        """Every token carries the label of the word whose span contains it"""
        values = np.zeros(len(self.token_ids))
        start = 0
        for final, label in zip(self.word_final_indices, self.labels):
            values[start:final + 1] = label
            start = final + 1
        return values

    def loss_mask(self, all_tokens: bool) -> np.ndarray:
        mask = np.zeros(len(self.token_ids))
        if all_tokens:
            mask[:self.word_final_indices[-1] + 1] = 1.0
        else:
            mask[self.word_final_indices] = 1.0
        return mask


def build_confidence_examples(records: Sequence[LabeledRecord], corpus: Sequence[Utterance], max_seq_len: int) -> List[ConfidenceExample]:
    """Join labeled records with their manifest frames; word-less or overlong hypotheses are skipped"""
    frames_by_id = {u.id: u.frames for u in corpus}
    examples = []
    skipped = 0
    for record in records:
        if record.utterance_id not in frames_by_id:
            raise ParameterError(f"utterance {record.utterance_id} is missing from the manifest")
        if not record.labels or len(record.token_ids) + 1 > max_seq_len:
            skipped += 1
            continue
        examples.append(ConfidenceExample(
            utterance_id=record.utterance_id,
            frames=frames_by_id[record.utterance_id],
            token_ids=list(record.token_ids),
            word_final_indices=list(record.word_final_indices),
            labels=list(record.labels),
        ))
    if skipped:
        logger.warning(f"⚠️ Skipped {skipped} hypothesis(es) with no words or too many tokens")
    return examples


def train_confidence_model(
    asr_params: ModelParams,
    examples: Sequence[ConfidenceExample],
    mask: DecoderMask = DecoderMask.CAUSAL,
    freeze_encoder: bool = True,
    hyperparams: TrainingConfig = TrainingConfig(),
    seed: int = 0,
    loss_on_all_tokens: bool = False,
) -> TrainingResult:
    """Fine-tune a converted ASR into a confidence model.

    The BCE mask keeps only word-final positions unless loss_on_all_tokens is set.
    The batch loss averages over every supervised position in the batch.
    """
    params = convert_to_confidence_model(asr_params, mask, freeze_encoder)
    targets = [e.targets() for e in examples]
    masks = [e.loss_mask(loss_on_all_tokens) for e in examples]

    cached: Optional[List[EncoderFeatures]] = None
    if freeze_encoder:
        encoder = EncoderDecoderModel(params).eval()
        with no_grad():
            cached = [encoder.encode(e.frames) for e in examples]

    def weights(batch: Sequence[int]) -> Dict[int, float]:
        supervised = {i: float(masks[i].sum()) for i in batch}
        total = sum(supervised.values())
        return {i: supervised[i] / total for i in batch}

    def example_loss(model: EncoderDecoderModel, index: int, weight: float) -> Tensor:
        example = examples[index]
        features = cached[index] if cached is not None else model.encode(example.frames)
        confidences = model.confidence_forward(features, example.token_ids)
        return scale(bce_loss(confidences, targets[index], masks[index]), weight)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    label = f"Confidence training ({DecoderMask(mask).value})"
    return _run_loop(params, len(examples), weights, example_loss, hyperparams, rng, label)


def score_tokens(model: ModelParams, frames: np.ndarray, token_ids: Sequence[int]) -> List[float]:
    runner = EncoderDecoderModel(model).eval()
    with no_grad():
        features = runner.encode(frames)
        return runner.confidence_forward(features, token_ids).data.tolist()


def confidence_word_scores(
    model: ModelParams,
    records: Sequence[LabeledRecord],
    corpus: Sequence[Utterance],
    aggregation: TokenAggregation = TokenAggregation.LAST,
) -> List[List[float]]:
    """Word confidences for every record; word-less hypotheses score as empty lists"""
    frames_by_id = {u.id: u.frames for u in corpus}
    scores = []
    for record in records:
        if not record.labels:
            scores.append([])
            continue
        frames = frames_by_id.get(record.utterance_id)
        if frames is None:
            raise ParameterError(f"utterance {record.utterance_id} is missing from the manifest")
        token_scores = score_tokens(model, frames, record.token_ids)
        scores.append(aggregate_token_confidence(token_scores, record.word_final_indices, aggregation))
    return scores
