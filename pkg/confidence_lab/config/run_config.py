"""
Run Configuration
=================

Every pipeline knob in one validated model. Values come from the defaults,
then an optional JSON ``--config`` file, then explicit CLI flags.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..core.exceptions import ConfigurationError
from ..models.data_models import BaselineStrategy, DecoderMask, HeadKind, TokenAggregation
from ..models.transformer import ModelConfig
from ..services.corpus_generator import CorpusSpec
from ..services.training_service import TrainingConfig
from ..utils.record_storage import read_json_document

logger = logging.getLogger(__name__)

FINE_TUNE_LR = 5e-6

MODEL_PRESETS: Dict[str, Dict[str, int]] = {
    "tiny": {"d_model": 32, "n_heads": 2, "n_encoder_layers": 1, "n_decoder_layers": 1},
    "base": {"d_model": 64, "n_heads": 4, "n_encoder_layers": 2, "n_decoder_layers": 2},
}


class RunConfig(BaseModel):
    """Model dimensions, optimization, confidence-model and evaluation settings"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    # Model
    model_preset: Optional[Literal["tiny", "base"]] = None
    d_model: int = Field(64, gt=0)
    n_heads: int = Field(4, gt=0)
    n_encoder_layers: int = Field(2, ge=1)
    n_decoder_layers: int = Field(2, ge=1)
    max_seq_len: int = Field(128, gt=1)
    ff_multiplier: int = Field(4, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)

    # Optimization
    lr: float = Field(1e-3, ge=0.0)
    asr_lr: Optional[float] = Field(2e-3, ge=0.0)
    asr_epochs: int = Field(60, ge=1)
    conf_epochs: int = Field(30, ge=1)
    batch_size: int = Field(16, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    log_every: int = Field(25, ge=1)

    # Confidence model
    decoder_mask: DecoderMask = DecoderMask.CAUSAL
    freeze_encoder: bool = True
    loss_on_all_tokens: bool = False
    aggregation: TokenAggregation = TokenAggregation.LAST
    baseline: BaselineStrategy = BaselineStrategy.MIN

    # Evaluation
    n_bins: int = Field(20, ge=1)
    calibration_fraction: float = Field(0.0, ge=0.0, lt=1.0)

    seed: int = 0
    corpus: CorpusSpec = CorpusSpec()

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied and revalidated"""
        values = self.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return RunConfig.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"invalid run configuration: {e.errors()[0].get('msg')}") from e

    def fine_tune_recipe(self) -> "RunConfig":
        """lr 5e-6 for one epoch with 10% dropout"""
        return self.with_overrides(lr=FINE_TUNE_LR, conf_epochs=1, dropout=0.1)

    def model_dims(self) -> Dict[str, int]:
        dims = {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
        }
        if self.model_preset:
            dims.update(MODEL_PRESETS[self.model_preset])
        return dims

    def model_config_for(self, vocab_size: int, feat_dim: int) -> ModelConfig:
        try:
            return ModelConfig(
                vocab_size=vocab_size,
                feat_dim=feat_dim,
                max_seq_len=self.max_seq_len,
                ff_multiplier=self.ff_multiplier,
                dropout_rate=self.dropout,
                head_kind=HeadKind.LM,
                decoder_mask=DecoderMask.CAUSAL,
                **self.model_dims(),
            )
        except ValidationError as e:
            raise ConfigurationError(f"invalid model dimensions: {e.errors()[0].get('msg')}") from e

    def asr_training(self) -> TrainingConfig:
        return TrainingConfig(
            lr=self.lr if self.asr_lr is None else self.asr_lr,
            epochs=self.asr_epochs,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            log_every=self.log_every,
        )

    def confidence_training(self) -> TrainingConfig:
        return TrainingConfig(
            lr=self.lr,
            epochs=self.conf_epochs,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            log_every=self.log_every,
        )


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Defaults, or defaults updated from a JSON document"""
    if path is None:
        return RunConfig()
    document = read_json_document(path)
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigurationError(f"{path}: {location}: {first.get('msg')}") from e
    logger.info(f"⚙️ Loaded run configuration from {path}")
    return config
