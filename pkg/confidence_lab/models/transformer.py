"""
Toy Encoder-Decoder Transformer
==============================

Pre-layer-norm encoder-decoder with learned positional embeddings and two
interchangeable output heads:

- LM head: a linear map from each decoder state to next-token logits, used
  for autoregressive decoding
- Confidence head: a linear map to one logit per hypothesis token followed by
  a sigmoid, computed for all tokens in one parallel decoder pass

Parameters live in a flat, ordered name -> Tensor mapping (``ModelParams``) so
checkpoints, the optimizer and the freeze contract all address them by name.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.exceptions import ConfigurationError, LengthError, ParameterError, ShapeError
from ..core.tensor import (
    MASK_FILL,
    Tensor,
    add,
    dropout,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    scale,
    sigmoid,
    softmax,
    take_rows,
    transpose,
)
from .data_models import DecoderMask, HeadKind

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "encoder."
HEAD_PREFIX = "head."
LM_HEAD = ("head.lm.weight", "head.lm.bias")
CONFIDENCE_HEAD = ("head.confidence.weight", "head.confidence.bias")


class ModelConfig(BaseModel):
    """Shape and behaviour of one encoder-decoder model"""
    model_config = ConfigDict(frozen=True, use_enum_values=False)

    vocab_size: int = Field(30, gt=3)
    feat_dim: int = Field(16, gt=0)
    d_model: int = Field(64, gt=0)
    n_heads: int = Field(4, gt=0)
    n_encoder_layers: int = Field(2, ge=1)
    n_decoder_layers: int = Field(2, ge=1)
    max_seq_len: int = Field(128, ge=2)
    ff_multiplier: int = Field(4, ge=1)
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    head_kind: HeadKind = HeadKind.LM
    decoder_mask: DecoderMask = DecoderMask.CAUSAL
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    @model_validator(mode="after")
    def _check_consistency(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.head_kind == HeadKind.LM and self.decoder_mask != DecoderMask.CAUSAL:
            raise ValueError("an LM-head model decodes autoregressively and needs the CAUSAL mask")
        for name in ("pad_id", "bos_id", "eos_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise ValueError(f"{name} must index the vocabulary")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ff(self) -> int:
        return self.d_model * self.ff_multiplier


@dataclass
class ModelParams:
    """Named parameter tensors for the encoder-decoder plus exactly one head"""
    config: ModelConfig
    tensors: Dict[str, Tensor]
    frozen: Set[str] = field(default_factory=set)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors)

    def head_names(self) -> Tuple[str, str]:
        return LM_HEAD if self.config.head_kind == HeadKind.LM else CONFIDENCE_HEAD

    def trainable(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.tensors.items() if name not in self.frozen}

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def validate(self) -> None:
        """Check every tensor against the shapes the config implies"""
        expected = parameter_shapes(self.config)
        if list(expected) != list(self.tensors):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ConfigurationError(f"parameter names do not match config (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ConfigurationError(f"parameter {name} has shape {self.tensors[name].shape}, config implies {shape}")
        unknown = self.frozen - set(self.tensors)
        if unknown:
            raise ConfigurationError(f"frozen flags for unknown parameters: {sorted(unknown)}")


@dataclass
class EncoderFeatures:
    """Encoder output, one row per input frame"""
    features: Tensor

    @property
    def frame_count(self) -> int:
        return int(self.features.shape[0])


@dataclass
class DecodeResult:
    """Greedy decode output; tokens exclude BOS and include EOS when emitted"""
    tokens: List[int]
    probs: List[float]
    truncated: bool


def _attention_shapes(prefix: str, d: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}.{proj}.weight"] = (d, d)
        shapes[f"{prefix}.{proj}.bias"] = (d,)
    return shapes


def _block_shapes(prefix: str, d: int, d_ff: int, cross: bool) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {f"{prefix}.ln1.gain": (d,), f"{prefix}.ln1.bias": (d,)}
    shapes.update(_attention_shapes(f"{prefix}.self_attn", d))
    norm = 2
    if cross:
        shapes[f"{prefix}.ln2.gain"] = (d,)
        shapes[f"{prefix}.ln2.bias"] = (d,)
        shapes.update(_attention_shapes(f"{prefix}.cross_attn", d))
        norm = 3
    shapes[f"{prefix}.ln{norm}.gain"] = (d,)
    shapes[f"{prefix}.ln{norm}.bias"] = (d,)
    shapes[f"{prefix}.mlp.fc.weight"] = (d, d_ff)
    shapes[f"{prefix}.mlp.fc.bias"] = (d_ff,)
    shapes[f"{prefix}.mlp.proj.weight"] = (d_ff, d)
    shapes[f"{prefix}.mlp.proj.bias"] = (d,)
    return shapes


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered parameter names and shapes implied by a config"""
    d, d_ff = config.d_model, config.d_ff
    shapes: Dict[str, Tuple[int, ...]] = {
        "encoder.input_proj.weight": (config.feat_dim, d),
        "encoder.input_proj.bias": (d,),
        "encoder.pos_embedding": (config.max_seq_len, d),
    }
    for i in range(config.n_encoder_layers):
        shapes.update(_block_shapes(f"encoder.layers.{i}", d, d_ff, cross=False))
    shapes["encoder.ln_f.gain"] = (d,)
    shapes["encoder.ln_f.bias"] = (d,)

    shapes["decoder.token_embedding"] = (config.vocab_size, d)
    shapes["decoder.pos_embedding"] = (config.max_seq_len, d)
    for i in range(config.n_decoder_layers):
        shapes.update(_block_shapes(f"decoder.layers.{i}", d, d_ff, cross=True))
    shapes["decoder.ln_f.gain"] = (d,)
    shapes["decoder.ln_f.bias"] = (d,)

    if config.head_kind == HeadKind.LM:
        shapes[LM_HEAD[0]] = (d, config.vocab_size)
        shapes[LM_HEAD[1]] = (config.vocab_size,)
    else:
        shapes[CONFIDENCE_HEAD[0]] = (d, 1)
        shapes[CONFIDENCE_HEAD[1]] = (1,)
    return shapes


def _initial_value(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias") or name.startswith("head.confidence"):
        return np.zeros(shape)
    if name.endswith("embedding"):
        # unit scale, so positions are not drowned by the projected frames
        return rng.normal(0.0, 1.0, size=shape)
    return rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Freshly initialized parameters; the confidence head starts at zero"""
    rng = np.random.default_rng(seed)
    tensors = {
        name: Tensor(_initial_value(name, shape, rng), requires_grad=True, name=name)
        for name, shape in parameter_shapes(config).items()
    }
    params = ModelParams(config=config, tensors=tensors)
    logger.info(f"Initialized {config.head_kind.value} model with {params.parameter_count()} parameters (seed={seed})")
    return params


def convert_to_confidence_model(
    asr_params: ModelParams,
    mask: DecoderMask = DecoderMask.CAUSAL,
    freeze_encoder: bool = True,
) -> ModelParams:
    """Replace the LM head with a zero-initialized scalar confidence head"""
    if asr_params.config.head_kind != HeadKind.LM:
        raise ConfigurationError("convert_to_confidence_model needs an LM-head model")
    config = asr_params.config.model_copy(update={"head_kind": HeadKind.CONFIDENCE, "decoder_mask": DecoderMask(mask)})
    frozen: Set[str] = set()
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith(HEAD_PREFIX):
            data = np.zeros(shape)
        else:
            data = asr_params.tensors[name].data.copy()
        is_frozen = freeze_encoder and name.startswith(ENCODER_PREFIX)
        if is_frozen:
            frozen.add(name)
        tensors[name] = Tensor(data, requires_grad=not is_frozen, name=name)
    logger.info(f"🔁 Converted LM model to confidence model (mask={config.decoder_mask.value}, frozen encoder={freeze_encoder})")
    return ModelParams(config=config, tensors=tensors, frozen=frozen)


def causal_mask_bias(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_FILL), k=1)


class EncoderDecoderModel:
    """Forward passes over a ModelParams collection"""

    def __init__(self, params: ModelParams):
        self.params = params
        self.config = params.config
        self.training = False
        self._rng: Optional[np.random.Generator] = None

    def train(self, rng: np.random.Generator) -> "EncoderDecoderModel":
        self.training = True
        self._rng = rng
        return self

    def eval(self) -> "EncoderDecoderModel":
        self.training = False
        self._rng = None
        return self

    # ------------------------------------------
    # building blocks
    # ------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params.tensors[name]

    def _drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.config.dropout_rate, self._rng, self.training)

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        return add(matmul(x, self._p(f"{prefix}.weight")), self._p(f"{prefix}.bias"))

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return layer_norm(x, self._p(f"{prefix}.gain"), self._p(f"{prefix}.bias"))

    def _split_heads(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        return transpose(reshape(x, (length, self.config.n_heads, self.config.head_dim)), (1, 0, 2))

    def _attention(self, queries: Tensor, keys: Tensor, prefix: str, mask_bias: Optional[np.ndarray]) -> Tensor:
        q = self._split_heads(self._linear(queries, f"{prefix}.q"))
        k = transpose(self._split_heads(self._linear(keys, f"{prefix}.k")), (0, 2, 1))
        v = self._split_heads(self._linear(keys, f"{prefix}.v"))
        scores = scale(matmul(q, k), 1.0 / math.sqrt(self.config.head_dim))
        if mask_bias is not None:
            scores = add(scores, Tensor(mask_bias))
        context = matmul(softmax(scores, axis=-1), v)
        merged = reshape(transpose(context, (1, 0, 2)), (queries.shape[0], self.config.d_model))
        return self._linear(merged, f"{prefix}.o")

    def _mlp(self, x: Tensor, prefix: str) -> Tensor:
        return self._linear(gelu(self._linear(x, f"{prefix}.fc")), f"{prefix}.proj")

    def _check_length(self, length: int, what: str) -> None:
        if length <= 0:
            raise LengthError(f"{what} is empty")
        if length > self.config.max_seq_len:
            raise LengthError(f"{what} has {length} positions, max_seq_len is {self.config.max_seq_len}")

    # ------------------------------------------
    # encoder / decoder
    # ------------------------------------------

    def encode(self, audio_frames: np.ndarray) -> EncoderFeatures:
        frames = np.asarray(audio_frames, dtype=np.float64)
        if frames.ndim != 2 or (frames.shape[0] and frames.shape[1] != self.config.feat_dim):
            raise ShapeError(f"audio frames must be [frames x {self.config.feat_dim}], got {frames.shape}")
        count = frames.shape[0]
        self._check_length(count, "audio input")

        x = add(self._linear(Tensor(frames), "encoder.input_proj"), take_rows(self._p("encoder.pos_embedding"), range(count)))
        x = self._drop(x)
        for i in range(self.config.n_encoder_layers):
            prefix = f"encoder.layers.{i}"
            h = self._norm(x, f"{prefix}.ln1")
            x = add(x, self._drop(self._attention(h, h, f"{prefix}.self_attn", None)))
            h = self._norm(x, f"{prefix}.ln2")
            x = add(x, self._drop(self._mlp(h, f"{prefix}.mlp")))
        return EncoderFeatures(self._norm(x, "encoder.ln_f"))

    def decoder_hidden(self, features: EncoderFeatures, input_ids: Sequence[int], causal: bool) -> Tensor:
        """Final decoder states, one row per input position"""
        ids = np.asarray(input_ids, dtype=np.int64)
        length = int(ids.size)
        self._check_length(length, "decoder input")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ParameterError(f"token id outside vocabulary of size {self.config.vocab_size}")

        x = add(take_rows(self._p("decoder.token_embedding"), ids), take_rows(self._p("decoder.pos_embedding"), range(length)))
        x = self._drop(x)
        mask_bias = causal_mask_bias(length) if causal else None
        e = features.features
        for i in range(self.config.n_decoder_layers):
            prefix = f"decoder.layers.{i}"
            h = self._norm(x, f"{prefix}.ln1")
            x = add(x, self._drop(self._attention(h, h, f"{prefix}.self_attn", mask_bias)))
            h = self._norm(x, f"{prefix}.ln2")
            x = add(x, self._drop(self._attention(h, e, f"{prefix}.cross_attn", None)))
            h = self._norm(x, f"{prefix}.ln3")
            x = add(x, self._drop(self._mlp(h, f"{prefix}.mlp")))
        return self._norm(x, "decoder.ln_f")

    def _require_head(self, kind: HeadKind, operation: str) -> None:
        if self.config.head_kind != kind:
            raise ConfigurationError(f"{operation} needs a {kind.value}-head model, got {self.config.head_kind.value}")

    # ------------------------------------------
    # LM head
    # ------------------------------------------

    def lm_logits(self, features: EncoderFeatures, input_ids: Sequence[int]) -> Tensor:
        """Teacher-forced next-token logits, one row per input position"""
        self._require_head(HeadKind.LM, "lm_logits")
        h = self.decoder_hidden(features, input_ids, causal=True)
        return self._linear(h, "head.lm")

    def decode_step_logits(self, features: EncoderFeatures, prefix_tokens: Sequence[int]) -> Tensor:
        self._require_head(HeadKind.LM, "decode_step_logits")
        if len(prefix_tokens) == 0:
            raise LengthError("decode prefix is empty; it must start with BOS")
        logits = self.lm_logits(features, prefix_tokens)
        return reshape(take_rows(logits, [len(prefix_tokens) - 1]), (self.config.vocab_size,))

    def greedy_decode(self, features: EncoderFeatures, max_len: Optional[int] = None) -> DecodeResult:
        """Argmax decoding from BOS until EOS or max_len tokens"""
        self._require_head(HeadKind.LM, "greedy_decode")
        limit = self.config.max_seq_len - 1 if max_len is None else min(max_len, self.config.max_seq_len - 1)
        banned = [self.config.bos_id, self.config.pad_id]
        prefix = [self.config.bos_id]
        tokens: List[int] = []
        probs: List[float] = []
        with no_grad():
            while len(tokens) < limit:
                logits = self.decode_step_logits(features, prefix).data.copy()
                logits[banned] = -np.inf
                shifted = np.exp(logits - logits.max())
                distribution = shifted / shifted.sum()
                token = int(np.argmax(distribution))
                tokens.append(token)
                probs.append(float(distribution[token]))
                prefix.append(token)
                if token == self.config.eos_id:
                    return DecodeResult(tokens, probs, truncated=False)
        return DecodeResult(tokens, probs, truncated=True)

    # ------------------------------------------
    # confidence head
    # ------------------------------------------

    def confidence_forward(self, features: EncoderFeatures, hypothesis_tokens: Sequence[int]) -> Tensor:
        """One confidence per hypothesis token from a single parallel decoder pass"""
        self._require_head(HeadKind.CONFIDENCE, "confidence_forward")
        count = len(hypothesis_tokens)
        if count == 0:
            raise LengthError("hypothesis is empty")
        if count + 1 > self.config.max_seq_len:
            raise LengthError(f"hypothesis has {count} tokens, at most {self.config.max_seq_len - 1} fit after BOS")
        inputs = [self.config.bos_id] + list(hypothesis_tokens)
        causal = self.config.decoder_mask == DecoderMask.CAUSAL
        h = take_rows(self.decoder_hidden(features, inputs, causal=causal), range(1, count + 1))
        logits = self._linear(h, "head.confidence")
        return reshape(sigmoid(logits), (count,))
