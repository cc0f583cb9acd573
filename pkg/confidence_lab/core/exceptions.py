"""
Exception hierarchy for the confidence lab
Every error raised on purpose by the package derives from ConfidenceLabError
"""

from typing import Optional


class ConfidenceLabError(Exception):
    """Base class for all confidence lab errors"""


class ShapeError(ConfidenceLabError):
    """Tensor shapes are incompatible for an operation"""


class ParameterError(ConfidenceLabError):
    """An argument is outside its valid range"""


class LossSupportError(ConfidenceLabError):
    """A masked loss has no positions to average over"""


class OptimizerError(ConfidenceLabError):
    """The optimizer cannot update a parameter"""


class ConfigurationError(ConfidenceLabError):
    """A model or run configuration does not permit the requested operation"""


class LengthError(ConfidenceLabError):
    """A sequence is empty or longer than the model supports"""


class VocabularyError(ConfidenceLabError):
    """Text contains a character outside the tokenizer alphabet"""


class LabelingError(ConfidenceLabError):
    """Alignment, labels and word boundaries are inconsistent"""


class MetricError(ConfidenceLabError):
    """A metric is undefined for its input"""

    def __init__(self, metric: str, message: str):
        self.metric = metric
        super().__init__(f"{metric}: {message}")


class RecordFormatError(ConfidenceLabError):
    """A manifest or record stream line cannot be parsed"""

    def __init__(self, path: str, line_number: Optional[int], message: str):
        self.path = path
        self.line_number = line_number
        location = f"{path}:{line_number}" if line_number is not None else path
        super().__init__(f"{location}: {message}")


class CheckpointError(ConfidenceLabError):
    """A checkpoint file is malformed or does not match its configuration"""


class TrainingDivergedError(ConfidenceLabError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}")
