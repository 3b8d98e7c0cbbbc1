"""
Exception hierarchy for the restoration framework
"""
from typing import Any, Dict, Optional


class RestorationError(Exception):
    """Base exception for all restoration-related errors"""

    exit_code: int = 2
    kind: str = "restoration_error"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form written to stderr by the command layer"""
        payload = {
            'error': self.kind,
            'message': self.message,
            'exit_code': self.exit_code,
        }
        if self.context:
            payload['context'] = {k: _jsonable(v) for k, v in self.context.items()}
        return payload


class ValidationError(RestorationError):
    """Raised when input data or arguments fail validation"""
    exit_code = 1
    kind = "validation_error"


class ConfigurationError(RestorationError):
    """Raised when configuration is inconsistent (label length, modes, YAML)"""
    exit_code = 1
    kind = "configuration_error"


class DimensionError(RestorationError):
    """Raised when array shapes do not satisfy an operation's contract"""
    exit_code = 1
    kind = "dimension_error"


class IngestionError(RestorationError):
    """Raised when a volume or dataset on disk cannot be decoded"""
    exit_code = 1
    kind = "ingestion_error"


class UndefinedMetricError(RestorationError):
    """Raised when a metric is mathematically undefined for its inputs"""
    exit_code = 1
    kind = "undefined_metric"


class NumericalError(RestorationError):
    """Raised when a loss term becomes NaN or infinite during training"""
    exit_code = 2
    kind = "numerical_error"

    def __init__(self, message: str, term: Optional[str] = None,
                 epoch: Optional[int] = None, batch: Optional[int] = None, **context: Any):
        super().__init__(message, term=term, epoch=epoch, batch=batch, **context)
        self.term = term
        self.epoch = epoch
        self.batch = batch


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)
