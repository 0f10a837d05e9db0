# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Error types
Every error raised by the library derives from KstppError and carries a stable code
"""

from typing import Any, Optional, Tuple


class KstppError(Exception):
    """Base class; ``code`` is what the CLI prints on failure"""

    code = "kstpp_error"


class DimensionMismatchError(KstppError, ValueError):
    code = "dimension_mismatch"


class NotPositiveDefiniteError(KstppError, ValueError):
    code = "not_positive_definite"

    def __init__(self, pivot: int, message: Optional[str] = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite: pivot {pivot} is non-positive")


class KernelConditioningError(KstppError, ValueError):
    code = "kernel_conditioning"

    def __init__(self, axis: str, pivot: int, jitter: float):
        self.axis = axis
        self.pivot = pivot
        super().__init__(
            f"Gram matrix on axis '{axis}' failed to factor at pivot {pivot} "
            f"(jitter {jitter:.3g}); increase the jitter"
        )


class InvalidGridError(KstppError, ValueError):
    code = "invalid_grid"


class QuadratureError(KstppError, ValueError):
    code = "quadrature_error"


class NonFiniteIntegrandError(KstppError, ArithmeticError):
    code = "non_finite_integrand"

    def __init__(self, node: Tuple[float, ...], value: Any = None):
        self.node = node
        super().__init__(f"integrand is not finite at node {node} (value {value})")


class HistoryOrderError(KstppError, ValueError):
    code = "history_order"


class DomainError(KstppError, ValueError):
    code = "domain_error"


class NonFiniteGradientError(KstppError, ArithmeticError):
    code = "non_finite_gradient"

    def __init__(self, block: str):
        self.block = block
        super().__init__(f"gradient block '{block}' contains non-finite entries")


class TrainingAborted(KstppError):
    code = "training_aborted"

    def __init__(self, message: str, checkpoint: Optional[dict] = None, log: Optional[list] = None):
        self.checkpoint = checkpoint
        self.log = log or []
        super().__init__(message)


class ThinningBoundError(KstppError, ArithmeticError):
    code = "thinning_bound"


class PredictionError(KstppError, ArithmeticError):
    code = "prediction_error"


class MetricError(KstppError, ValueError):
    code = "metric_error"


class DatasetFormatError(KstppError, ValueError):
    code = "dataset_format"

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(KstppError, ValueError):
    code = "config_error"


class CheckpointError(KstppError, ValueError):
    code = "checkpoint_error"


class PluginError(KstppError):
    code = "plugin_error"
