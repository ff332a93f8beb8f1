"""
Custom Exception Classes
Every failure the engine reports carries an error code and a process exit code
"""

from typing import Any, Dict, Iterable, Optional, Sequence

USER_ERROR = 1
INTERNAL_ERROR = 2


# ============================================================================
# BASE EXCEPTION
# ============================================================================

class TripletLeafError(Exception):
    """Base exception class for all engine exceptions"""

    exit_code: int = USER_ERROR

    def __init__(
        self,
        detail: str,
        error_code: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        super().__init__(detail)
        self.detail = detail
        self.error_code = error_code or self.__class__.__name__
        self.context = context or {}


def _fmt_shape(shape: Iterable[int]) -> str:
    return "×".join(str(int(d)) for d in shape) or "scalar"


# ============================================================================
# TENSOR / SHAPE EXCEPTIONS
# ============================================================================

class DimensionError(TripletLeafError):
    """Raised when tensor shapes do not fit an operation"""

    def __init__(self, op: str, *shapes: Sequence[int], reason: str = "shape mismatch"):
        rendered = ", ".join(_fmt_shape(s) for s in shapes)
        super().__init__(
            detail=f"{op}: {reason} ({rendered})",
            error_code="DIMENSION_ERROR",
            context={"op": op, "shapes": [list(map(int, s)) for s in shapes]}
        )
        self.shapes = shapes


class ContractError(TripletLeafError):
    """Raised when a caller breaks an operation's precondition"""

    def __init__(self, message: str):
        super().__init__(detail=message, error_code="CONTRACT_ERROR")


class DegenerateEmbeddingError(TripletLeafError):
    """Raised when an embedding row has (near) zero norm and cannot be normalized"""

    exit_code = INTERNAL_ERROR

    def __init__(self, rows: Sequence[int]):
        super().__init__(
            detail=f"degenerate embedding: rows {list(rows)} have norm < 1e-12",
            error_code="DEGENERATE_EMBEDDING",
            context={"rows": list(rows)}
        )


class DegenerateDataError(TripletLeafError):
    """Raised when data carries no variance to analyse"""

    def __init__(self, message: str):
        super().__init__(detail=message, error_code="DEGENERATE_DATA")


# ============================================================================
# CONFIGURATION EXCEPTIONS
# ============================================================================

class ConfigError(TripletLeafError):
    """Raised when configurations disagree with each other or with the data"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(
            detail=message,
            error_code="CONFIG_ERROR",
            context={"field": field} if field else None
        )
        self.field = field


class UsageError(TripletLeafError):
    """Raised for unknown subcommands or flags"""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(detail=message, error_code="USAGE_ERROR")
        self.usage = usage


# ============================================================================
# TRAINING EXCEPTIONS
# ============================================================================

class BatchCompositionError(TripletLeafError):
    """Raised when a batch cannot produce the triplets a loss needs"""

    def __init__(self, message: str):
        super().__init__(detail=f"Invalid batch composition: {message}", error_code="BATCH_COMPOSITION")


class DivergenceError(TripletLeafError):
    """Raised when the training loss stops being finite"""

    exit_code = INTERNAL_ERROR

    def __init__(self, epoch: int, stage: str = "embedder"):
        super().__init__(
            detail=f"{stage} training diverged at epoch {epoch}: loss is not finite",
            error_code="DIVERGENCE",
            context={"epoch": epoch, "stage": stage}
        )
        self.epoch = epoch


# ============================================================================
# CLASSIFIER EXCEPTIONS
# ============================================================================

class IndexStateError(TripletLeafError):
    """Raised when querying an index that cannot answer"""

    def __init__(self, message: str = "KNN index is empty"):
        super().__init__(detail=message, error_code="INDEX_STATE")


# ============================================================================
# DATA / FILE EXCEPTIONS
# ============================================================================

class DatasetError(TripletLeafError):
    """Raised when a dataset cannot satisfy an operation"""

    def __init__(self, message: str):
        super().__init__(detail=message, error_code="DATASET_ERROR")


class DatasetIOError(TripletLeafError):
    """Raised when a file cannot be read or written"""

    def __init__(self, path: str, reason: str):
        super().__init__(
            detail=f"I/O error on {path}: {reason}",
            error_code="IO_ERROR",
            context={"path": path}
        )
        self.path = path


class ImageFormatError(TripletLeafError):
    """Raised when an image file is malformed or of an unsupported type"""

    def __init__(self, message: str, supported: Optional[Sequence[str]] = None):
        if supported:
            message = f"{message} (supported: {', '.join(supported)})"
        super().__init__(detail=message, error_code="IMAGE_FORMAT")


class ModelFormatError(TripletLeafError):
    """Raised when a model file does not follow the TMLM layout"""

    def __init__(self, message: str):
        super().__init__(detail=f"Model file error: {message}", error_code="MODEL_FORMAT")
