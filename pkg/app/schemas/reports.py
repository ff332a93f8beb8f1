import math
from pydantic import BaseModel, Field, model_validator
from typing import List, Optional
import numpy as np


class MiningStats(BaseModel):
    """Per-batch triplet accounting"""
    total_valid_triplets: int = Field(..., ge=0)
    active_triplets: int = Field(..., ge=0)
    batch_loss: float = Field(..., ge=0)

    @model_validator(mode="after")
    def active_within_total(self):
        if self.active_triplets > self.total_valid_triplets:
            raise ValueError("active triplets cannot exceed valid triplets")
        return self

    @property
    def active_fraction(self) -> float:
        return self.active_triplets / self.total_valid_triplets if self.total_valid_triplets else 0.0


class TrainHistory(BaseModel):
    epoch_loss: List[float] = Field(default_factory=list)
    active_fraction: List[float] = Field(default_factory=list)

    def append(self, loss: float, fraction: float) -> None:
        self.epoch_loss.append(float(loss))
        self.active_fraction.append(float(fraction))

    @property
    def epochs(self) -> int:
        return len(self.epoch_loss)


class EvalReport(BaseModel):
    """Accuracy plus a confusion matrix (rows = true class, columns = predicted)"""
    accuracy: float = Field(..., ge=0, le=1)
    confusion: np.ndarray
    class_names: List[str]

    model_config = {"arbitrary_types_allowed": True}

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, class_names: List[str]) -> "EvalReport":
        confusion = np.asarray(confusion, dtype=np.int64)
        total = int(confusion.sum())
        accuracy = float(np.trace(confusion)) / total if total else 0.0
        return cls(accuracy=accuracy, confusion=confusion, class_names=list(class_names))

    @model_validator(mode="after")
    def square_matrix(self):
        n = len(self.class_names)
        if self.confusion.shape != (n, n):
            raise ValueError(f"confusion must be {n}x{n}, got {self.confusion.shape}")
        return self

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


class SplitSummary(BaseModel):
    accuracies: List[float]
    seeds: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def in_unit_interval(self):
        if not self.accuracies:
            raise ValueError("a summary needs at least one run")
        if any(a < 0 or a > 1 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        return self

    @property
    def mean(self) -> float:
        # exact sum; rounding must never lift the mean above the max
        return min(math.fsum(self.accuracies) / len(self.accuracies), self.max)

    @property
    def max(self) -> float:
        return float(np.max(self.accuracies))

    @property
    def runs(self) -> int:
        return len(self.accuracies)


class Projection2D(BaseModel):
    coords: np.ndarray  # N×2
    labels: List[str]
    components: np.ndarray  # 2×D, orthonormal rows
    explained_variance: List[float]
    mean: np.ndarray

    model_config = {"arbitrary_types_allowed": True}


class BenchmarkReport(BaseModel):
    """Consecutive single-image inference timing of the float and quantized paths"""
    float_total_s: float
    quant_total_s: float
    repeats: int
    images: int
    float_timings: List[float]
    quant_timings: List[float]
    single_threaded: bool = True
    threads_note: Optional[str] = None

    @property
    def ratio(self) -> float:
        return self.float_total_s / self.quant_total_s if self.quant_total_s > 0 else float("inf")

    def format_line(self) -> str:
        return (
            f"float_total_s={self.float_total_s:.6f} quant_total_s={self.quant_total_s:.6f} "
            f"ratio={self.ratio:.4f} repeats={self.repeats}"
        )
