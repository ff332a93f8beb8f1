from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.tensor import Tensor


@dataclass
class MlpHead:
    """dense → relu → dense over embeddings; output width equals the class count"""
    w1: Tensor  # D×H
    b1: Tensor  # H
    w2: Tensor  # H×C
    b2: Tensor  # C
    class_names: List[str]

    def __post_init__(self):
        if self.w2.shape[1] != len(self.class_names):
            raise ValueError(
                f"head output width {self.w2.shape[1]} != {len(self.class_names)} class names"
            )

    @property
    def layer_sizes(self) -> List[int]:
        return [self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]]

    def parameters(self) -> List[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass(frozen=True, eq=False)
class KnnIndex:
    """
    Stored embeddings with aligned labels and a class-name registry.

    Instances are immutable: enrollment returns a new index, so concurrent
    readers keep a consistent view.
    """
    embeddings: np.ndarray  # N×D float32
    labels: np.ndarray      # N int64, indexes class_names
    class_names: tuple = ()

    @classmethod
    def empty(cls, dim: int) -> "KnnIndex":
        return cls(
            embeddings=np.zeros((0, dim), dtype=np.float32),
            labels=np.zeros(0, dtype=np.int64),
            class_names=(),
        )

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_id(self, name: str) -> Optional[int]:
        try:
            return self.class_names.index(name)
        except ValueError:
            return None


@dataclass
class KnnResult:
    class_ids: np.ndarray
    vote_fraction: np.ndarray
    k_used: int
    clamped: bool = False
    class_names: List[str] = field(default_factory=list)

    def names(self) -> List[str]:
        return [self.class_names[i] for i in self.class_ids]
