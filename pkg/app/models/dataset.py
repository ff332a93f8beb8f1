from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class LabeledImage:
    """One 3×H×W image with values in [0, 1]"""
    pixels: np.ndarray
    label: int
    source: str


@dataclass
class Dataset:
    """Images plus the ordered class-name registry their labels index into"""
    images: List[LabeledImage]
    class_names: List[str]

    def __post_init__(self):
        n = len(self.class_names)
        if len(set(self.class_names)) != n:
            raise ValueError("class names must be unique")
        for img in self.images:
            if not 0 <= img.label < n:
                raise ValueError(f"label {img.label} of {img.source} has no class name")

    def __len__(self) -> int:
        return len(self.images)

    @cached_property
    def pixels(self) -> np.ndarray:
        """All images stacked as N×C×H×W float32"""
        if not self.images:
            return np.zeros((0, 3, 0, 0), dtype=np.float32)
        return np.stack([img.pixels for img in self.images]).astype(np.float32, copy=False)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([img.label for img in self.images], dtype=np.int64)

    @cached_property
    def class_indices(self) -> Dict[int, np.ndarray]:
        """Image indices per class id, in dataset order"""
        return {c: np.flatnonzero(self.labels == c) for c in range(len(self.class_names))}

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> List[int]:
        return [int(self.class_indices[c].size) for c in range(self.num_classes)]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(images=[self.images[int(i)] for i in indices], class_names=list(self.class_names))

    def select_classes(self, names: Sequence[str]) -> "Dataset":
        """Keep only the named classes, relabelled in the given order"""
        remap = {self.class_names.index(n): i for i, n in enumerate(names)}
        images = [
            LabeledImage(pixels=img.pixels, label=remap[img.label], source=img.source)
            for img in self.images if img.label in remap
        ]
        return Dataset(images=images, class_names=list(names))


@dataclass
class PKBatch:
    """P classes × K images; labels are dataset class ids"""
    images: np.ndarray
    labels: np.ndarray
    P: int
    K: int
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.labels.size)
