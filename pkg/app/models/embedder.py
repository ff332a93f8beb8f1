from dataclasses import dataclass
from typing import List

import numpy as np

from app.core.tensor import Tensor
from app.schemas.embedder import EmbedderConfig


@dataclass
class ConvBlock:
    kernel: Tensor  # F×C×3×3
    bias: Tensor    # F


@dataclass
class EmbedderNet:
    """
    The twin network f.

    One parameter set serves anchor, positive and negative alike; every
    caller embeds through the same tensors, never through copies.
    """
    config: EmbedderConfig
    blocks: List[ConvBlock]
    dense_w: Tensor  # flat_dim×D
    dense_b: Tensor  # D

    def parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        for block in self.blocks:
            params.extend([block.kernel, block.bias])
        params.extend([self.dense_w, self.dense_b])
        return params

    def weight_tensors(self) -> List[Tensor]:
        """Kernels and dense weight, in layer order"""
        return [b.kernel for b in self.blocks] + [self.dense_w]

    def bias_tensors(self) -> List[Tensor]:
        return [b.bias for b in self.blocks] + [self.dense_b]

    def snapshot(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())
