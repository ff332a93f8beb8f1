from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.models.enums import QuantMode, QuantScheme
from app.schemas.embedder import EmbedderConfig

INT8_MIN = -128
INT8_MAX = 127


@dataclass(frozen=True)
class QuantParams:
    """Affine map between reals and int8 codes: x ≈ scale·(q − zero_point)"""
    scale: float
    zero_point: int
    scheme: QuantScheme

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not INT8_MIN <= self.zero_point <= INT8_MAX:
            raise ValueError(f"zero_point {self.zero_point} outside int8 range")
        if self.scheme is QuantScheme.SYMMETRIC and self.zero_point != 0:
            raise ValueError("symmetric quantization requires zero_point 0")


@dataclass
class CalibrationRanges:
    """Observed (min, max) per activation site, each range widened to cover 0"""
    sites: List[str]
    ranges: List[Tuple[float, float]]

    def __post_init__(self):
        if len(self.sites) != len(self.ranges):
            raise ValueError("one range per site")
        for lo, hi in self.ranges:
            if lo > hi:
                raise ValueError(f"range ({lo}, {hi}) has min > max")

    def as_array(self) -> np.ndarray:
        return np.array(self.ranges, dtype=np.float64).reshape(-1, 2)


@dataclass
class QuantizedNet:
    """
    int8 copy of an EmbedderNet.

    Weights are symmetric per-tensor int8; biases stay float32. Static nets
    also carry one affine QuantParams per activation site (the input of
    every layer); dynamic nets compute those per batch.
    """
    config: EmbedderConfig
    weights: List[np.ndarray]           # int8, layer order: convs then dense
    weight_qparams: List[QuantParams]
    biases: List[np.ndarray]            # float32
    mode: QuantMode
    act_qparams: Optional[List[QuantParams]] = None
    ranges: Optional[CalibrationRanges] = field(default=None)

    def __post_init__(self):
        if not (len(self.weights) == len(self.weight_qparams) == len(self.biases)):
            raise ValueError("weights, weight params and biases must align per layer")
        if self.mode is QuantMode.STATIC and (self.act_qparams is None or len(self.act_qparams) != len(self.weights)):
            raise ValueError("static quantization needs one activation QuantParams per layer")

    @property
    def num_layers(self) -> int:
        return len(self.weights)
