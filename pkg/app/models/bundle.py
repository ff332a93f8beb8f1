from dataclasses import dataclass
from typing import List, Optional, Union

from app.models.classifier import KnnIndex, MlpHead
from app.models.embedder import EmbedderNet
from app.models.quantized import QuantizedNet

Extractor = Union[EmbedderNet, QuantizedNet]


@dataclass
class ModelBundle:
    """What a model file can hold: one extractor plus an optional head and index"""
    extractor: Optional[Extractor] = None
    head: Optional[MlpHead] = None
    index: Optional[KnnIndex] = None

    def components(self) -> List[object]:
        return [c for c in (self.extractor, self.head, self.index) if c is not None]

    def single(self) -> Optional[object]:
        parts = self.components()
        return parts[0] if len(parts) == 1 else None
