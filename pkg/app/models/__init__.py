from app.models.enums import ChunkType, ClassifierKind, MiningMode, QuantMode, QuantScheme
from app.models.embedder import ConvBlock, EmbedderNet
from app.models.classifier import KnnIndex, KnnResult, MlpHead
from app.models.quantized import CalibrationRanges, QuantizedNet, QuantParams
from app.models.dataset import Dataset, LabeledImage, PKBatch
from app.models.bundle import ModelBundle

__all__ = [
    "ChunkType",
    "ClassifierKind",
    "MiningMode",
    "QuantMode",
    "QuantScheme",
    "ConvBlock",
    "EmbedderNet",
    "KnnIndex",
    "KnnResult",
    "MlpHead",
    "CalibrationRanges",
    "QuantizedNet",
    "QuantParams",
    "Dataset",
    "LabeledImage",
    "PKBatch",
    "ModelBundle"
]
