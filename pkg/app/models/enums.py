"""
Unified enums for the tripletleaf engine
Consolidates enums used across multiple modules
"""
import enum


class MiningMode(str, enum.Enum):
    """Triplet selection strategy inside a PK batch"""
    BATCH_ALL = "batch_all"    # every valid triplet, averaged over the active ones
    BATCH_HARD = "batch_hard"  # hardest positive and negative per anchor


class QuantMode(str, enum.Enum):
    DYNAMIC = "dynamic"  # activation params computed per batch
    STATIC = "static"    # activation params fixed by calibration


class QuantScheme(str, enum.Enum):
    SYMMETRIC = "symmetric"
    AFFINE = "affine"

    @property
    def code(self) -> int:
        return 0 if self is QuantScheme.SYMMETRIC else 1

    @classmethod
    def from_code(cls, code: int) -> "QuantScheme":
        return cls.SYMMETRIC if int(code) == 0 else cls.AFFINE


class ChunkType(int, enum.Enum):
    """Chunk tags of the TMLM model file"""
    WEIGHTS_F32 = 0
    WEIGHTS_I8 = 1
    QPARAMS = 2
    KNN_INDEX = 3
    MLP_HEAD = 4
    ACTIVATION_RANGES = 5


class ClassifierKind(str, enum.Enum):
    KNN = "knn"
    MLP = "mlp"
