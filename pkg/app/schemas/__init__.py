from app.schemas.embedder import EmbedderConfig
from app.schemas.training import AdamConfig, HeadConfig, TrainConfig, TripletConfig
from app.schemas.dataset import SyntheticSpec
from app.schemas.reports import (
    BenchmarkReport,
    EvalReport,
    MiningStats,
    Projection2D,
    SplitSummary,
    TrainHistory
)

__all__ = [
    "EmbedderConfig",
    "AdamConfig",
    "HeadConfig",
    "TrainConfig",
    "TripletConfig",
    "SyntheticSpec",
    "BenchmarkReport",
    "EvalReport",
    "MiningStats",
    "Projection2D",
    "SplitSummary",
    "TrainHistory"
]
