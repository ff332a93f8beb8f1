from app.services.embedder_service import embedder_service
from app.services.triplet_service import triplet_service
from app.services.optim_service import optim_service
from app.services.training_service import training_service
from app.services.classifier_service import classifier_service
from app.services.quantization_service import quantization_service
from app.services.inference_service import inference_service
from app.services.dataset_service import dataset_service
from app.services.model_io_service import model_io_service
from app.services.evaluation_service import evaluation_service

__all__ = [
    "embedder_service",
    "triplet_service",
    "optim_service",
    "training_service",
    "classifier_service",
    "quantization_service",
    "inference_service",
    "dataset_service",
    "model_io_service",
    "evaluation_service"
]
