from concurrent.futures import ThreadPoolExecutor
from typing import Optional
import logging
import time

import numpy as np

from app.core.config import settings
from app.core.monitoring import metrics_tracker
from app.core.tensor import Tensor
from app.models.bundle import Extractor
from app.models.quantized import QuantizedNet
from app.services.embedder_service import embedder_service
from app.services.quantization_service import quantization_service

logger = logging.getLogger(__name__)


class InferenceService:
    """Batch embedding with whichever extractor a model file holds"""

    @staticmethod
    def embed_chunk(extractor: Extractor, images: np.ndarray) -> np.ndarray:
        if isinstance(extractor, QuantizedNet):
            return quantization_service.quantized_embed(extractor, images).data
        return embedder_service.embed_batch(extractor, Tensor(images)).data

    @staticmethod
    def embed_images(
        extractor: Extractor,
        images: np.ndarray,
        chunk: Optional[int] = None,
        workers: Optional[int] = None,
    ) -> np.ndarray:
        """
        Embed N images with a float or quantized extractor.

        Chunks are embedded on a thread pool and concatenated in index order,
        so the result does not depend on the worker count.
        """
        chunk = chunk or settings.EMBED_CHUNK
        workers = workers or settings.EMBED_WORKERS
        if len(images) == 0:
            return np.zeros((0, extractor.config.embedding_dim), dtype=np.float32)

        started = time.perf_counter()
        starts = list(range(0, len(images), chunk))

        def run(start: int) -> np.ndarray:
            return InferenceService.embed_chunk(extractor, images[start:start + chunk])

        if workers == 1 or len(starts) == 1:
            parts = [run(s) for s in starts]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, starts))
        path = "quantized" if isinstance(extractor, QuantizedNet) else "float"
        metrics_tracker.track_inference(path, time.perf_counter() - started)
        logger.debug("Images embedded", extra={"images": len(images), "chunks": len(starts), "path": path})
        return np.concatenate(parts, axis=0)


inference_service = InferenceService()
