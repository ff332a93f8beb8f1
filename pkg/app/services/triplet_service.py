from typing import Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.exceptions import DatasetError
from app.core.ops import BatchAllTriplet, BatchHardTriplet, PairwiseSqDist
from app.core.tensor import GradTape, Tensor
from app.models.dataset import Dataset, PKBatch
from app.models.enums import MiningMode
from app.schemas.reports import MiningStats
from app.schemas.training import TripletConfig

logger = logging.getLogger(__name__)


class TripletService:
    """Triplet hinge loss with online mining over PK batches"""

    @staticmethod
    def pairwise_sq_dist(embeddings: Tensor, tape: Optional[GradTape] = None) -> Tensor:
        return PairwiseSqDist.apply(embeddings, tape=tape)

    @staticmethod
    def triplet_hinge(d_ap: float, d_an: float, margin: float) -> float:
        return max(0.0, d_ap - d_an + margin)

    @staticmethod
    def batch_all_loss(
        embeddings: Tensor,
        labels: Sequence[int],
        cfg: TripletConfig,
        tape: Optional[GradTape] = None,
    ) -> Tuple[Tensor, MiningStats]:
        dist = TripletService.pairwise_sq_dist(embeddings, tape=tape)
        loss = BatchAllTriplet.apply(dist, tape=tape, labels=np.asarray(labels), margin=cfg.margin)
        saved = loss.creator.saved
        stats = MiningStats(
            total_valid_triplets=saved["total"],
            active_triplets=saved["n_active"],
            batch_loss=max(loss.item(), 0.0),
        )
        return loss, stats

    @staticmethod
    def batch_hard_loss(
        embeddings: Tensor,
        labels: Sequence[int],
        cfg: TripletConfig,
        tape: Optional[GradTape] = None,
    ) -> Tuple[Tensor, MiningStats]:
        dist = TripletService.pairwise_sq_dist(embeddings, tape=tape)
        loss = BatchHardTriplet.apply(dist, tape=tape, labels=np.asarray(labels), margin=cfg.margin)
        saved = loss.creator.saved
        stats = MiningStats(
            total_valid_triplets=int(saved["size"]),
            active_triplets=int(saved["active"].sum()),
            batch_loss=max(loss.item(), 0.0),
        )
        return loss, stats

    @staticmethod
    def mining_loss(
        embeddings: Tensor,
        labels: Sequence[int],
        cfg: TripletConfig,
        tape: Optional[GradTape] = None,
    ) -> Tuple[Tensor, MiningStats]:
        if cfg.mining is MiningMode.BATCH_ALL:
            return TripletService.batch_all_loss(embeddings, labels, cfg, tape=tape)
        return TripletService.batch_hard_loss(embeddings, labels, cfg, tape=tape)

    @staticmethod
    def pk_sample(dataset: Dataset, P: int, K: int, rng: np.random.Generator) -> PKBatch:
        """
        Draw P classes without replacement, then K images of each.

        Images are drawn without replacement when the class has at least K
        of them, with replacement otherwise.
        """
        populated = [c for c in range(dataset.num_classes) if dataset.class_indices[c].size > 0]
        if len(populated) < P:
            raise DatasetError(f"PK sampling needs {P} classes, dataset has {len(populated)}")

        classes = rng.choice(np.array(populated), size=P, replace=False)
        picked = []
        for c in classes:
            pool = dataset.class_indices[int(c)]
            picked.append(rng.choice(pool, size=K, replace=pool.size < K))
        indices = np.concatenate(picked)
        return PKBatch(
            images=dataset.pixels[indices],
            labels=dataset.labels[indices],
            P=P,
            K=K,
            indices=indices,
        )


triplet_service = TripletService()
