from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.exceptions import ContractError, DimensionError, IndexStateError
from app.core.monitoring import metrics_tracker
from app.core.ops import CrossEntropy, dense_forward, relu_forward
from app.core.tensor import GradTape, Tensor
from app.models.classifier import KnnIndex, KnnResult, MlpHead

logger = logging.getLogger(__name__)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class ClassifierService:
    """Embedding-space classifiers: the MLP head and the KNN index"""

    # MLP HEAD

    @staticmethod
    def mlp_forward(head: MlpHead, embeddings: Tensor, tape: Optional[GradTape] = None) -> Tensor:
        if embeddings.ndim != 2 or embeddings.shape[1] != head.w1.shape[0]:
            raise DimensionError("mlp_forward", embeddings.shape, head.w1.shape,
                                 reason="embedding width does not match head input")
        hidden = relu_forward(dense_forward(embeddings, head.w1, head.b1, tape=tape), tape=tape)
        return dense_forward(hidden, head.w2, head.b2, tape=tape)

    @staticmethod
    def cross_entropy(logits: Tensor, labels: Sequence[int], tape: Optional[GradTape] = None) -> Tensor:
        return CrossEntropy.apply(logits, tape=tape, labels=np.asarray(labels, dtype=np.int64))

    @staticmethod
    def mlp_predict(head: MlpHead, embeddings: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        """Argmax class ids (ties → lowest id) and the softmax maximum as confidence"""
        logits = ClassifierService.mlp_forward(head, embeddings).data
        ids = logits.argmax(axis=1)
        confidence = softmax(logits.astype(np.float64)).max(axis=1)
        return ids, confidence

    # KNN INDEX

    @staticmethod
    def knn_enroll(index: KnnIndex, embeddings: np.ndarray, label_name: str) -> KnnIndex:
        """Append rows for one class; never touches existing rows"""
        embeddings = np.asarray(embeddings, dtype=np.float32)
        if embeddings.ndim != 2 or embeddings.shape[1] != index.dim:
            raise DimensionError("knn_enroll", embeddings.shape, (index.size, index.dim),
                                 reason="embedding width does not match index")
        if embeddings.shape[0] == 0:
            return index

        names = tuple(index.class_names)
        class_id = index.class_id(label_name)
        if class_id is None:
            names = names + (label_name,)
            class_id = len(names) - 1

        logger.info(
            "Class enrolled",
            extra={"class_name": label_name, "rows": int(embeddings.shape[0]), "index_size": index.size + embeddings.shape[0]}
        )
        return KnnIndex(
            embeddings=np.concatenate([index.embeddings, embeddings], axis=0),
            labels=np.concatenate([index.labels, np.full(embeddings.shape[0], class_id, dtype=np.int64)]),
            class_names=names,
        )

    @staticmethod
    def knn_predict(index: KnnIndex, queries: np.ndarray, k: int = 1) -> KnnResult:
        """
        Majority vote among the k nearest rows (squared Euclidean).

        Equal distances keep index order; vote ties go to the class with the
        smaller mean distance, then to the lower class id. k above the index
        size is clamped and flagged.
        """
        if index.size == 0:
            raise IndexStateError()
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k}")
        queries = np.asarray(queries, dtype=np.float32)
        if queries.ndim != 2 or queries.shape[1] != index.dim:
            raise DimensionError("knn_predict", queries.shape, (index.size, index.dim))

        clamped = k > index.size
        k_used = min(k, index.size)
        if clamped:
            logger.warning("k exceeds index size, clamped", extra={"k": k, "k_used": k_used})

        q = queries.astype(np.float64)
        stored = index.embeddings.astype(np.float64)
        dists = ((q[:, None, :] - stored[None, :, :]) ** 2).sum(axis=-1)
        order = np.argsort(dists, axis=1, kind="stable")[:, :k_used]

        n_classes = index.num_classes
        ids = np.empty(len(queries), dtype=np.int64)
        fractions = np.empty(len(queries), dtype=np.float64)
        for row in range(len(queries)):
            neighbours = order[row]
            votes = np.bincount(index.labels[neighbours], minlength=n_classes)
            dist_sum = np.bincount(index.labels[neighbours], weights=dists[row, neighbours], minlength=n_classes)
            tied = np.flatnonzero(votes == votes.max())
            if tied.size > 1:
                mean_dist = dist_sum[tied] / votes[tied]
                tied = tied[mean_dist == mean_dist.min()]
            ids[row] = tied.min()
            fractions[row] = votes[ids[row]] / k_used

        metrics_tracker.track_knn(len(queries), clamped)
        return KnnResult(
            class_ids=ids,
            vote_fraction=fractions,
            k_used=k_used,
            clamped=clamped,
            class_names=list(index.class_names),
        )

    @staticmethod
    def build_index(embeddings: np.ndarray, labels: Sequence[int], class_names: List[str],
                    index: Optional[KnnIndex] = None) -> KnnIndex:
        """Enroll every class of a labelled embedding set, in class-name order"""
        embeddings = np.asarray(embeddings, dtype=np.float32)
        labels = np.asarray(labels)
        index = index if index is not None else KnnIndex.empty(embeddings.shape[1])
        for class_id, name in enumerate(class_names):
            index = ClassifierService.knn_enroll(index, embeddings[labels == class_id], name)
        return index


classifier_service = ClassifierService()
