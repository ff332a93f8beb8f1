from typing import List, Sequence, Tuple, Union
import logging
import math

import numpy as np

from app.core.exceptions import ConfigError, DatasetError, DivergenceError
from app.core.monitoring import metrics_tracker
from app.core.tensor import GradTape, Tensor
from app.models.classifier import MlpHead
from app.models.dataset import Dataset
from app.models.embedder import EmbedderNet
from app.models.quantized import QuantizedNet
from app.schemas.embedder import EmbedderConfig
from app.schemas.reports import TrainHistory
from app.schemas.training import HeadConfig, TrainConfig
from app.services.classifier_service import classifier_service
from app.services.embedder_service import embedder_service, he_uniform
from app.services.inference_service import inference_service
from app.services.optim_service import AdamState, optim_service
from app.services.triplet_service import triplet_service

logger = logging.getLogger(__name__)


class TrainingService:
    """Stratified splitting plus the two training stages: triplet embedder, then the MLP head"""

    @staticmethod
    def split_stratified(dataset: Dataset, ratio: float, seed: int) -> Tuple[Dataset, Dataset]:
        """
        Per-class shuffle, then round(ratio·n_c) images to train.

        Each side keeps at least one image of every class. Images keep their
        dataset order inside each side.
        """
        if not 0 < ratio < 1:
            raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}", field="split")

        rng = np.random.default_rng(seed)
        train_idx: List[int] = []
        test_idx: List[int] = []
        for c in range(dataset.num_classes):
            members = dataset.class_indices[c]
            n = members.size
            if n < 2:
                raise DatasetError(
                    f"class '{dataset.class_names[c]}' has {n} image(s); a split needs at least 2"
                )
            shuffled = members[rng.permutation(n)]
            n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
            train_idx.extend(shuffled[:n_train].tolist())
            test_idx.extend(shuffled[n_train:].tolist())

        train_idx.sort()
        test_idx.sort()
        logger.debug("Stratified split", extra={"train": len(train_idx), "test": len(test_idx), "seed": seed})
        return dataset.subset(train_idx), dataset.subset(test_idx)

    @staticmethod
    def train_embedder(
        dataset: Dataset,
        embed_cfg: EmbedderConfig,
        train_cfg: TrainConfig,
    ) -> Tuple[EmbedderNet, TrainHistory]:
        """Triplet training with PK batches; ⌈N/batch⌉ steps per epoch"""
        if dataset.pixels.shape[1:] != embed_cfg.input_shape:
            raise ConfigError(
                f"dataset images {dataset.pixels.shape[1:]} do not match embedder input {embed_cfg.input_shape}"
            )

        net = embedder_service.build_embedder(embed_cfg)
        params = net.parameters()
        state = AdamState()
        rng = np.random.default_rng(train_cfg.seed)
        steps = max(1, math.ceil(len(dataset) / train_cfg.batch))
        history = TrainHistory()

        logger.info(
            "Embedder training started",
            extra={
                "images": len(dataset),
                "epochs": train_cfg.epochs,
                "steps_per_epoch": steps,
                "mining": train_cfg.triplet.mining.value,
                "margin": train_cfg.triplet.margin,
            }
        )

        for epoch in range(1, train_cfg.epochs + 1):
            losses = []
            active = 0
            total = 0
            for _ in range(steps):
                batch = triplet_service.pk_sample(dataset, train_cfg.P, train_cfg.K, rng)
                tape = GradTape()
                embeddings = embedder_service.embed_batch(net, Tensor(batch.images), tape=tape)
                loss, stats = triplet_service.mining_loss(embeddings, batch.labels, train_cfg.triplet, tape=tape)
                if not np.isfinite(loss.data).all():
                    raise DivergenceError(epoch)

                grads = tape.backward(loss, params)
                if not all(np.isfinite(g).all() for g in grads.values()):
                    raise DivergenceError(epoch)
                optim_service.adam_step(params, grads, state, train_cfg.adam)

                losses.append(stats.batch_loss)
                active += stats.active_triplets
                total += stats.total_valid_triplets
                metrics_tracker.track_step("embedder")

            mean_loss = float(np.mean(losses))
            fraction = active / total if total else 0.0
            history.append(mean_loss, fraction)
            metrics_tracker.track_epoch("embedder", mean_loss, fraction)
            logger.info(
                "Embedder epoch finished",
                extra={"epoch": epoch, "loss": mean_loss, "active_fraction": fraction}
            )

        return net, history

    @staticmethod
    def fit_head(
        embeddings: np.ndarray,
        labels: Sequence[int],
        class_names: List[str],
        head_cfg: HeadConfig,
    ) -> Tuple[MlpHead, TrainHistory]:
        """
        Train the dense-relu-dense head with cross-entropy on fixed embeddings.

        The history's second series records the per-epoch fraction of
        training samples the head still misclassifies.
        """
        embeddings = np.asarray(embeddings, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        n, dim = embeddings.shape
        n_classes = len(class_names)
        if head_cfg.num_classes is not None and head_cfg.num_classes != n_classes:
            raise ConfigError(
                f"head configured for {head_cfg.num_classes} classes, data has {n_classes}",
                field="num_classes",
            )
        if n_classes < 2:
            raise ConfigError("the classifier head needs at least 2 classes")
        if labels.size != n:
            raise ConfigError(f"{labels.size} labels for {n} embeddings")

        rng = np.random.default_rng(head_cfg.seed)
        hidden = head_cfg.hidden
        head = MlpHead(
            w1=Tensor.parameter(he_uniform(rng, (dim, hidden), fan_in=dim), name="head.w1"),
            b1=Tensor.parameter(np.zeros(hidden, dtype=np.float32), name="head.b1"),
            w2=Tensor.parameter(he_uniform(rng, (hidden, n_classes), fan_in=hidden), name="head.w2"),
            b2=Tensor.parameter(np.zeros(n_classes, dtype=np.float32), name="head.b2"),
            class_names=list(class_names),
        )
        params = head.parameters()
        state = AdamState()
        history = TrainHistory()

        for epoch in range(1, head_cfg.epochs + 1):
            order = rng.permutation(n)
            losses = []
            wrong = 0
            for start in range(0, n, head_cfg.batch):
                idx = order[start:start + head_cfg.batch]
                tape = GradTape()
                logits = classifier_service.mlp_forward(head, Tensor(embeddings[idx]), tape=tape)
                loss = classifier_service.cross_entropy(logits, labels[idx], tape=tape)
                if not np.isfinite(loss.data).all():
                    raise DivergenceError(epoch, stage="head")
                grads = tape.backward(loss, params)
                optim_service.adam_step(params, grads, state, head_cfg.adam)
                losses.append(loss.item() * idx.size)
                wrong += int((logits.data.argmax(axis=1) != labels[idx]).sum())
                metrics_tracker.track_step("head")

            mean_loss = float(np.sum(losses) / n)
            history.append(mean_loss, wrong / n)
            metrics_tracker.track_epoch("head", mean_loss)
            logger.debug("Head epoch finished", extra={"epoch": epoch, "loss": mean_loss, "train_error": wrong / n})

        logger.info(
            "Classifier head trained",
            extra={"classes": n_classes, "hidden": hidden, "final_loss": history.epoch_loss[-1]}
        )
        return head, history

    @staticmethod
    def train_classifier_head(
        extractor: Union[EmbedderNet, QuantizedNet],
        train_set: Dataset,
        head_cfg: HeadConfig,
    ) -> MlpHead:
        """Embed the training set once through the frozen extractor, then fit the head"""
        if head_cfg.num_classes is not None and head_cfg.num_classes != train_set.num_classes:
            raise ConfigError(
                f"head output width {head_cfg.num_classes} != dataset class count {train_set.num_classes}",
                field="num_classes",
            )
        if train_set.pixels.shape[1:] != extractor.config.input_shape:
            raise ConfigError(
                f"dataset images {train_set.pixels.shape[1:]} do not match extractor input {extractor.config.input_shape}"
            )
        embeddings = inference_service.embed_images(extractor, train_set.pixels)
        head, _ = TrainingService.fit_head(embeddings, train_set.labels, train_set.class_names, head_cfg)
        return head


training_service = TrainingService()
