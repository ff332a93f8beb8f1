from pathlib import Path
from typing import List, Optional, Sequence, Union
import logging

import numpy as np
import pandas as pd

from app.core.exceptions import (
    ConfigError,
    ContractError,
    DatasetError,
    DatasetIOError,
    DegenerateDataError,
)
from app.core.tensor import Tensor
from app.models.bundle import Extractor
from app.models.classifier import KnnIndex, MlpHead
from app.models.dataset import Dataset
from app.models.enums import ClassifierKind
from app.schemas.embedder import EmbedderConfig
from app.schemas.reports import EvalReport, Projection2D, SplitSummary
from app.schemas.training import HeadConfig, TrainConfig
from app.services.classifier_service import classifier_service
from app.services.inference_service import inference_service
from app.services.training_service import training_service

logger = logging.getLogger(__name__)

PCA_TOLERANCE = 1e-9
PCA_MAX_ITER = 1000


def _pinned_sign(v: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude entry is positive"""
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


class EvaluationService:
    """Accuracy and confusion, repeated splits, few-shot enrollment, PCA projection and CSV export"""

    @staticmethod
    def evaluate(
        extractor: Extractor,
        classifier: Union[MlpHead, KnnIndex],
        test_set: Dataset,
        k: int = 1,
    ) -> EvalReport:
        """
        Embed the test set, predict and tally a confusion matrix.

        Matrix axes are the test classes in dataset order, followed by any
        further classes the classifier knows.
        """
        known = list(classifier.class_names)
        missing = [n for n in test_set.class_names if n not in known]
        if missing:
            what = "head" if isinstance(classifier, MlpHead) else "index"
            raise ConfigError(f"test classes {missing} are unknown to the {what}")
        if len(test_set) == 0:
            raise DatasetError("test set is empty")

        embeddings = inference_service.embed_images(extractor, test_set.pixels)
        if isinstance(classifier, MlpHead):
            predicted, _ = classifier_service.mlp_predict(classifier, Tensor(embeddings))
        else:
            predicted = classifier_service.knn_predict(classifier, embeddings, k=k).class_ids

        axes = list(test_set.class_names) + [n for n in known if n not in test_set.class_names]
        position = {name: i for i, name in enumerate(axes)}
        true_pos = [position[test_set.class_names[label]] for label in test_set.labels]
        pred_pos = [position[known[int(p)]] for p in predicted]

        confusion = np.zeros((len(axes), len(axes)), dtype=np.int64)
        for t, p in zip(true_pos, pred_pos):
            confusion[t, p] += 1
        report = EvalReport.from_confusion(confusion, axes)
        logger.info("Evaluation finished", extra={"images": report.total, "accuracy": report.accuracy})
        return report

    @staticmethod
    def repeated_splits(
        dataset: Dataset,
        embed_cfg: EmbedderConfig,
        train_cfg: TrainConfig,
        runs: int = 16,
        ratio: float = 0.8,
        seeds: Optional[Sequence[int]] = None,
        classifier: ClassifierKind = ClassifierKind.KNN,
        k: int = 1,
        head_cfg: Optional[HeadConfig] = None,
    ) -> SplitSummary:
        """One fresh split, full training and evaluation per run; run r uses seeds[r] everywhere"""
        if runs < 1:
            raise ContractError("repeated splits need at least one run")
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k}")
        seeds = list(seeds) if seeds is not None else [train_cfg.seed + r for r in range(runs)]
        if len(seeds) != runs:
            raise ContractError(f"{len(seeds)} seeds given for {runs} runs")

        accuracies: List[float] = []
        for run, seed in enumerate(seeds, start=1):
            train_set, test_set = training_service.split_stratified(dataset, ratio, seed)
            net, _ = training_service.train_embedder(
                train_set,
                embed_cfg.model_copy(update={"init_seed": seed}),
                train_cfg.model_copy(update={"seed": seed}),
            )
            if classifier is ClassifierKind.MLP:
                cfg = (head_cfg or HeadConfig()).model_copy(update={"seed": seed})
                model = training_service.train_classifier_head(net, train_set, cfg)
            else:
                embeddings = inference_service.embed_images(net, train_set.pixels)
                model = classifier_service.build_index(embeddings, train_set.labels, train_set.class_names)
            report = EvaluationService.evaluate(net, model, test_set, k=k)
            accuracies.append(report.accuracy)
            logger.info("Split run finished", extra={"run": run, "seed": seed, "accuracy": report.accuracy})

        return SplitSummary(accuracies=accuracies, seeds=seeds)

    @staticmethod
    def fewshot_enroll_eval(
        extractor: Extractor,
        novel: Dataset,
        shots: int = 2,
        base: Optional[Dataset] = None,
        k: int = 1,
    ) -> EvalReport:
        """
        Enroll the first `shots` images of every novel class into a KNN index
        (after all base images when `base` is given) and evaluate on the rest.
        """
        if shots < 1:
            raise ContractError("shots must be >= 1")
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k}")
        counts = novel.class_counts()
        for name, n in zip(novel.class_names, counts):
            if shots >= n:
                raise ContractError(f"{shots} shots leave nothing held out for class '{name}' ({n} images)")
        for name, n in zip(novel.class_names, counts):
            if n < 2 * shots:
                raise DatasetError(f"class '{name}' has {n} images; {shots}-shot enrollment needs {2 * shots}")
        if base is not None:
            clash = set(base.class_names) & set(novel.class_names)
            if clash:
                raise ConfigError(f"novel classes {sorted(clash)} also appear among the base classes")

        index = KnnIndex.empty(extractor.config.embedding_dim)
        if base is not None and len(base):
            base_embeddings = inference_service.embed_images(extractor, base.pixels)
            index = classifier_service.build_index(base_embeddings, base.labels, base.class_names)

        enroll_idx: List[int] = []
        held_idx: List[int] = []
        for c in range(novel.num_classes):
            members = novel.class_indices[c]
            enroll_idx.extend(members[:shots].tolist())
            held_idx.extend(members[shots:].tolist())

        enroll_set = novel.subset(enroll_idx)
        enroll_embeddings = inference_service.embed_images(extractor, enroll_set.pixels)
        index = classifier_service.build_index(
            enroll_embeddings, enroll_set.labels, enroll_set.class_names, index=index
        )
        logger.info(
            "Few-shot enrollment",
            extra={"novel_classes": novel.num_classes, "shots": shots, "index_size": index.size}
        )
        return EvaluationService.evaluate(extractor, index, novel.subset(held_idx), k=k)

    # ========================================================================
    # EMBEDDING GEOMETRY
    # ========================================================================

    @staticmethod
    def _power_iteration(cov: np.ndarray, start: np.ndarray, against: Optional[np.ndarray], total: float) -> np.ndarray:
        def orthogonalize(v: np.ndarray) -> np.ndarray:
            if against is not None:
                v = v - against * (against @ v)
            return v / np.linalg.norm(v)

        v = orthogonalize(start)
        floor = 1e-12 * total
        for _ in range(PCA_MAX_ITER):
            w = cov @ v
            if against is not None:
                w = w - against * (against @ w)
            norm = np.linalg.norm(w)
            if norm <= floor:
                # no variance left in this subspace; any orthonormal direction will do
                return v
            w = w / norm
            if np.linalg.norm(w - v) < PCA_TOLERANCE:
                return w
            v = w
        return v

    @staticmethod
    def pca_project(embeddings: np.ndarray, labels: Optional[Sequence[str]] = None) -> Projection2D:
        """Top-2 principal directions by power iteration with deflation"""
        x = np.asarray(embeddings, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 3:
            raise ContractError(f"PCA needs at least 3 rows, got shape {x.shape}")
        if x.shape[1] < 2:
            raise ContractError("PCA to 2D needs at least 2 columns")

        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / x.shape[0]
        total = float(np.trace(cov))
        if total <= 1e-24:
            raise DegenerateDataError("all rows are identical; there is no direction to project on")

        rng = np.random.default_rng(0)
        first = _pinned_sign(EvaluationService._power_iteration(cov, rng.normal(size=x.shape[1]), None, total))
        lam1 = float(first @ cov @ first)
        deflated = cov - lam1 * np.outer(first, first)
        second = EvaluationService._power_iteration(deflated, rng.normal(size=x.shape[1]), first, total)
        second = _pinned_sign(second)
        lam2 = max(float(second @ cov @ second), 0.0)

        components = np.vstack([first, second])
        explained = [min(max(lam1 / total, 0.0), 1.0), min(max(lam2 / total, 0.0), 1.0)]
        coords = centered @ components.T
        return Projection2D(
            coords=coords,
            labels=[str(l) for l in labels] if labels is not None else [""] * x.shape[0],
            components=components,
            explained_variance=explained,
            mean=mean,
        )

    @staticmethod
    def separation_ratio(embeddings: np.ndarray, labels: Sequence[int]) -> float:
        """Mean inter-class over mean intra-class Euclidean distance"""
        e = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels)
        d = np.sqrt(np.maximum(((e[:, None, :] - e[None, :, :]) ** 2).sum(axis=-1), 0.0))
        upper = np.triu(np.ones_like(d, dtype=bool), k=1)
        same = labels[:, None] == labels[None, :]
        intra = d[upper & same]
        inter = d[upper & ~same]
        if intra.size == 0 or inter.size == 0:
            raise DegenerateDataError("separation needs at least one same-class and one cross-class pair")
        if intra.mean() == 0:
            raise DegenerateDataError("intra-class distances are all zero")
        return float(inter.mean() / intra.mean())

    # ========================================================================
    # CSV EXPORT
    # ========================================================================

    @staticmethod
    def export_csv(obj: Union[EvalReport, SplitSummary, Projection2D], path: Union[str, Path]) -> Path:
        path = Path(path)
        if isinstance(obj, EvalReport):
            df = pd.DataFrame(obj.confusion, index=obj.class_names, columns=obj.class_names)
            kwargs = {"index_label": ""}
        elif isinstance(obj, SplitSummary):
            rows = [{"run": i, "accuracy": a} for i, a in enumerate(obj.accuracies, start=1)]
            rows += [{"run": "mean", "accuracy": obj.mean}, {"run": "max", "accuracy": obj.max}]
            df = pd.DataFrame(rows, columns=["run", "accuracy"])
            kwargs = {"index": False}
        elif isinstance(obj, Projection2D):
            df = pd.DataFrame({"x": obj.coords[:, 0], "y": obj.coords[:, 1], "label": obj.labels})
            kwargs = {"index": False}
        else:
            raise ContractError(f"cannot export {type(obj).__name__} as CSV")

        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            df.to_csv(path, encoding="utf-8", lineterminator="\n", **kwargs)
        except OSError as e:
            raise DatasetIOError(str(path), e.strerror or str(e))
        logger.debug("CSV exported", extra={"path": str(path), "rows": len(df)})
        return path

    @staticmethod
    def read_confusion_csv(path: Union[str, Path]) -> EvalReport:
        try:
            df = pd.read_csv(path, index_col=0, encoding="utf-8")
        except OSError as e:
            raise DatasetIOError(str(path), e.strerror or str(e))
        return EvalReport.from_confusion(df.to_numpy(dtype=np.int64), [str(c) for c in df.columns])


evaluation_service = EvaluationService()
