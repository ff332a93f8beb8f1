from pathlib import Path

import numpy as np
import pandas as pd

from app.api.dependencies import CLASSIFIER_OPTIONS, CliConfig, get_bundle, get_dataset, get_extractor, resolve_classifier
from app.api.routing import CommandRouter, opt
from app.core.exceptions import ConfigError, DatasetIOError
from app.core.tensor import Tensor
from app.models.bundle import ModelBundle
from app.models.classifier import MlpHead
from app.services.classifier_service import classifier_service
from app.services.dataset_service import dataset_service
from app.services.inference_service import inference_service
from app.services.model_io_service import model_io_service

router = CommandRouter()


@router.command(
    "embed",
    help="Write the embedding of every image in a dataset directory to CSV",
    options=[
        opt("--model", required=True),
        opt("--data", required=True),
        opt("--out", required=True, help="CSV with source, label and one column per dimension"),
    ],
)
def embed(cfg: CliConfig) -> int:
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    dataset = get_dataset(cfg["data"], extractor)
    embeddings = inference_service.embed_images(extractor, dataset.pixels)

    df = pd.DataFrame(embeddings, columns=[f"e{i}" for i in range(embeddings.shape[1])])
    df.insert(0, "label", [dataset.class_names[label] for label in dataset.labels])
    df.insert(0, "source", [img.source for img in dataset.images])
    out = Path(cfg["out"])
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise DatasetIOError(str(out), e.strerror or str(e))
    print(f"images={len(dataset)} dim={embeddings.shape[1]} out={out}")
    return 0


@router.command(
    "predict",
    help="Classify single images; prints class<TAB>confidence per image",
    options=[
        opt("--model", required=True, help="model file with an embedder plus a head or index"),
        opt("--image", required=True, nargs="+", help="image file(s)"),
        *CLASSIFIER_OPTIONS,
    ],
)
def predict(cfg: CliConfig) -> int:
    """
    Predict image classes

    **Confidence:** softmax maximum for the head, vote fraction for KNN
    """
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    classifier = resolve_classifier(cfg, bundle, cfg["model"])
    size = extractor.config.input_h
    images = np.stack([dataset_service.load_image(Path(p), size) for p in cfg["image"]])
    embeddings = inference_service.embed_images(extractor, images)

    if isinstance(classifier, MlpHead):
        ids, confidence = classifier_service.mlp_predict(classifier, Tensor(embeddings))
        names = [classifier.class_names[i] for i in ids]
    else:
        result = classifier_service.knn_predict(classifier, embeddings, k=cfg["k"])
        names, confidence = result.names(), result.vote_fraction
    for name, conf in zip(names, confidence):
        print(f"{name}\t{conf:.4f}")
    return 0


@router.command(
    "build-index",
    help="Enroll every class of a dataset into a KNN index stored with the embedder",
    options=[
        opt("--model", required=True),
        opt("--data", required=True),
        opt("--out", required=True),
        opt("--append", action="store_true", help="enroll into the model file's existing index"),
    ],
)
def build_index(cfg: CliConfig) -> int:
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    if cfg["append"] and bundle.index is None:
        raise ConfigError(f"{cfg['model']} has no index to append to", field="append")
    dataset = get_dataset(cfg["data"], extractor)
    embeddings = inference_service.embed_images(extractor, dataset.pixels)
    index = classifier_service.build_index(
        embeddings, dataset.labels, dataset.class_names, index=bundle.index if cfg["append"] else None
    )
    size = model_io_service.save_model(cfg["out"], ModelBundle(extractor=extractor, head=bundle.head, index=index))
    print(f"index_size={index.size} classes={index.num_classes} model_bytes={size}")
    return 0
