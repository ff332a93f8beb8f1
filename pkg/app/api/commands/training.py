from app.api.dependencies import (
    EMBEDDER_OPTIONS,
    HEAD_OPTIONS,
    TRAINING_OPTIONS,
    CliConfig,
    get_bundle,
    get_dataset,
    get_extractor,
)
from app.api.routing import CommandRouter, opt
from app.models.bundle import ModelBundle
from app.services.evaluation_service import evaluation_service
from app.services.model_io_service import model_io_service
from app.services.training_service import training_service

router = CommandRouter()


@router.command(
    "train-embedder",
    help="Train the convolutional embedder with the triplet loss",
    options=[
        opt("--data", required=True, help="directory-per-class dataset"),
        opt("--out", required=True, help="model file to write"),
        *EMBEDDER_OPTIONS,
        *TRAINING_OPTIONS,
    ],
)
def train_embedder(cfg: CliConfig) -> int:
    """
    Train an embedder

    **Steps:** ⌈N/batch⌉ PK batches per epoch, mining loss, Adam
    """
    embed_cfg = cfg.embedder_config()
    dataset = get_dataset(cfg["data"], size=embed_cfg.input_h)
    train_cfg = cfg.train_config(dataset.num_classes)
    net, history = training_service.train_embedder(dataset, embed_cfg, train_cfg)
    size = model_io_service.save_model(cfg["out"], net)
    print(
        f"epochs={history.epochs} first_loss={history.epoch_loss[0]:.6f} "
        f"final_loss={history.epoch_loss[-1]:.6f} final_active_fraction={history.active_fraction[-1]:.4f} "
        f"model_bytes={size}"
    )
    return 0


@router.command(
    "train-head",
    help="Train the MLP classifier head on the frozen embedder's embeddings",
    options=[
        opt("--model", required=True, help="model file holding a float or quantized embedder"),
        opt("--data", required=True, help="training dataset directory"),
        opt("--out", required=True, help="model file to write (embedder + head)"),
        opt("--lr", type=float, default=0.001),
        *HEAD_OPTIONS,
    ],
)
def train_head(cfg: CliConfig) -> int:
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    dataset = get_dataset(cfg["data"], extractor)
    head = training_service.train_classifier_head(extractor, dataset, cfg.head_config(dataset.num_classes))
    report = evaluation_service.evaluate(extractor, head, dataset)
    size = model_io_service.save_model(cfg["out"], ModelBundle(extractor=extractor, head=head, index=bundle.index))
    print(f"classes={dataset.num_classes} train_accuracy={report.accuracy:.4f} model_bytes={size}")
    return 0
