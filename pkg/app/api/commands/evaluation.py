from pathlib import Path

from app.api.dependencies import (
    CLASSIFIER_OPTIONS,
    EMBEDDER_OPTIONS,
    HEAD_OPTIONS,
    TRAINING_OPTIONS,
    CliConfig,
    get_bundle,
    get_dataset,
    get_extractor,
    resolve_classifier,
)
from app.api.routing import CommandRouter, opt
from app.models.enums import ClassifierKind
from app.services.embedder_service import embedder_service
from app.services.evaluation_service import evaluation_service
from app.services.inference_service import inference_service

router = CommandRouter()


@router.command(
    "evaluate",
    help="Accuracy and confusion matrix of a model on a dataset directory",
    options=[
        opt("--model", required=True),
        opt("--data", required=True, help="test split, or the whole corpus"),
        opt("--confusion-csv", default=None, help="write the confusion matrix here"),
        *CLASSIFIER_OPTIONS,
    ],
)
def evaluate(cfg: CliConfig) -> int:
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    classifier = resolve_classifier(cfg, bundle, cfg["model"])
    dataset = get_dataset(cfg["data"], extractor)
    report = evaluation_service.evaluate(extractor, classifier, dataset, k=cfg["k"])
    if cfg["confusion_csv"]:
        evaluation_service.export_csv(report, cfg["confusion_csv"])
    correct = int(report.confusion.trace())
    print(f"accuracy={report.accuracy:.4f} correct={correct} images={report.total}")
    return 0


@router.command(
    "repeated-eval",
    help="Train and evaluate on fresh stratified splits, once per run",
    options=[
        opt("--data", required=True),
        opt("--runs", type=int, default=16),
        opt("--split", type=float, default=0.8, help="train fraction per class"),
        opt("--summary-csv", default=None, help="per-run accuracies plus mean/max rows"),
        opt("--classifier", choices=[c.value for c in ClassifierKind], default=ClassifierKind.KNN.value),
        opt("--k", type=int, default=1),
        *EMBEDDER_OPTIONS,
        *TRAINING_OPTIONS,
        *HEAD_OPTIONS,
    ],
)
def repeated_eval(cfg: CliConfig) -> int:
    embed_cfg = cfg.embedder_config()
    dataset = get_dataset(cfg["data"], size=embed_cfg.input_h)
    summary = evaluation_service.repeated_splits(
        dataset,
        embed_cfg,
        cfg.train_config(dataset.num_classes),
        runs=cfg["runs"],
        ratio=cfg["split"],
        classifier=ClassifierKind(cfg["classifier"]),
        k=cfg["k"],
        head_cfg=cfg.head_config(dataset.num_classes),
    )
    if cfg["summary_csv"]:
        evaluation_service.export_csv(summary, cfg["summary_csv"])
    for run, accuracy in enumerate(summary.accuracies, start=1):
        print(f"run={run} accuracy={accuracy:.4f}")
    print(f"runs={summary.runs} mean={summary.mean:.4f} max={summary.max:.4f}")
    return 0


@router.command(
    "enroll-eval",
    help="Few-shot enrollment of unseen classes into a KNN index, evaluated on held-out images",
    options=[
        opt("--model", required=True),
        opt("--novel", required=True, help="dataset directory of classes unseen in training"),
        opt("--base", default=None, help="optional base-class dataset enrolled alongside"),
        opt("--shots", type=int, default=2),
        opt("--k", type=int, default=1),
        opt("--confusion-csv", default=None),
    ],
)
def enroll_eval(cfg: CliConfig) -> int:
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    novel = get_dataset(cfg["novel"], extractor)
    base = get_dataset(cfg["base"], extractor) if cfg["base"] else None
    report = evaluation_service.fewshot_enroll_eval(extractor, novel, shots=cfg["shots"], base=base, k=cfg["k"])
    if cfg["confusion_csv"]:
        evaluation_service.export_csv(report, cfg["confusion_csv"])
    print(f"accuracy={report.accuracy:.4f} correct={int(report.confusion.trace())} images={report.total}")
    return 0


@router.command(
    "project",
    help="2-D PCA projection of embeddings, exported as CSV",
    options=[
        opt("--model", required=True),
        opt("--data", required=True),
        opt("--out", required=True, help="projection CSV (x, y, label)"),
        opt("--compare-init", action="store_true",
            help="also project with the untrained net and report both separation ratios"),
    ],
)
def project(cfg: CliConfig) -> int:
    """
    Project embeddings to 2-D

    **Compare-init:** the untrained net is rebuilt from the stored config's
    init seed and written next to `--out` as `<stem>.init.csv`
    """
    bundle = get_bundle(cfg["model"])
    extractor = get_extractor(bundle, cfg["model"])
    dataset = get_dataset(cfg["data"], extractor)
    names = [dataset.class_names[label] for label in dataset.labels]

    embeddings = inference_service.embed_images(extractor, dataset.pixels)
    projection = evaluation_service.pca_project(embeddings, names)
    evaluation_service.export_csv(projection, cfg["out"])
    trained = evaluation_service.separation_ratio(embeddings, dataset.labels)
    variance = ",".join(f"{v:.4f}" for v in projection.explained_variance)
    line = f"explained_variance={variance} separation={trained:.4f}"

    if cfg["compare_init"]:
        init_net = embedder_service.build_embedder(extractor.config)
        init_embeddings = inference_service.embed_images(init_net, dataset.pixels)
        out = Path(cfg["out"])
        evaluation_service.export_csv(
            evaluation_service.pca_project(init_embeddings, names), out.with_name(f"{out.stem}.init.csv")
        )
        initial = evaluation_service.separation_ratio(init_embeddings, dataset.labels)
        line += f" init_separation={initial:.4f} gain={trained / initial:.4f}"
    print(line)
    return 0
