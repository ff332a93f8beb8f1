"""
Desk-scale experiments for tripletleaf
Trains on synthetic data over several seeds and prints one table row per seed

Defaults: 5 trained classes plus 2 held out for few-shot enrollment, 40 images
per class at 32x32, 50 epochs with the default embedder widths.

Usage:
    python scripts/desk_experiments.py
    python scripts/desk_experiments.py --seeds 3 --epochs 20 --mining batch_all
"""

import sys
import os

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.core.config import settings
from app.core.monitoring import setup_logging
from app.models.enums import MiningMode, QuantMode
from app.schemas.dataset import SyntheticSpec
from app.schemas.embedder import EmbedderConfig
from app.schemas.training import TrainConfig, TripletConfig
from app.services.classifier_service import classifier_service
from app.services.dataset_service import dataset_service
from app.services.embedder_service import embedder_service
from app.services.evaluation_service import evaluation_service
from app.services.inference_service import inference_service
from app.services.quantization_service import quantization_service
from app.services.training_service import training_service


COLUMNS = [
    "seed", "mining", "loss_first", "loss_last", "sep_before", "sep_after",
    "knn_acc", "static_agree", "dyn_agree", "fewshot",
]


def knn_agreement(net, qnet, train_set, test_set) -> float:
    float_index = classifier_service.build_index(
        inference_service.embed_images(net, train_set.pixels), train_set.labels, train_set.class_names)
    quant_index = classifier_service.build_index(
        inference_service.embed_images(qnet, train_set.pixels), train_set.labels, train_set.class_names)
    float_pred = classifier_service.knn_predict(float_index, inference_service.embed_images(net, test_set.pixels))
    quant_pred = classifier_service.knn_predict(quant_index, inference_service.embed_images(qnet, test_set.pixels))
    return float(np.mean(np.asarray(float_pred.class_ids) == np.asarray(quant_pred.class_ids)))


def run_seed(seed: int, classes: int, per_class: int, size: int, epochs: int, mining: MiningMode) -> dict:
    dataset = dataset_service.generate_synthetic(
        SyntheticSpec(classes=classes, per_class=per_class, size=size, noise=0.1, seed=seed)
    )
    # the last two classes never reach training; they are enrolled few-shot afterwards
    base = dataset.select_classes(dataset.class_names[:-2])
    novel = dataset.select_classes(dataset.class_names[-2:])

    embed_cfg = EmbedderConfig(input_h=size, input_w=size, init_seed=seed)
    train_cfg = TrainConfig(epochs=epochs, seed=seed, triplet=TripletConfig(mining=mining)).fitted_to(base.num_classes)
    train_set, test_set = training_service.split_stratified(base, 0.8, seed)

    untrained = embedder_service.build_embedder(embed_cfg)
    net, history = training_service.train_embedder(train_set, embed_cfg, train_cfg)

    index = classifier_service.build_index(
        inference_service.embed_images(net, train_set.pixels), train_set.labels, train_set.class_names)
    report = evaluation_service.evaluate(net, index, test_set)

    ranges = quantization_service.calibrate_static(net, train_set.pixels)
    static = quantization_service.quantize_net(net, QuantMode.STATIC, ranges)
    dynamic = quantization_service.quantize_net(net, QuantMode.DYNAMIC)

    fewshot = evaluation_service.fewshot_enroll_eval(net, novel, shots=2, base=train_set)

    return {
        "seed": seed,
        "mining": mining.value,
        "loss_first": history.epoch_loss[0],
        "loss_last": history.epoch_loss[-1],
        "sep_before": evaluation_service.separation_ratio(
            inference_service.embed_images(untrained, base.pixels), base.labels
        ),
        "sep_after": evaluation_service.separation_ratio(
            inference_service.embed_images(net, base.pixels), base.labels
        ),
        "knn_acc": report.accuracy,
        "static_agree": knn_agreement(net, static, train_set, test_set),
        "dyn_agree": knn_agreement(net, dynamic, train_set, test_set),
        "fewshot": fewshot.accuracy,
    }


def print_table(rows: list) -> None:
    print("  ".join(f"{c:>12}" for c in COLUMNS))
    for row in rows:
        cells = [f"{row[c]:>12.4f}" if isinstance(row[c], float) else f"{row[c]:>12}" for c in COLUMNS]
        print("  ".join(cells))
    numeric = [c for c in COLUMNS if isinstance(rows[0][c], float)]
    means = {c: float(np.mean([r[c] for r in rows])) for c in numeric}
    print("  ".join(f"{'mean':>12}" if c == "seed" else f"{means[c]:>12.4f}" if c in means else f"{'':>12}"
                    for c in COLUMNS))


def main(seeds: int, classes: int, per_class: int, size: int, epochs: int, mining: MiningMode) -> None:
    setup_logging(level="WARNING", json_format=settings.LOG_JSON)
    print(f"tripletleaf desk experiments: {seeds} seeds, {classes} classes x {per_class} images at {size}px")
    rows = [run_seed(seed, classes, per_class, size, epochs, mining) for seed in range(seeds)]
    print_table(rows)


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Run multi-seed desk experiments on synthetic data")
    parser.add_argument("--seeds", type=int, default=5, help="Number of seeds to run")
    parser.add_argument("--classes", type=int, default=7, help="Synthetic classes (last two held out for few-shot)")
    parser.add_argument("--per-class", type=int, default=40, help="Images per class")
    parser.add_argument("--size", type=int, default=32, help="Image side length")
    parser.add_argument("--epochs", type=int, default=50, help="Embedder training epochs")
    parser.add_argument("--mining", choices=[m.value for m in MiningMode], default=MiningMode.BATCH_HARD.value)

    args = parser.parse_args()

    main(
        seeds=args.seeds,
        classes=args.classes,
        per_class=args.per_class,
        size=args.size,
        epochs=args.epochs,
        mining=MiningMode(args.mining),
    )
