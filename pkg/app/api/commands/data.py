from app.api.dependencies import CliConfig
from app.api.routing import CommandRouter, opt
from app.core.config import settings
from app.services.dataset_service import dataset_service

router = CommandRouter()


@router.command(
    "synth",
    help="Generate a synthetic sinusoidal-texture dataset as a directory of PPM files",
    options=[
        opt("--classes", type=int, default=5),
        opt("--per-class", type=int, default=40),
        opt("--size", type=int, default=settings.DEFAULT_IMAGE_SIZE),
        opt("--noise", type=float, default=0.1, help="Gaussian pixel noise σ"),
        opt("--out", required=True, help="output directory"),
    ],
)
def synth(cfg: CliConfig) -> int:
    """
    Generate a synthetic dataset

    **Layout:** `<out>/class_XX/NNNN.ppm`, one directory per class
    """
    dataset = dataset_service.generate_synthetic(cfg.synthetic_spec())
    dataset_service.write_dataset_dir(dataset, cfg["out"])
    print(f"classes={dataset.num_classes} images={len(dataset)} out={cfg['out']}")
    return 0
