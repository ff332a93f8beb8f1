import numpy as np

from app.api.dependencies import CliConfig, get_bundle, get_dataset, get_extractor
from app.api.routing import CommandRouter, opt
from app.core.exceptions import ConfigError
from app.models.bundle import ModelBundle
from app.models.embedder import EmbedderNet
from app.models.enums import QuantMode
from app.models.quantized import QuantizedNet
from app.services.model_io_service import model_io_service
from app.services.quantization_service import quantization_service

router = CommandRouter()


@router.command(
    "quantize",
    help="Post-training int8 quantization of a float embedder",
    options=[
        opt("--model", required=True, help="float model file"),
        opt("--mode", choices=[m.value for m in QuantMode], default=QuantMode.STATIC.value),
        opt("--calib", default=None, help="calibration dataset directory (static mode)"),
        opt("--out", required=True),
    ],
)
def quantize(cfg: CliConfig) -> int:
    """
    Quantize an embedder

    **Static:** one forward-only calibration pass over `--calib` fixes the
    activation ranges. **Dynamic:** activation params are taken per batch.
    Head and index chunks of the input file are carried over unchanged.
    """
    bundle = get_bundle(cfg["model"])
    net = get_extractor(bundle, cfg["model"])
    if not isinstance(net, EmbedderNet):
        raise ConfigError(f"{cfg['model']} is already quantized", field="model")

    mode = cfg.quant_mode()
    ranges = None
    if mode is QuantMode.STATIC:
        if not cfg["calib"]:
            raise ConfigError("static quantization needs --calib", field="calib")
        calib = get_dataset(cfg["calib"], net)
        ranges = quantization_service.calibrate_static(net, calib.pixels)

    qnet = quantization_service.quantize_net(net, mode, ranges)
    written = model_io_service.save_model(cfg["out"], ModelBundle(extractor=qnet, head=bundle.head, index=bundle.index))
    # size ratio compares the extractors alone
    float_bytes = len(model_io_service.serialize(net))
    quant_bytes = len(model_io_service.serialize(qnet))
    print(
        f"mode={mode.value} float_bytes={float_bytes} quant_bytes={quant_bytes} "
        f"ratio={quant_bytes / float_bytes:.4f} model_bytes={written}"
    )
    return 0


@router.command(
    "benchmark",
    help="Consecutive single-image inference timing, float versus quantized",
    options=[
        opt("--model", required=True, help="float model file"),
        opt("--qmodel", required=True, help="quantized model file"),
        opt("--data", required=True, help="images to run (cycled up to --images)"),
        opt("--images", type=int, default=100),
        opt("--repeats", type=int, default=3),
    ],
)
def benchmark(cfg: CliConfig) -> int:
    net = get_extractor(get_bundle(cfg["model"]), cfg["model"])
    qnet = get_extractor(get_bundle(cfg["qmodel"]), cfg["qmodel"])
    if not isinstance(net, EmbedderNet) or not isinstance(qnet, QuantizedNet):
        raise ConfigError("--model must be a float embedder and --qmodel a quantized one")
    if net.config != qnet.config:
        raise ConfigError("float and quantized models have different embedder configs")

    pixels = get_dataset(cfg["data"], net).pixels
    if cfg["images"] < 1:
        raise ConfigError("--images must be >= 1", field="images")
    images = pixels[np.arange(cfg["images"]) % len(pixels)]
    report = quantization_service.benchmark_inference(net, qnet, images, repeats=cfg["repeats"])
    print(report.format_line())
    return 0
