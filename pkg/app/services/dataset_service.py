from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple, Union
import colorsys
import logging

import numpy as np
import png

from app.core.config import settings
from app.core.exceptions import DatasetError, DatasetIOError, ImageFormatError
from app.core.tensor import Tensor
from app.models.dataset import Dataset, LabeledImage
from app.schemas.dataset import SyntheticSpec

logger = logging.getLogger(__name__)

PPM_MAGIC = b"P6"
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
WHITESPACE = b" \t\n\r\v\f"

# synthetic textures: low-contrast gratings in pale tints
GRATING_CONTRAST = 0.1
HUE_STEP = 0.1
TINT_SATURATION = 0.35


def supported_formats() -> List[str]:
    return ["ppm (P6)", "png"] if settings.ENABLE_PNG else ["ppm (P6)"]


class DatasetService:
    """Image decoding, directory-per-class datasets and the synthetic texture generator"""

    # ========================================================================
    # CODECS
    # ========================================================================

    @staticmethod
    def _ppm_header(data: bytes) -> Tuple[List[bytes], int]:
        """Four header tokens (magic, width, height, maxval) and the raster offset"""
        tokens: List[bytes] = []
        pos = 0
        n = len(data)
        while len(tokens) < 4:
            while pos < n and data[pos] in WHITESPACE:
                pos += 1
            if pos < n and data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
                continue
            if pos >= n:
                raise ImageFormatError("PPM header is truncated", supported_formats())
            start = pos
            while pos < n and data[pos] not in WHITESPACE and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
            if len(tokens) == 1 and tokens[0] != PPM_MAGIC:
                raise ImageFormatError(f"bad PPM magic {tokens[0][:8]!r}", supported_formats())

        # exactly one whitespace byte separates maxval from the raster
        if pos >= n or data[pos] not in WHITESPACE:
            raise ImageFormatError("PPM header is not terminated by whitespace", supported_formats())
        return tokens, pos + 1

    @staticmethod
    def decode_ppm(data: bytes) -> Tensor:
        """Binary P6 with maxval 255 → 3×H×W float32 in [0, 1]"""
        tokens, offset = DatasetService._ppm_header(data)
        _, width_tok, height_tok, maxval_tok = tokens
        for tok in (width_tok, height_tok, maxval_tok):
            if not tok.isdigit():
                raise ImageFormatError(f"PPM header field {tok[:16]!r} is not a number")
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
        if width < 1 or height < 1:
            raise ImageFormatError(f"PPM dimensions {width}x{height} must be positive")
        if maxval != 255:
            raise ImageFormatError(f"PPM maxval {maxval} not supported (only 255)")

        expected = width * height * 3
        raster = data[offset:offset + expected]
        if len(raster) < expected:
            raise ImageFormatError(f"PPM payload truncated: {len(raster)} of {expected} bytes")
        pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
        return Tensor(pixels.transpose(2, 0, 1).astype(np.float32) / 255.0)

    @staticmethod
    def encode_ppm(pixels: Union[Tensor, np.ndarray]) -> bytes:
        arr = pixels.data if isinstance(pixels, Tensor) else np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ImageFormatError(f"PPM encoding needs 3×H×W pixels, got {arr.shape}")
        _, height, width = arr.shape
        raster = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        header = b"P6\n%d %d\n255\n" % (width, height)
        return header + raster.transpose(1, 2, 0).tobytes()

    @staticmethod
    def decode_png(data: bytes) -> Tensor:
        if not settings.ENABLE_PNG:
            raise ImageFormatError("PNG support is disabled (set TRIPLETLEAF_ENABLE_PNG=true)", supported_formats())
        try:
            width, height, rows, _ = png.Reader(bytes=data).asRGB8()
            pixels = np.vstack([np.asarray(row, dtype=np.uint8) for row in rows])
        except png.Error as e:
            raise ImageFormatError(f"invalid PNG: {e}", supported_formats())
        pixels = pixels.reshape(height, width, 3)
        return Tensor(pixels.transpose(2, 0, 1).astype(np.float32) / 255.0)

    @staticmethod
    def decode_image(data: bytes) -> Tensor:
        if data.startswith(PPM_MAGIC):
            return DatasetService.decode_ppm(data)
        if data.startswith(PNG_MAGIC):
            return DatasetService.decode_png(data)
        raise ImageFormatError("unrecognised image format", supported_formats())

    @staticmethod
    def resize_bilinear(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
        """C×H×W → C×height×width with half-pixel centres and edge clamping"""
        c, h, w = pixels.shape
        if (h, w) == (height, width):
            return pixels.astype(np.float32, copy=False)

        def axis(n_in: int, n_out: int):
            src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
            lo = np.floor(src).astype(np.int64)
            hi = np.minimum(lo + 1, n_in - 1)
            return lo, hi, src - lo

        y0, y1, fy = axis(h, height)
        x0, x1, fx = axis(w, width)
        src = pixels.astype(np.float64)
        top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
        bottom = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
        out = top * (1 - fy)[:, None] + bottom * fy[:, None]
        return out.astype(np.float32)

    # ========================================================================
    # DIRECTORY DATASETS
    # ========================================================================

    @staticmethod
    def load_image(path: Path, size: int) -> np.ndarray:
        try:
            data = path.read_bytes()
        except OSError as e:
            raise DatasetIOError(str(path), e.strerror or str(e))
        try:
            pixels = DatasetService.decode_image(data).data
        except ImageFormatError as e:
            raise ImageFormatError(f"{path}: {e.detail}")
        return DatasetService.resize_bilinear(pixels, size, size)

    @staticmethod
    def load_dataset_dir(path: Union[str, Path], size: Optional[int] = None) -> Dataset:
        """
        `<root>/<class_name>/<image files>`; class ids follow sorted directory
        names, images sorted file names. Decoding fans out over a thread pool.
        """
        root = Path(path)
        size = size or settings.DEFAULT_IMAGE_SIZE
        if not root.is_dir():
            raise DatasetIOError(str(root), "not a directory")

        class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
        if not class_dirs:
            raise DatasetError(f"no class directories under {root}")

        files: List[Tuple[Path, int]] = []
        for label, class_dir in enumerate(class_dirs):
            members = sorted(p for p in class_dir.iterdir() if p.is_file() and not p.name.startswith("."))
            if not members:
                raise DatasetError(f"class directory {class_dir} holds no images")
            files.extend((p, label) for p in members)

        with ThreadPoolExecutor(max_workers=settings.EMBED_WORKERS) as pool:
            decoded = list(pool.map(lambda item: DatasetService.load_image(item[0], size), files))

        images = [
            LabeledImage(pixels=pixels, label=label, source=str(p))
            for (p, label), pixels in zip(files, decoded)
        ]
        dataset = Dataset(images=images, class_names=[d.name for d in class_dirs])
        logger.info(
            "Dataset loaded",
            extra={"root": str(root), "classes": dataset.num_classes, "images": len(dataset), "size": size}
        )
        return dataset

    @staticmethod
    def write_dataset_dir(dataset: Dataset, root: Union[str, Path]) -> Path:
        root = Path(root)
        counters = [0] * dataset.num_classes
        try:
            for name in dataset.class_names:
                (root / name).mkdir(parents=True, exist_ok=True)
            for img in dataset.images:
                i = counters[img.label]
                counters[img.label] += 1
                target = root / dataset.class_names[img.label] / f"{i:04d}.ppm"
                target.write_bytes(DatasetService.encode_ppm(img.pixels))
        except OSError as e:
            raise DatasetIOError(str(root), e.strerror or str(e))
        logger.info("Dataset written", extra={"root": str(root), "images": len(dataset)})
        return root

    # ========================================================================
    # SYNTHETIC TEXTURES
    # ========================================================================

    @staticmethod
    def generate_synthetic(spec: SyntheticSpec) -> Dataset:
        """
        Class c is a vertical sinusoidal grating with 1+c cycles per image
        and contrast GRATING_CONTRAST, tinted by the pale hue HUE_STEP·c, plus
        Gaussian pixel noise σ.

        A class looks the same whatever spec.classes is, and noise is drawn
        class by class, so the first classes of a larger set reproduce a
        smaller set with the same seed.
        """
        rng = np.random.default_rng(spec.seed)
        n = spec.size
        xx = np.broadcast_to(np.arange(n, dtype=np.float64)[None, :], (n, n))
        names = [f"class_{c:02d}" for c in range(spec.classes)]
        images: List[LabeledImage] = []
        for c in range(spec.classes):
            rgb = np.array(colorsys.hsv_to_rgb((HUE_STEP * c) % 1.0, TINT_SATURATION, 0.9), dtype=np.float64)
            pattern = 0.5 + GRATING_CONTRAST * np.sin(2 * np.pi * (1 + c) * xx / n)
            base = rgb[:, None, None] * pattern[None, :, :]
            for i in range(spec.per_class):
                noisy = base + rng.normal(0.0, spec.noise, size=base.shape) if spec.noise > 0 else base
                images.append(LabeledImage(
                    pixels=np.clip(noisy, 0.0, 1.0).astype(np.float32),
                    label=c,
                    source=f"synthetic:{names[c]}/{i}",
                ))
        return Dataset(images=images, class_names=names)


dataset_service = DatasetService()
