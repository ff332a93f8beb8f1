"""
TMLM model files.

Layout (all integers little-endian):

    magic "TMLM" | u32 version | u8 flags (bit0 quantized)
    u32 config length | canonical JSON of the EmbedderConfig (empty without an extractor)
    u32 chunk count | per chunk: u8 type, u64 payload length, payload

Tensor payloads are `u32 rank`, `rank × u32 dims`, then the raw values in
the dtype fixed by the chunk type.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import logging
import os
import struct
import tempfile

import numpy as np
import orjson
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import DatasetIOError, ModelFormatError
from app.core.monitoring import metrics_tracker
from app.core.tensor import Tensor
from app.models.bundle import ModelBundle
from app.models.classifier import KnnIndex, MlpHead
from app.models.embedder import ConvBlock, EmbedderNet
from app.models.enums import ChunkType, QuantMode, QuantScheme
from app.models.quantized import CalibrationRanges, QuantizedNet, QuantParams
from app.schemas.embedder import EmbedderConfig

logger = logging.getLogger(__name__)

FLAG_QUANTIZED = 0x01

ModelObject = Union[EmbedderNet, QuantizedNet, MlpHead, KnnIndex, ModelBundle]


# ============================================================================
# PAYLOAD ENCODING
# ============================================================================

def _tensor_bytes(arr: np.ndarray, dtype: str) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
    header = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def _names_bytes(names) -> bytes:
    out = [struct.pack("<I", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


class _Reader:
    """Bounds-checked cursor; any overrun is a truncation error"""

    def __init__(self, data: bytes, what: str = "file"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ModelFormatError(f"truncated {self.what}: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self, dtype: str) -> np.ndarray:
        (rank,) = self.unpack("<I")
        if rank > 8:
            raise ModelFormatError(f"tensor rank {rank} in {self.what} is implausible")
        dims = self.unpack(f"<{rank}I") if rank else ()
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = self.take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(dims).astype(np.dtype(dtype), copy=True)

    def names(self) -> List[str]:
        (count,) = self.unpack("<I")
        out = []
        for _ in range(count):
            (length,) = self.unpack("<I")
            try:
                out.append(self.take(length).decode("utf-8"))
            except UnicodeDecodeError:
                raise ModelFormatError(f"class name in {self.what} is not UTF-8")
        return out

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ModelFormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def _qparams_bytes(params: List[QuantParams]) -> bytes:
    table = np.array([[p.scale, p.zero_point, p.scheme.code] for p in params], dtype=np.float64).reshape(-1, 3)
    return _tensor_bytes(table, "f8")


def _qparams_from(table: np.ndarray) -> List[QuantParams]:
    if table.ndim != 2 or table.shape[1] != 3:
        raise ModelFormatError(f"qparams table has shape {table.shape}, expected n×3")
    try:
        return [
            QuantParams(scale=float(s), zero_point=int(z), scheme=QuantScheme.from_code(int(c)))
            for s, z, c in table
        ]
    except ValueError as e:
        raise ModelFormatError(f"invalid quantization params: {e}")


class ModelIOService:

    # ========================================================================
    # SAVE
    # ========================================================================

    @staticmethod
    def _extractor_chunks(extractor) -> List[Tuple[ChunkType, bytes]]:
        chunks: List[Tuple[ChunkType, bytes]] = []
        if isinstance(extractor, EmbedderNet):
            for p in extractor.parameters():
                chunks.append((ChunkType.WEIGHTS_F32, _tensor_bytes(p.data, "f4")))
            return chunks

        for w, b in zip(extractor.weights, extractor.biases):
            chunks.append((ChunkType.WEIGHTS_I8, _tensor_bytes(w, "i1")))
            chunks.append((ChunkType.WEIGHTS_F32, _tensor_bytes(b, "f4")))
        chunks.append((ChunkType.QPARAMS, _qparams_bytes(extractor.weight_qparams)))
        if extractor.mode is QuantMode.STATIC:
            chunks.append((ChunkType.QPARAMS, _qparams_bytes(extractor.act_qparams)))
            if extractor.ranges is not None:
                chunks.append((ChunkType.ACTIVATION_RANGES, _tensor_bytes(extractor.ranges.as_array(), "f8")))
        return chunks

    @staticmethod
    def serialize(obj: ModelObject) -> bytes:
        bundle = obj if isinstance(obj, ModelBundle) else ModelIOService._as_bundle(obj)
        if not bundle.components():
            raise ModelFormatError("nothing to save: the bundle is empty")

        chunks: List[Tuple[ChunkType, bytes]] = []
        flags = 0
        config_json = b""
        if bundle.extractor is not None:
            config_json = orjson.dumps(bundle.extractor.config.model_dump(), option=orjson.OPT_SORT_KEYS)
            chunks.extend(ModelIOService._extractor_chunks(bundle.extractor))
            if isinstance(bundle.extractor, QuantizedNet):
                flags |= FLAG_QUANTIZED
        if bundle.head is not None:
            h = bundle.head
            payload = _names_bytes(h.class_names) + b"".join(
                _tensor_bytes(p.data, "f4") for p in h.parameters()
            )
            chunks.append((ChunkType.MLP_HEAD, payload))
        if bundle.index is not None:
            idx = bundle.index
            payload = (
                _names_bytes(idx.class_names)
                + _tensor_bytes(idx.embeddings, "f4")
                + _tensor_bytes(idx.labels, "u4")
            )
            chunks.append((ChunkType.KNN_INDEX, payload))

        out = [
            settings.MODEL_MAGIC,
            struct.pack("<I", settings.MODEL_VERSION),
            struct.pack("<B", flags),
            struct.pack("<I", len(config_json)),
            config_json,
            struct.pack("<I", len(chunks)),
        ]
        for kind, payload in chunks:
            out.append(struct.pack("<BQ", int(kind), len(payload)))
            out.append(payload)
        return b"".join(out)

    @staticmethod
    def _as_bundle(obj) -> ModelBundle:
        if isinstance(obj, (EmbedderNet, QuantizedNet)):
            return ModelBundle(extractor=obj)
        if isinstance(obj, MlpHead):
            return ModelBundle(head=obj)
        if isinstance(obj, KnnIndex):
            return ModelBundle(index=obj)
        raise ModelFormatError(f"cannot serialize {type(obj).__name__}")

    @staticmethod
    def _kind(bundle: ModelBundle) -> str:
        parts = bundle.components()
        if len(parts) > 1:
            return "bundle"
        if isinstance(bundle.extractor, QuantizedNet):
            return "quantized"
        if bundle.extractor is not None:
            return "float"
        return "head" if bundle.head is not None else "index"

    @staticmethod
    def save_model(path: Union[str, Path], obj: ModelObject) -> int:
        """Write atomically (temp file + rename); returns the file size in bytes"""
        path = Path(path)
        data = ModelIOService.serialize(obj)
        bundle = obj if isinstance(obj, ModelBundle) else ModelIOService._as_bundle(obj)
        tmp: Optional[str] = None
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError as e:
            if tmp is not None and os.path.exists(tmp):
                os.unlink(tmp)
            raise DatasetIOError(str(path), e.strerror or str(e))

        kind = ModelIOService._kind(bundle)
        metrics_tracker.track_model_file(kind, len(data))
        logger.info("Model saved", extra={"path": str(path), "bytes": len(data), "kind": kind})
        return len(data)

    # ========================================================================
    # LOAD
    # ========================================================================

    @staticmethod
    def _float_net(config: EmbedderConfig, tensors: List[np.ndarray]) -> EmbedderNet:
        shapes = ModelIOService._expected_shapes(config)
        if len(tensors) != len(shapes):
            raise ModelFormatError(f"expected {len(shapes)} float tensors, found {len(tensors)}")
        for t, shape in zip(tensors, shapes):
            if t.shape != shape:
                raise ModelFormatError(f"tensor shape {t.shape} does not match config shape {shape}")
        blocks = [
            ConvBlock(
                kernel=Tensor.parameter(tensors[2 * i], name=f"conv{i + 1}.kernel"),
                bias=Tensor.parameter(tensors[2 * i + 1], name=f"conv{i + 1}.bias"),
            )
            for i in range(len(config.conv_channels))
        ]
        return EmbedderNet(
            config=config,
            blocks=blocks,
            dense_w=Tensor.parameter(tensors[-2], name="dense.weight"),
            dense_b=Tensor.parameter(tensors[-1], name="dense.bias"),
        )

    @staticmethod
    def _expected_shapes(config: EmbedderConfig) -> List[Tuple[int, ...]]:
        shapes: List[Tuple[int, ...]] = []
        in_c = config.input_c
        for out_c in config.conv_channels:
            shapes.extend([(out_c, in_c, 3, 3), (out_c,)])
            in_c = out_c
        shapes.extend([(config.flat_dim, config.embedding_dim), (config.embedding_dim,)])
        return shapes

    @staticmethod
    def _quantized_net(config: EmbedderConfig, chunks: Dict[ChunkType, List[bytes]]) -> QuantizedNet:
        weights = [_Reader(c, "weights-i8 chunk").tensor("i1") for c in chunks.get(ChunkType.WEIGHTS_I8, [])]
        biases = [_Reader(c, "weights-f32 chunk").tensor("f4") for c in chunks.get(ChunkType.WEIGHTS_F32, [])]
        tables = [_Reader(c, "qparams chunk").tensor("f8") for c in chunks.get(ChunkType.QPARAMS, [])]
        if not tables or len(tables) > 2:
            raise ModelFormatError(f"quantized file needs 1 or 2 qparams chunks, found {len(tables)}")

        shapes = ModelIOService._expected_shapes(config)
        if len(weights) != len(shapes) // 2 or len(biases) != len(weights):
            raise ModelFormatError("quantized layer count does not match the embedder config")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != shapes[2 * i] or b.shape != shapes[2 * i + 1]:
                raise ModelFormatError(f"layer {i} shapes {w.shape}/{b.shape} do not match config")

        act_qparams = _qparams_from(tables[1]) if len(tables) == 2 else None
        ranges = None
        if ChunkType.ACTIVATION_RANGES in chunks:
            arr = _Reader(chunks[ChunkType.ACTIVATION_RANGES][0], "activation-ranges chunk").tensor("f8")
            sites = ["input"] + [f"block{i + 1}" for i in range(len(config.conv_channels))]
            if arr.shape != (len(sites), 2):
                raise ModelFormatError(f"activation ranges have shape {arr.shape}")
            ranges = CalibrationRanges(sites=sites, ranges=[(float(lo), float(hi)) for lo, hi in arr])
        try:
            return QuantizedNet(
                config=config,
                weights=weights,
                weight_qparams=_qparams_from(tables[0]),
                biases=biases,
                mode=QuantMode.STATIC if act_qparams is not None else QuantMode.DYNAMIC,
                act_qparams=act_qparams,
                ranges=ranges,
            )
        except ValueError as e:
            raise ModelFormatError(f"inconsistent quantized model: {e}")

    @staticmethod
    def deserialize(data: bytes) -> ModelBundle:
        """Parse and validate everything before building any object"""
        r = _Reader(data)
        magic = r.take(4)
        if magic != settings.MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {settings.MODEL_MAGIC!r}")
        (version,) = r.unpack("<I")
        if version != settings.MODEL_VERSION:
            raise ModelFormatError(f"unsupported format version {version} (this build reads {settings.MODEL_VERSION})")
        (flags,) = r.unpack("<B")
        (config_len,) = r.unpack("<I")
        config_raw = r.take(config_len)
        (n_chunks,) = r.unpack("<I")

        chunks: Dict[ChunkType, List[bytes]] = {}
        for _ in range(n_chunks):
            kind_code, length = r.unpack("<BQ")
            try:
                kind = ChunkType(kind_code)
            except ValueError:
                raise ModelFormatError(f"unknown chunk type {kind_code}")
            chunks.setdefault(kind, []).append(r.take(length))
        r.done()

        config: Optional[EmbedderConfig] = None
        if config_len:
            try:
                config = EmbedderConfig(**orjson.loads(config_raw))
            except (orjson.JSONDecodeError, ValidationError, TypeError) as e:
                raise ModelFormatError(f"invalid embedder config block: {e}")

        bundle = ModelBundle()
        quantized = bool(flags & FLAG_QUANTIZED)
        if config is not None:
            if quantized:
                bundle.extractor = ModelIOService._quantized_net(config, chunks)
            else:
                tensors = [_Reader(c, "weights-f32 chunk").tensor("f4") for c in chunks.get(ChunkType.WEIGHTS_F32, [])]
                bundle.extractor = ModelIOService._float_net(config, tensors)
        elif any(k in chunks for k in (ChunkType.WEIGHTS_F32, ChunkType.WEIGHTS_I8, ChunkType.QPARAMS)):
            raise ModelFormatError("weight chunks present without an embedder config block")

        if ChunkType.MLP_HEAD in chunks:
            hr = _Reader(chunks[ChunkType.MLP_HEAD][0], "mlp-head chunk")
            names = hr.names()
            w1, b1, w2, b2 = (hr.tensor("f4") for _ in range(4))
            hr.done()
            if w1.ndim != 2 or w2.ndim != 2 or b1.shape != (w1.shape[1],) or w2.shape[0] != w1.shape[1] \
                    or b2.shape != (w2.shape[1],) or w2.shape[1] != len(names):
                raise ModelFormatError("mlp-head tensors are inconsistent")
            bundle.head = MlpHead(
                w1=Tensor.parameter(w1, name="head.w1"),
                b1=Tensor.parameter(b1, name="head.b1"),
                w2=Tensor.parameter(w2, name="head.w2"),
                b2=Tensor.parameter(b2, name="head.b2"),
                class_names=names,
            )

        if ChunkType.KNN_INDEX in chunks:
            ir = _Reader(chunks[ChunkType.KNN_INDEX][0], "knn-index chunk")
            names = ir.names()
            embeddings = ir.tensor("f4")
            labels = ir.tensor("u4").astype(np.int64)
            ir.done()
            if embeddings.ndim != 2 or labels.shape != (embeddings.shape[0],):
                raise ModelFormatError("knn-index rows and labels are misaligned")
            if labels.size and labels.max() >= len(names):
                raise ModelFormatError("knn-index label outside the class registry")
            bundle.index = KnnIndex(embeddings=embeddings, labels=labels, class_names=tuple(names))

        if not bundle.components():
            raise ModelFormatError("model file holds no components")
        return bundle

    @staticmethod
    def load_bundle(path: Union[str, Path]) -> ModelBundle:
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise DatasetIOError(str(path), e.strerror or str(e))
        bundle = ModelIOService.deserialize(data)
        logger.info(
            "Model loaded",
            extra={"path": str(path), "bytes": len(data), "kind": ModelIOService._kind(bundle)}
        )
        return bundle

    @staticmethod
    def load_model(path: Union[str, Path]):
        """The stored object itself when the file holds one component, else the bundle"""
        bundle = ModelIOService.load_bundle(path)
        single = bundle.single()
        return single if single is not None else bundle


model_io_service = ModelIOService()
