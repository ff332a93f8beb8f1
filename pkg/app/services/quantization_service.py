"""
Post-training int8 quantization.

Weights use symmetric per-tensor params (zero_point 0). Activations use
affine params, fixed from calibration ranges (static) or taken from each
batch's own min/max (dynamic). Conv and dense layers run on integer codes;
relu, pooling and normalization run on the dequantized float values.
"""

from typing import Callable, List, Optional, Sequence, Union
import logging
import os
import time

import numpy as np

from app.core.exceptions import ConfigError, ContractError, DimensionError
from app.core.monitoring import metrics_tracker
from app.core.ops import im2col, l2_normalize, maxpool2_forward, relu_forward
from app.core.tensor import Tensor
from app.models.embedder import EmbedderNet
from app.models.enums import QuantMode, QuantScheme
from app.models.quantized import INT8_MAX, INT8_MIN, CalibrationRanges, QuantizedNet, QuantParams
from app.schemas.reports import BenchmarkReport
from app.services.embedder_service import embedder_service

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-12
THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class QuantizationService:

    # ========================================================================
    # PARAMETERS AND CODES
    # ========================================================================

    @staticmethod
    def compute_qparams(lo: float, hi: float, scheme: QuantScheme) -> QuantParams:
        if lo > hi:
            raise ContractError(f"range min {lo} exceeds max {hi}")
        if scheme is QuantScheme.SYMMETRIC:
            scale = max(abs(lo), abs(hi)) / INT8_MAX
            return QuantParams(scale=max(scale, SCALE_FLOOR), zero_point=0, scheme=scheme)

        scale = max((hi - lo) / 255.0, SCALE_FLOOR)
        zp = int(round_half_away(np.float64(INT8_MIN - lo / scale)))
        zp = min(max(zp, INT8_MIN), INT8_MAX)
        return QuantParams(scale=scale, zero_point=zp, scheme=scheme)

    @staticmethod
    def quantize_tensor(x: Union[Tensor, np.ndarray], qp: QuantParams) -> np.ndarray:
        values = x.data if isinstance(x, Tensor) else x
        q = round_half_away(np.asarray(values, dtype=np.float64) / qp.scale) + qp.zero_point
        return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)

    @staticmethod
    def dequantize_tensor(q: np.ndarray, qp: QuantParams, dtype=np.float32) -> Tensor:
        x = qp.scale * (np.asarray(q, dtype=np.float64) - qp.zero_point)
        return Tensor(x, dtype=dtype)

    # ========================================================================
    # CALIBRATION AND CONVERSION
    # ========================================================================

    @staticmethod
    def calibrate_static(net: EmbedderNet, images: np.ndarray, batch: int = 64) -> CalibrationRanges:
        """
        One forward-only pass over the calibration set, keeping min/max at
        the input of every weight layer.
        """
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or len(images) == 0:
            raise ContractError("calibration set is empty")

        lows: Optional[np.ndarray] = None
        highs: Optional[np.ndarray] = None
        for start in range(0, len(images), batch):
            _, sites = embedder_service.forward_with_activations(net, Tensor(images[start:start + batch]))
            lo = np.array([float(s.data.min()) for s in sites])
            hi = np.array([float(s.data.max()) for s in sites])
            lows = lo if lows is None else np.minimum(lows, lo)
            highs = hi if highs is None else np.maximum(highs, hi)

        names = ["input"] + [f"block{i + 1}" for i in range(len(net.blocks))]
        ranges = [(min(float(l), 0.0), max(float(h), 0.0)) for l, h in zip(lows, highs)]
        logger.info("Calibration finished", extra={"images": len(images), "sites": len(names)})
        return CalibrationRanges(sites=names, ranges=ranges)

    @staticmethod
    def quantize_net(
        net: EmbedderNet,
        mode: QuantMode,
        ranges: Optional[CalibrationRanges] = None,
    ) -> QuantizedNet:
        weights: List[np.ndarray] = []
        weight_qparams: List[QuantParams] = []
        for w in net.weight_tensors():
            qp = QuantizationService.compute_qparams(float(w.data.min()), float(w.data.max()), QuantScheme.SYMMETRIC)
            weights.append(QuantizationService.quantize_tensor(w, qp))
            weight_qparams.append(qp)

        act_qparams = None
        if mode is QuantMode.STATIC:
            if ranges is None:
                raise ConfigError("static quantization needs calibration ranges", field="calib")
            if len(ranges.ranges) != len(weights):
                raise ConfigError(
                    f"{len(ranges.ranges)} calibration ranges for {len(weights)} layers", field="calib"
                )
            act_qparams = [
                QuantizationService.compute_qparams(lo, hi, QuantScheme.AFFINE) for lo, hi in ranges.ranges
            ]

        qnet = QuantizedNet(
            config=net.config,
            weights=weights,
            weight_qparams=weight_qparams,
            biases=[b.data.astype(np.float32, copy=True) for b in net.bias_tensors()],
            mode=mode,
            act_qparams=act_qparams,
            ranges=ranges if mode is QuantMode.STATIC else None,
        )
        logger.info("Network quantized", extra={"mode": mode.value, "layers": qnet.num_layers})
        return qnet

    # ========================================================================
    # INTEGER INFERENCE
    # ========================================================================

    @staticmethod
    def _activation_qparams(qnet: QuantizedNet, layer: int, x: np.ndarray) -> QuantParams:
        if qnet.mode is QuantMode.STATIC:
            return qnet.act_qparams[layer]
        return QuantizationService.compute_qparams(
            min(float(x.min()), 0.0), max(float(x.max()), 0.0), QuantScheme.AFFINE
        )

    @staticmethod
    def _centered_codes(qnet: QuantizedNet, layer: int, x: np.ndarray):
        aqp = QuantizationService._activation_qparams(qnet, layer, x)
        codes = QuantizationService.quantize_tensor(x, aqp).astype(np.float64) - aqp.zero_point
        return codes, aqp

    @staticmethod
    def _int_conv(qnet: QuantizedNet, layer: int, x: np.ndarray) -> np.ndarray:
        codes, aqp = QuantizationService._centered_codes(qnet, layer, x)
        qw = qnet.weights[layer]
        bsz, c, h, w = codes.shape
        f = qw.shape[0]
        # padding in the real domain is the zero point, i.e. centered code 0
        cols = im2col(np.pad(codes, ((0, 0), (0, 0), (1, 1), (1, 1))), h, w)
        # integer-valued operands: float64 sums stay exact well below 2**53
        acc = np.matmul(qw.reshape(f, c * 9).astype(np.float64), cols).astype(np.int32)
        scale = aqp.scale * qnet.weight_qparams[layer].scale
        out = acc.astype(np.float64) * scale + qnet.biases[layer][None, :, None]
        return out.reshape(bsz, f, h, w)

    @staticmethod
    def _int_dense(qnet: QuantizedNet, layer: int, x: np.ndarray) -> np.ndarray:
        codes, aqp = QuantizationService._centered_codes(qnet, layer, x)
        acc = (codes @ qnet.weights[layer].astype(np.float64)).astype(np.int32)
        scale = aqp.scale * qnet.weight_qparams[layer].scale
        return acc.astype(np.float64) * scale + qnet.biases[layer]

    @staticmethod
    def quantized_embed(qnet: QuantizedNet, images: Union[Tensor, np.ndarray]) -> Tensor:
        x = images.data if isinstance(images, Tensor) else np.asarray(images)
        expected = qnet.config.input_shape
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise DimensionError("quantized_embed", x.shape, (0,) + expected,
                                 reason="image dims do not match embedder config")

        x = x.astype(np.float64)
        n_conv = qnet.num_layers - 1
        for layer in range(n_conv):
            x = QuantizationService._int_conv(qnet, layer, x)
            x = maxpool2_forward(relu_forward(Tensor(x, dtype=np.float32))).data
        flat = x.reshape(x.shape[0], -1)
        out = Tensor(QuantizationService._int_dense(qnet, n_conv, flat), dtype=np.float32)
        if qnet.config.normalize:
            out = l2_normalize(out)
        return out

    # ========================================================================
    # BENCHMARK
    # ========================================================================

    @staticmethod
    def benchmark_inference(
        net: EmbedderNet,
        qnet: QuantizedNet,
        images: np.ndarray,
        repeats: int = 3,
        timer: Callable[[], float] = time.perf_counter,
    ) -> BenchmarkReport:
        """
        Time consecutive batch-of-1 inference over `images`, float then
        quantized, `repeats` times; totals are the medians across repeats.
        """
        if repeats < 1:
            raise ContractError("benchmark needs at least one repeat")
        images = np.asarray(images, dtype=np.float32)
        if len(images) == 0:
            raise ContractError("benchmark needs at least one image")

        def run(embed_one) -> List[float]:
            timings = []
            for _ in range(repeats):
                started = timer()
                for i in range(len(images)):
                    embed_one(images[i:i + 1])
                timings.append(timer() - started)
            return timings

        float_timings = run(lambda img: embedder_service.embed_batch(net, Tensor(img)))
        quant_timings = run(lambda img: QuantizationService.quantized_embed(qnet, img))
        metrics_tracker.track_inference("float", float(np.median(float_timings)))
        metrics_tracker.track_inference("quantized", float(np.median(quant_timings)))

        pinned = {var: os.environ.get(var) for var in THREAD_ENV_VARS}
        single = all(v == "1" for v in pinned.values())
        report = BenchmarkReport(
            float_total_s=float(np.median(float_timings)),
            quant_total_s=float(np.median(quant_timings)),
            repeats=repeats,
            images=len(images),
            float_timings=float_timings,
            quant_timings=quant_timings,
            single_threaded=single,
            threads_note=" ".join(f"{k}={v}" for k, v in pinned.items()),
        )
        logger.info(
            "Benchmark finished",
            extra={"float_total_s": report.float_total_s, "quant_total_s": report.quant_total_s,
                   "ratio": report.ratio, "single_threaded": single}
        )
        return report


quantization_service = QuantizationService()
