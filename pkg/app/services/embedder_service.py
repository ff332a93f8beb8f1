from typing import List, Optional, Tuple
import logging

import numpy as np

from app.core.exceptions import DimensionError
from app.core.ops import conv2d_forward, dense_forward, l2_normalize, maxpool2_forward, relu_forward, reshape
from app.core.tensor import GradTape, Tensor
from app.models.embedder import ConvBlock, EmbedderNet
from app.schemas.embedder import EmbedderConfig

logger = logging.getLogger(__name__)


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class EmbedderService:
    """Builds and runs the convolutional embedder"""

    @staticmethod
    def build_embedder(config: EmbedderConfig) -> EmbedderNet:
        """Deterministic He-uniform init from config.init_seed; biases zero"""
        rng = np.random.default_rng(config.init_seed)
        blocks: List[ConvBlock] = []
        in_c = config.input_c
        for i, out_c in enumerate(config.conv_channels):
            kernel = he_uniform(rng, (out_c, in_c, 3, 3), fan_in=in_c * 9)
            blocks.append(ConvBlock(
                kernel=Tensor.parameter(kernel, name=f"conv{i + 1}.kernel"),
                bias=Tensor.parameter(np.zeros(out_c, dtype=np.float32), name=f"conv{i + 1}.bias"),
            ))
            in_c = out_c

        flat = config.flat_dim
        if flat != in_c * config.feature_h * config.feature_w:
            raise DimensionError("build_embedder", (flat,), (in_c, config.feature_h, config.feature_w))
        dense_w = he_uniform(rng, (flat, config.embedding_dim), fan_in=flat)
        net = EmbedderNet(
            config=config,
            blocks=blocks,
            dense_w=Tensor.parameter(dense_w, name="dense.weight"),
            dense_b=Tensor.parameter(np.zeros(config.embedding_dim, dtype=np.float32), name="dense.bias"),
        )
        logger.info(
            "Embedder built",
            extra={"parameters": net.num_parameters(), "flat_dim": flat, "embedding_dim": config.embedding_dim}
        )
        return net

    @staticmethod
    def check_images(config: EmbedderConfig, images: Tensor) -> None:
        expected = config.input_shape
        if images.ndim != 4 or images.shape[1:] != expected:
            raise DimensionError("embed_batch", images.shape, (0,) + expected,
                                 reason="image dims do not match embedder config")

    @staticmethod
    def forward_with_activations(
        net: EmbedderNet,
        images: Tensor,
        tape: Optional[GradTape] = None,
    ) -> Tuple[Tensor, List[Tensor]]:
        """
        Embed a batch and also return the input of every layer.

        The returned list holds the image batch followed by each conv block's
        pooled output, i.e. one tensor per weight layer.
        """
        EmbedderService.check_images(net.config, images)
        sites: List[Tensor] = [images]
        x = images
        for block in net.blocks:
            x = conv2d_forward(x, block.kernel, block.bias, tape=tape)
            x = relu_forward(x, tape=tape)
            x = maxpool2_forward(x, tape=tape)
            sites.append(x)
        x = reshape(x, (x.shape[0], -1), tape=tape)
        out = dense_forward(x, net.dense_w, net.dense_b, tape=tape)
        if net.config.normalize:
            out = l2_normalize(out, tape=tape)
        return out, sites

    @staticmethod
    def embed_batch(net: EmbedderNet, images: Tensor, tape: Optional[GradTape] = None) -> Tensor:
        out, _ = EmbedderService.forward_with_activations(net, images, tape=tape)
        return out


embedder_service = EmbedderService()
