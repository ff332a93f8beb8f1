import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import DimensionError
from app.core.tensor import Tensor, grad_check_detailed
from app.schemas.embedder import EmbedderConfig
from app.schemas.training import TripletConfig
from app.services.embedder_service import embedder_service
from app.services.inference_service import inference_service
from app.services.triplet_service import triplet_service


def test_build_is_deterministic(tiny_config):
    """Same seed twice → bit-identical parameters"""
    first = embedder_service.build_embedder(tiny_config)
    second = embedder_service.build_embedder(tiny_config)
    for a, b in zip(first.parameters(), second.parameters()):
        assert np.array_equal(a.data, b.data)


def test_other_seed_differs(tiny_config):
    first = embedder_service.build_embedder(tiny_config)
    other = embedder_service.build_embedder(tiny_config.model_copy(update={"init_seed": 4}))
    assert not np.array_equal(first.dense_w.data, other.dense_w.data)


def test_biases_start_at_zero(tiny_config):
    net = embedder_service.build_embedder(tiny_config)
    assert all(not b.data.any() for b in net.bias_tensors())


def test_he_uniform_bound(tiny_config):
    net = embedder_service.build_embedder(tiny_config)
    first = net.blocks[0].kernel.data
    assert np.abs(first).max() <= np.sqrt(6.0 / (3 * 9))


def test_default_config_flat_dim():
    """64×64×3 with two pools and 16 channels feeds 16·16·16 values to the dense layer"""
    config = EmbedderConfig()
    assert config.flat_dim == 4096
    net = embedder_service.build_embedder(config)
    assert net.dense_w.shape == (4096, 64)


def test_indivisible_input_rejected():
    with pytest.raises(ValidationError):
        EmbedderConfig(input_h=30, input_w=32, conv_channels=[4, 8, 8])


def test_embeddings_are_unit_norm(tiny_net, rng):
    out = embedder_service.embed_batch(tiny_net, Tensor(rng.uniform(size=(6, 3, 8, 8))))
    assert out.shape == (6, tiny_net.config.embedding_dim)
    assert np.all(np.abs(np.linalg.norm(out.data, axis=1) - 1) <= 1e-5)


def test_duplicate_images_embed_identically(tiny_net, rng):
    image = rng.uniform(size=(1, 3, 8, 8))
    out = embedder_service.embed_batch(tiny_net, Tensor(np.concatenate([image, image, image])))
    assert np.array_equal(out.data[0], out.data[1])
    assert np.array_equal(out.data[0], out.data[2])


def test_batch_equals_single_images(tiny_net, rng):
    images = rng.uniform(size=(5, 3, 8, 8))
    batched = embedder_service.embed_batch(tiny_net, Tensor(images)).data
    singles = np.concatenate([embedder_service.embed_batch(tiny_net, Tensor(images[i:i + 1])).data for i in range(5)])
    np.testing.assert_allclose(batched, singles, atol=1e-6)


def test_embed_is_pure(tiny_net, rng):
    images = Tensor(rng.uniform(size=(4, 3, 8, 8)))
    assert np.array_equal(
        embedder_service.embed_batch(tiny_net, images).data,
        embedder_service.embed_batch(tiny_net, images).data,
    )


def test_distances_bounded(tiny_net, rng):
    out = embedder_service.embed_batch(tiny_net, Tensor(rng.uniform(size=(8, 3, 8, 8))))
    dist = triplet_service.pairwise_sq_dist(out).data
    assert dist.min() >= 0
    assert dist.max() <= 4 + 1e-5


def test_unnormalized_embedder(tiny_config, rng):
    net = embedder_service.build_embedder(tiny_config.model_copy(update={"normalize": False}))
    out = embedder_service.embed_batch(net, Tensor(rng.uniform(size=(3, 3, 8, 8))))
    assert not np.allclose(np.linalg.norm(out.data, axis=1), 1)


def test_wrong_image_size(tiny_net):
    with pytest.raises(DimensionError):
        embedder_service.embed_batch(tiny_net, Tensor(np.zeros((1, 3, 16, 16))))


def test_activation_sites(small_net, rng):
    images = Tensor(rng.uniform(size=(2, 3, 16, 16)))
    out, sites = embedder_service.forward_with_activations(small_net, images)
    assert [s.shape for s in sites] == [(2, 3, 16, 16), (2, 4, 8, 8), (2, 8, 4, 4)]
    assert np.array_equal(out.data, embedder_service.embed_batch(small_net, images).data)


def test_embed_images_independent_of_workers(small_net, rng):
    images = rng.uniform(size=(11, 3, 16, 16)).astype(np.float32)
    serial = inference_service.embed_images(small_net, images, chunk=3, workers=1)
    parallel = inference_service.embed_images(small_net, images, chunk=3, workers=4)
    assert np.array_equal(serial, parallel)


def test_embed_images_empty(small_net):
    out = inference_service.embed_images(small_net, np.zeros((0, 3, 16, 16), dtype=np.float32))
    assert out.shape == (0, 16)


def test_full_embedder_gradient(tiny_config, rng):
    """Embedder plus batch-hard loss on a PK batch against central differences"""
    net = embedder_service.build_embedder(tiny_config)
    for b in net.bias_tensors():
        b.data[:] = rng.normal(0.0, 0.1, size=b.shape)
    images = Tensor(rng.uniform(size=(4, 3, 8, 8)))
    labels = np.array([0, 0, 1, 1])
    cfg = TripletConfig(margin=1.0)

    def loss(tape):
        embeddings = embedder_service.embed_batch(net, images, tape=tape)
        return triplet_service.batch_hard_loss(embeddings, labels, cfg, tape=tape)[0]

    result = grad_check_detailed(loss, net.parameters())
    assert result.checked > 0
    assert result.max_rel_error < 1e-4
