import numpy as np
import pytest

from app.models.dataset import Dataset, LabeledImage
from app.schemas.dataset import SyntheticSpec
from app.schemas.embedder import EmbedderConfig
from app.schemas.training import AdamConfig, TrainConfig, TripletConfig
from app.services.dataset_service import dataset_service
from app.services.embedder_service import embedder_service
from app.services.training_service import training_service


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains a model for several epochs")


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    """Fresh seeded generator per test"""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config() -> EmbedderConfig:
    """8×8 inputs, two small conv blocks; fast enough for finite differences"""
    return EmbedderConfig(input_h=8, input_w=8, conv_channels=[4, 6], embedding_dim=4, init_seed=3)


@pytest.fixture(scope="session")
def small_config() -> EmbedderConfig:
    return EmbedderConfig(input_h=16, input_w=16, conv_channels=[4, 8], embedding_dim=16, init_seed=5)


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    """4 classes × 6 images at 8×8"""
    return dataset_service.generate_synthetic(SyntheticSpec(classes=4, per_class=6, size=8, noise=0.05, seed=11))


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    """5 classes × 20 images at 16×16"""
    return dataset_service.generate_synthetic(SyntheticSpec(classes=5, per_class=20, size=16, noise=0.1, seed=7))


@pytest.fixture(scope="session")
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, P=4, K=2, seed=9, triplet=TripletConfig(margin=0.2))


@pytest.fixture(scope="session")
def trained_small(small_config, small_dataset):
    """Embedder trained briefly on the 16×16 fixture, plus its train/test split"""
    train_set, test_set = training_service.split_stratified(small_dataset, 0.8, seed=7)
    train_cfg = TrainConfig(epochs=15, P=5, K=4, seed=7, adam=AdamConfig(lr=0.003))
    net, history = training_service.train_embedder(train_set, small_config, train_cfg)
    return net, history, train_set, test_set


@pytest.fixture(scope="function")
def tiny_net(tiny_config):
    """Untrained tiny embedder with nonzero biases"""
    return with_random_biases(embedder_service.build_embedder(tiny_config), seed=17)


@pytest.fixture(scope="function")
def small_net(small_config):
    """Untrained embedder with nonzero biases"""
    return with_random_biases(embedder_service.build_embedder(small_config), seed=21)


def make_dataset(counts, shape=(3, 2, 2), names=None) -> Dataset:
    """Dataset of constant images with the given per-class counts"""
    names = names or [f"c{i}" for i in range(len(counts))]
    images = []
    for label, n in enumerate(counts):
        for i in range(n):
            pixels = np.full(shape, (label * 31 + i) % 255 / 255.0, dtype=np.float32)
            images.append(LabeledImage(pixels=pixels, label=label, source=f"{names[label]}/{i}"))
    return Dataset(images=images, class_names=list(names))


@pytest.fixture(scope="session")
def dataset_factory():
    return make_dataset


def with_random_biases(net, seed: int):
    bias_rng = np.random.default_rng(seed)
    for b in net.bias_tensors():
        b.data[:] = bias_rng.normal(0.0, 0.1, size=b.shape).astype(np.float32)
    return net
