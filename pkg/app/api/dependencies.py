"""
Shared CLI plumbing: the merged CliConfig, config-file loading, option
groups reused by several commands and the loaders commands depend on.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import orjson
from pydantic import BaseModel, ConfigDict

from app.api.routing import Option, opt
from app.core.config import settings
from app.core.exceptions import ConfigError, DatasetIOError
from app.models.bundle import Extractor, ModelBundle
from app.models.dataset import Dataset
from app.models.enums import ClassifierKind, MiningMode, QuantMode
from app.schemas.dataset import SyntheticSpec
from app.schemas.embedder import EmbedderConfig
from app.schemas.training import AdamConfig, HeadConfig, TrainConfig, TripletConfig
from app.services.dataset_service import dataset_service
from app.services.model_io_service import model_io_service

logger = logging.getLogger(__name__)

# Keys the CLI manages itself; never echoed, never accepted from a config file
RESERVED_KEYS = {"command", "handler", "config"}


# ============================================================================
# OPTION GROUPS
# ============================================================================

COMMON_OPTIONS: List[Option] = [
    opt("--config", metavar="FILE", default=None, help="key=value file; explicit flags win over it"),
    opt("--seed", type=int, default=settings.DEFAULT_SEED, help="seed for every random choice"),
]

EMBEDDER_OPTIONS: List[Option] = [
    opt("--size", type=int, default=settings.DEFAULT_IMAGE_SIZE, help="square input side in pixels"),
    opt("--conv-channels", default="8,16", help="comma-separated channels of the conv blocks"),
    opt("--embedding-dim", type=int, default=64),
    opt("--no-normalize", action="store_true", help="skip L2 normalization of embeddings"),
]

TRAINING_OPTIONS: List[Option] = [
    opt("--epochs", type=int, default=300),
    opt("--batch", type=int, default=None, help="batch size (default P·K)"),
    opt("--pk-classes", type=int, default=None, help="P, classes per batch (default 8)"),
    opt("--pk-images", type=int, default=None, help="K, images per class (default 4)"),
    opt("--margin", type=float, default=0.2),
    opt("--mining", choices=[m.value for m in MiningMode], default=MiningMode.BATCH_HARD.value),
    opt("--lr", type=float, default=0.001),
]

HEAD_OPTIONS: List[Option] = [
    opt("--hidden", type=int, default=128, help="hidden width of the MLP head"),
    opt("--head-epochs", type=int, default=40),
    opt("--head-batch", type=int, default=32),
]

CLASSIFIER_OPTIONS: List[Option] = [
    opt("--classifier", choices=[c.value for c in ClassifierKind], default=None,
        help="mlp needs a head in the model file; default: mlp when present, else knn"),
    opt("--k", type=int, default=1, help="neighbours for the KNN vote"),
]


# ============================================================================
# CONFIG
# ============================================================================

def _parse_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"'{value}' is not a boolean", field=key)


def load_config_file(path: str, parser: argparse.ArgumentParser) -> Dict[str, Any]:
    """
    Read `key=value` lines for one subcommand. Keys are flag destinations
    (dashes allowed); values go through the flag's own type conversion.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(path, e.strerror or str(e))

    actions = {a.dest: a for a in parser._actions if a.dest not in RESERVED_KEYS and a.dest != "help"}
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'", field=key)

        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            parsed: Any = _parse_bool(key, value)
        elif action.nargs in ("+", "*"):
            parsed = value.split()
        else:
            try:
                parsed = action.type(value) if action.type else value
            except (TypeError, ValueError):
                raise ConfigError(f"{path}:{lineno}: invalid value '{value}' for {key}", field=key)
        if action.choices is not None and parsed not in action.choices:
            raise ConfigError(f"{path}:{lineno}: {key} must be one of {list(action.choices)}", field=key)
        values[dest] = parsed
    return values


class CliConfig(BaseModel):
    """Effective settings of one command: defaults < config file < flags"""
    command: str
    values: Dict[str, Any]

    model_config = ConfigDict(frozen=True, extra="forbid")

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "CliConfig":
        values = {k: v for k, v in vars(args).items() if k not in RESERVED_KEYS}
        return cls(command=args.command, values=values)

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"command '{self.command}' has no option '{key}'", field=key)

    def echo(self) -> str:
        return orjson.dumps(
            {"command": self.command, **self.values}, option=orjson.OPT_SORT_KEYS, default=str
        ).decode()

    # Domain configs built from the merged values; field violations surface as ValidationError

    def embedder_config(self) -> EmbedderConfig:
        try:
            channels = [int(c) for c in str(self["conv_channels"]).split(",") if c.strip()]
        except ValueError:
            raise ConfigError(f"conv-channels must be comma-separated integers, got '{self['conv_channels']}'")
        return EmbedderConfig(
            input_h=self["size"],
            input_w=self["size"],
            conv_channels=channels,
            embedding_dim=self["embedding_dim"],
            normalize=not self["no_normalize"],
            init_seed=self["seed"],
        )

    def train_config(self, num_classes: Optional[int] = None) -> TrainConfig:
        data: Dict[str, Any] = {
            "epochs": self["epochs"],
            "seed": self["seed"],
            "triplet": TripletConfig(margin=self["margin"], mining=MiningMode(self["mining"])),
            "adam": AdamConfig(lr=self["lr"]),
        }
        for key, name in (("batch", "batch"), ("pk_classes", "P"), ("pk_images", "K")):
            if self[key] is not None:
                data[name] = self[key]
        train_cfg = TrainConfig(**data)
        if self["pk_classes"] is None and num_classes is not None:
            fitted = train_cfg.fitted_to(num_classes, keep_k=self["pk_images"] is not None)
            if fitted is not train_cfg:
                logger.info(
                    "PK batch fitted to the dataset",
                    extra={"classes": num_classes, "P": fitted.P, "K": fitted.K, "batch": fitted.batch}
                )
            train_cfg = fitted
        return train_cfg

    def head_config(self, num_classes: Optional[int] = None) -> HeadConfig:
        return HeadConfig(
            hidden=self["hidden"],
            epochs=self["head_epochs"],
            batch=self["head_batch"],
            num_classes=num_classes,
            seed=self["seed"],
            adam=AdamConfig(lr=self["lr"]),
        )

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            classes=self["classes"],
            per_class=self["per_class"],
            size=self["size"],
            noise=self["noise"],
            seed=self["seed"],
        )

    def quant_mode(self) -> QuantMode:
        return QuantMode(self["mode"])


# ============================================================================
# LOADERS
# ============================================================================

def get_bundle(path: str) -> ModelBundle:
    return model_io_service.load_bundle(path)


def get_extractor(bundle: ModelBundle, path: str) -> Extractor:
    if bundle.extractor is None:
        raise ConfigError(f"{path} holds no embedder", field="model")
    return bundle.extractor


def get_dataset(path: str, extractor: Optional[Extractor] = None, size: Optional[int] = None) -> Dataset:
    """Load a directory dataset at the extractor's input size when one is given"""
    if extractor is not None:
        size = extractor.config.input_h
    return dataset_service.load_dataset_dir(path, size=size)


def resolve_classifier(cfg: CliConfig, bundle: ModelBundle, path: str):
    """The head or index a command should classify with"""
    choice = cfg["classifier"]
    if choice is None:
        choice = ClassifierKind.MLP.value if bundle.head is not None else ClassifierKind.KNN.value
    if choice == ClassifierKind.MLP.value:
        if bundle.head is None:
            raise ConfigError(f"{path} holds no MLP head", field="classifier")
        return bundle.head
    if bundle.index is None:
        raise ConfigError(f"{path} holds no KNN index (run build-index first)", field="classifier")
    return bundle.index
