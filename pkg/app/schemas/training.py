from pydantic import BaseModel, Field, model_validator
from typing import Optional

from app.models.enums import MiningMode


class TripletConfig(BaseModel):
    margin: float = Field(0.2, ge=0, description="Hinge margin α")
    mining: MiningMode = MiningMode.BATCH_HARD

    model_config = {"frozen": True}


class AdamConfig(BaseModel):
    lr: float = Field(0.001, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    model_config = {"frozen": True}


class TrainConfig(BaseModel):
    """Embedder training run (300 epochs, batch 32 = 8 classes × 4 images by default)"""
    epochs: int = Field(300, ge=1)
    batch: int = Field(32, ge=2)
    P: int = Field(8, ge=2, description="Classes per batch")
    K: int = Field(4, ge=1, description="Images per class in a batch")
    seed: int = 0
    triplet: TripletConfig = Field(default_factory=TripletConfig)
    adam: AdamConfig = Field(default_factory=AdamConfig)

    model_config = {"frozen": True}

    @model_validator(mode="before")
    @classmethod
    def derive_batch(cls, values):
        if not isinstance(values, dict):
            return values
        values = dict(values)
        if "batch" not in values and ("P" in values or "K" in values):
            values["batch"] = values.get("P", 8) * values.get("K", 4)
        elif "batch" in values and "P" not in values:
            # batch alone given: keep K, derive P
            k = values.get("K", 4)
            if k and values["batch"] % k == 0:
                values["P"] = values["batch"] // k
        return values

    @model_validator(mode="after")
    def validate_batch(self):
        if self.batch != self.P * self.K:
            raise ValueError(f"batch ({self.batch}) must equal P·K ({self.P}·{self.K})")
        return self

    def fitted_to(self, num_classes: int, keep_k: bool = False) -> "TrainConfig":
        """Copy with P capped at the class count; K grows so P·K stays near the configured batch"""
        if self.P <= num_classes:
            return self
        p = max(2, num_classes)
        k = self.K if keep_k else max(self.K, round(self.batch / p))
        return self.model_copy(update={"P": p, "K": k, "batch": p * k})


class HeadConfig(BaseModel):
    """MLP classifier head trained on frozen embeddings (40 epochs by default)"""
    hidden: int = Field(128, ge=1)
    epochs: int = Field(40, ge=1)
    batch: int = Field(32, ge=1)
    num_classes: Optional[int] = Field(None, ge=2)
    seed: int = 0
    adam: AdamConfig = Field(default_factory=AdamConfig)

    model_config = {"frozen": True}
