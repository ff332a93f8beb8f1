from pydantic import BaseModel, Field, model_validator
from typing import List


class EmbedderConfig(BaseModel):
    """Architecture of the shared-weight embedder: N conv blocks then one dense layer"""
    input_h: int = Field(64, gt=0)
    input_w: int = Field(64, gt=0)
    input_c: int = Field(3, gt=0)
    conv_channels: List[int] = Field(default_factory=lambda: [8, 16], min_length=1)
    embedding_dim: int = Field(64, ge=2, description="Embedding width D")
    normalize: bool = True
    init_seed: int = 0

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def validate_spatial_dims(self):
        if any(c < 1 for c in self.conv_channels):
            raise ValueError("conv_channels must be positive")
        factor = 2 ** len(self.conv_channels)
        if self.input_h % factor or self.input_w % factor:
            raise ValueError(
                f"input {self.input_h}x{self.input_w} must be divisible by {factor} "
                f"({len(self.conv_channels)} pooling stages)"
            )
        return self

    @property
    def feature_h(self) -> int:
        return self.input_h // 2 ** len(self.conv_channels)

    @property
    def feature_w(self) -> int:
        return self.input_w // 2 ** len(self.conv_channels)

    @property
    def flat_dim(self) -> int:
        """Input length of the final dense layer"""
        return self.conv_channels[-1] * self.feature_h * self.feature_w

    @property
    def input_shape(self) -> tuple:
        return (self.input_c, self.input_h, self.input_w)
