from pydantic import BaseModel, Field


class SyntheticSpec(BaseModel):
    """Deterministic sinusoidal-texture dataset standing in for field photographs"""
    classes: int = Field(5, ge=2)
    per_class: int = Field(40, ge=4, description="Images per class")
    size: int = Field(32, gt=0, description="Square image side in pixels")
    noise: float = Field(0.1, ge=0, description="Gaussian noise σ")
    seed: int = 0

    model_config = {"frozen": True}
