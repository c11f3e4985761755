from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, field_validator


class RenderRequest(BaseModel):
    scene: str = Field(..., description="Gaussian scene PLY")
    poses: str
    out: str
    tile: int = Field(16, ge=1)
    sh_degree: Optional[int] = Field(None, ge=0, le=3)


class RenderResponse(BaseModel):
    out: str
    views: list[str]
    seconds: float


class TrainRequest(BaseModel):
    images: str
    poses: str
    points: str
    out: str
    config: Optional[str] = None
    iterations: Optional[int] = Field(None, ge=0, description="overrides the config, schedule scaled to match")


class TrainSummary(BaseModel):
    out: str
    scene: str
    iterations: int
    n_gaussians: int
    final_loss: Optional[float] = None
    seconds: float


JobState = Literal["queued", "running", "done", "failed"]


class JobStatus(BaseModel):
    id: str
    kind: str
    state: JobState
    progress: int = 0
    total: int = 0
    result: Optional[dict[str, Any]] = None
    error: Optional[str] = None


class EvalRequest(BaseModel):
    pred: str
    gt: str
    poses: str
    pairs: str = "adjacent:2"
    out: Optional[str] = None
    scene_name: str = "scene"
    tau_cyc: float = Field(2.0, gt=0)
    eps: float = Field(1e-6, ge=0)
    clamp: float = Field(1.0, gt=0)


class MetricRowModel(BaseModel):
    scene: str
    theta: float
    psnr: float
    ssim: float
    dre: Optional[float]
    cir: Optional[float]
    valid_px: int


class EvalResponse(BaseModel):
    rows: list[MetricRowModel]
    out: Optional[str] = None
    dre_clamp: float = 1.0


class SynthRequest(BaseModel):
    out: str
    spec: Optional[str] = Field(None, description="TOML scene spec; default is the room preset")
    preset: Optional[str] = None


class SynthResponse(BaseModel):
    out: str
    n_views: int
    n_points: int
    train_views: list[int]
    test_views: list[int]


class RotateEvalRequest(BaseModel):
    scene: str
    poses: str
    thetas: list[float] = [0.0, 60.0, 90.0]
    seed: int = 7
    spec: Optional[str] = Field(None, description="synthetic scene spec that produces the ground truth")
    out: Optional[str] = None
    tile: int = Field(16, ge=1)

    @field_validator("thetas")
    @classmethod
    def _nonneg(cls, v):
        if any(t < 0 or t > 180 for t in v):
            raise ValueError("thetas must lie in [0, 180] degrees")
        return v


class Health(BaseModel):
    status: str = "ok"
    version: str
