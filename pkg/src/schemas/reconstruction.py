from pydantic import BaseModel, Field


class IterationRecord(BaseModel):
    stage: int
    iteration: int
    resolution: int
    loss: float | None = None
    skipped: str | None = None


class StageRecord(BaseModel):
    stage: int
    resolution: int
    sigma: float
    chamfer_l1: float | None = None
    fscore: float | None = None
    normal_consistency: float | None = None


class MetricsLog(BaseModel):
    iterations: list[IterationRecord] = Field(default_factory=list)
    stages: list[StageRecord] = Field(default_factory=list)
    resampled: list[tuple[int, int]] = Field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [record.loss for record in self.iterations if record.loss is not None]
