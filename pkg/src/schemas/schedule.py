from pydantic import BaseModel, Field, field_validator, model_validator


class Stage(BaseModel):
    resolution: int = Field(ge=4)
    iterations: int = Field(gt=0)
    sigma: float = Field(ge=0)
    lr: float = Field(ge=0)

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int):
        if v % 2:
            raise ValueError("stage resolution must be even")
        return v


class Schedule(BaseModel):
    """
    Coarse-to-fine optimization plan.

    The point cloud is carried from stage to stage; ``resample_every`` counts
    iterations within a stage.
    """

    stages: list[Stage] = Field(min_length=1)
    resample_every: int = Field(default=200, gt=0)
    resample: bool = True
    n_points: int = Field(default=20000, ge=1)
    n_samples: int = Field(default=20000, ge=1)
    seed: int = 0
    init_radius: float = Field(default=0.3, gt=0)
    init_center: tuple[float, float, float] = (0.5, 0.5, 0.5)

    @model_validator(mode="after")
    def validate_resolutions(self):
        resolutions = [stage.resolution for stage in self.stages]
        if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
            raise ValueError(f"stage resolutions must be strictly increasing, got {resolutions}")
        return self
