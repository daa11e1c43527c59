from typing import Literal

from pydantic import BaseModel, Field, model_validator

Point = tuple[float, float, float]


class SolveSchema(BaseModel):
    points: list[Point] = Field(min_length=1)
    normals: list[Point] = Field(min_length=1)
    resolution: int = Field(default=64, ge=4)
    sigma: float = Field(default=2.0, ge=0)
    normalize: bool = True

    @model_validator(mode="after")
    def validate_lengths(self):
        if len(self.points) != len(self.normals):
            raise ValueError(f"{len(self.points)} points but {len(self.normals)} normals")
        return self


class SolveResponse(BaseModel):
    resolution: int
    sigma: float
    chi_origin: float
    vertices: list[Point]
    triangles: list[tuple[int, int, int]]


class EvalSchema(BaseModel):
    prediction: list[Point] = Field(min_length=1)
    reference: list[Point] = Field(min_length=1)
    prediction_normals: list[Point] | None = None
    reference_normals: list[Point] | None = None
    tau: float = Field(default=0.01, gt=0)
    metrics_frame: Literal["normalized", "input"] = "normalized"


class EvalResponse(BaseModel):
    chamfer_l1: float
    fscore: float
    normal_consistency: float | None
    tau: float
