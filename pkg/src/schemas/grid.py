from pydantic import BaseModel, ConfigDict, Field, field_validator


class GridSpec(BaseModel):
    """
    Cubical periodic grid over the unit cube [0, 1)^3.

    Node ``(i, j, k)`` sits at ``(i, j, k) * voxel_size`` (origin at 0). Arrays are
    indexed ``values[x, y, z]``; the linear voxel index is x-fastest,
    ``i + r * (j + r * k)``, which is also the order of file dumps.
    """

    resolution: int = Field(ge=4)

    model_config = ConfigDict(frozen=True)

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int):
        if v % 2:
            raise ValueError("resolution must be even")
        return v

    @property
    def voxel_size(self) -> float:
        return 1.0 / self.resolution

    @property
    def voxel_count(self) -> int:
        return self.resolution**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.resolution,) * 3

    def linear_index(self, i, j, k):
        return i + self.resolution * (j + self.resolution * k)
