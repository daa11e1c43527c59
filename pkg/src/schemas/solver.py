from pydantic import BaseModel, ConfigDict, Field


class SolverParams(BaseModel):
    """
    Parameters of the spectral Poisson solve.

    :param sigma: Gaussian bandwidth in voxel units (resolution relative); 0 disables smoothing.
    :param m: Magnitude of the indicator at grid node 0.
    :param eps_scale: Smallest admissible ``|a|`` before the scale division is refused.
    """

    sigma: float = Field(default=2.0, ge=0)
    m: float = Field(default=0.5, gt=0)
    eps_scale: float = Field(default=1e-8, gt=0)

    model_config = ConfigDict(frozen=True)
