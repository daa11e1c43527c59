import pytest
from fastapi.testclient import TestClient

from main import app
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.optimizer import init_sphere
from src.services.solver import dpsr_forward


@pytest.fixture(scope="module")
def client():
    yield TestClient(app)


@pytest.fixture(scope="session")
def sphere_cloud():
    return init_sphere(2000, radius=0.3, center=(0.5, 0.5, 0.5), rng_seed=0)


@pytest.fixture(scope="session")
def sphere_chi(sphere_cloud):
    chi, _ = dpsr_forward(sphere_cloud, GridSpec(resolution=32), SolverParams(sigma=2.0))
    return chi
