import logging

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from src.conf.config import config
from src.routes import metrics, solve
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.errors import ShapeAsPointsError
from src.services.optimizer import init_sphere
from src.services.solver import dpsr_forward

logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

app = FastAPI(title="shape-as-points")

origins = ["*"]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(solve.router, prefix="/api")
app.include_router(metrics.router, prefix="/api")


@app.get("/api/healthchecker")
def healthchecker():
    """Solves a small sphere to prove the numerical stack is usable."""
    try:
        cloud = init_sphere(64, radius=0.3, rng_seed=0)
        chi, _ = dpsr_forward(cloud, GridSpec(resolution=8), SolverParams(sigma=1.0))
        if abs(abs(float(chi.values[0, 0, 0])) - 0.5) > 1e-12:
            raise HTTPException(status_code=500, detail="Solver is not configured correctly")
        return {"message": "Welcome to shape-as-points!"}
    except ShapeAsPointsError as e:
        logger.error(f"Health check failed: {e}")
        raise HTTPException(status_code=500, detail="Error running the solver")


if __name__ == "__main__":
    uvicorn.run(app, host=config.API_HOST, port=config.API_PORT)
