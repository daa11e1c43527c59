import logging

import numpy as np
from fastapi import APIRouter, HTTPException, status

from src.routes.solve import check_point_count
from src.schemas.api import EvalResponse, EvalSchema
from src.services.errors import ComputeError
from src.services.metrics import chamfer_l1_metric, fscore, normal_consistency
from src.services.optimizer import normalize_input

router = APIRouter(tags=["metrics"])

logger = logging.getLogger(__name__)


@router.post("/eval", response_model=EvalResponse)
def evaluate(body: EvalSchema):
    """
    Chamfer-L1, F-Score at ``tau`` and (when both sides carry normals) normal consistency.

    Coordinates are normalized by the reference's bounding box unless ``metrics_frame`` is ``input``.
    """
    check_point_count(max(len(body.prediction), len(body.reference)))
    for name, points, normals in (
        ("prediction", body.prediction, body.prediction_normals),
        ("reference", body.reference, body.reference_normals),
    ):
        if normals is not None and len(normals) != len(points):
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail=f"{name}: {len(points)} points but {len(normals)} normals",
            )

    try:
        prediction = np.asarray(body.prediction, dtype=np.float64)
        reference = np.asarray(body.reference, dtype=np.float64)
        if body.metrics_frame == "normalized":
            _, transform = normalize_input(reference)
            prediction, reference = transform.forward(prediction), transform.forward(reference)
        consistency = None
        if body.prediction_normals is not None and body.reference_normals is not None:
            consistency = normal_consistency(prediction, body.prediction_normals, reference, body.reference_normals)
        result = EvalResponse(
            chamfer_l1=chamfer_l1_metric(prediction, reference),
            fscore=fscore(prediction, reference, body.tau),
            normal_consistency=consistency,
            tau=body.tau,
        )
    except ComputeError as err:
        logger.warning(f"Evaluation failed: {err}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(err))
    return result
