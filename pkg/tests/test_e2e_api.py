import numpy as np
from fastapi import status

from src.conf.config import config


def sphere_payload(sphere_cloud, count: int = 500) -> dict:
    return {
        "points": sphere_cloud.positions[:count].tolist(),
        "normals": sphere_cloud.normals[:count].tolist(),
    }


def test_healthchecker(client):
    response = client.get("/api/healthchecker")
    assert response.status_code == status.HTTP_200_OK, response.text
    assert response.json() == {"message": "Welcome to shape-as-points!"}


def test_solve(client, sphere_cloud):
    response = client.post("/api/solve", json={**sphere_payload(sphere_cloud), "resolution": 32})
    assert response.status_code == status.HTTP_200_OK, response.text
    data = response.json()
    assert data["resolution"] == 32
    assert data["chi_origin"] == 0.5
    assert len(data["triangles"]) > 0
    vertices = np.asarray(data["vertices"])
    np.testing.assert_allclose(vertices.mean(axis=0), 0.5, atol=0.05)


def test_solve_resolution_limit(client, sphere_cloud):
    response = client.post(
        "/api/solve", json={**sphere_payload(sphere_cloud, 10), "resolution": 2 * config.API_MAX_RESOLUTION}
    )
    assert response.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY, response.text


def test_solve_odd_resolution(client, sphere_cloud):
    response = client.post("/api/solve", json={**sphere_payload(sphere_cloud, 10), "resolution": 33})
    assert response.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY, response.text


def test_solve_length_mismatch(client, sphere_cloud):
    payload = sphere_payload(sphere_cloud, 10)
    payload["normals"] = payload["normals"][:5]
    response = client.post("/api/solve", json=payload)
    assert response.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY, response.text


def test_solve_raw_out_of_domain(client):
    payload = {"points": [[0.5, 0.5, 0.5], [2.5, 0.5, 0.5]], "normals": [[0, 0, 1], [0, 0, 1]], "normalize": False}
    response = client.post("/api/solve", json={**payload, "resolution": 16})
    assert response.status_code == status.HTTP_400_BAD_REQUEST, response.text


def test_eval_identical(client, sphere_cloud):
    points = sphere_cloud.positions[:300].tolist()
    normals = sphere_cloud.normals[:300].tolist()
    response = client.post(
        "/api/eval",
        json={"prediction": points, "reference": points, "prediction_normals": normals, "reference_normals": normals},
    )
    assert response.status_code == status.HTTP_200_OK, response.text
    data = response.json()
    assert data["chamfer_l1"] == 0.0
    assert data["fscore"] == 1.0
    assert abs(data["normal_consistency"] - 1.0) < 1e-9


def test_eval_non_unit_normals(client, sphere_cloud):
    points = sphere_cloud.positions[:20].tolist()
    normals = (2.0 * sphere_cloud.normals[:20]).tolist()
    response = client.post(
        "/api/eval",
        json={"prediction": points, "reference": points, "prediction_normals": normals, "reference_normals": normals},
    )
    assert response.status_code == status.HTTP_400_BAD_REQUEST, response.text
