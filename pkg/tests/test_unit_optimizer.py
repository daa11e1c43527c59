import unittest
from unittest.mock import patch

import numpy as np
from pydantic import ValidationError

from src.entity.models import OrientedPointCloud, ScalarGrid
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.errors import (
    ConfigError,
    DegenerateInputError,
    DegenerateScaleError,
    EmptyMeshError,
    EmptyPointSetError,
    ReconstructionAbortedError,
)
from src.services.isosurface import marching_cubes, sample_surface
from src.services.optimizer import (
    AdamState,
    build_schedule,
    default_schedule,
    init_sphere,
    normalize_input,
    reconstruction_step,
    resample_cloud,
    run_reconstruction,
)
from src.services.solver import dpsr_forward


def _sphere_points(n: int, center, radius: float, seed: int = 0) -> np.ndarray:
    directions = np.random.default_rng(seed).standard_normal((n, 3))
    return np.asarray(center) + radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)


class TestAdam(unittest.TestCase):

    def setUp(self) -> None:
        self.adam = AdamState(lr=0.1)

    def test_first_step_moves_by_lr_times_sign(self):
        grads = np.array([[0.5, -2.0, 1e-3]])
        updated = self.adam.step(np.zeros((1, 3)), grads)
        np.testing.assert_allclose(updated, -0.1 * grads / (np.abs(grads) + 1e-8), rtol=1e-9)
        self.assertEqual(self.adam.step_count, 1)

    def test_input_is_not_modified(self):
        params = np.ones((2, 3))
        self.adam.step(params, np.ones((2, 3)))
        np.testing.assert_array_equal(params, np.ones((2, 3)))

    def test_reset_drops_moments(self):
        self.adam.step(np.zeros(3), np.ones(3))
        self.adam.reset()
        self.assertIsNone(self.adam.m)
        self.assertEqual(self.adam.step_count, 0)
        np.testing.assert_array_equal(self.adam.step(np.zeros(3), np.zeros(3)), np.zeros(3))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            self.adam.step(np.zeros(3), np.zeros(4))


class TestSchedule(unittest.TestCase):

    def test_default_clean(self):
        schedule = default_schedule()
        self.assertEqual([s.resolution for s in schedule.stages], [32, 64, 128, 256])
        self.assertEqual([s.iterations for s in schedule.stages], [1000, 1000, 1000, 200])
        self.assertEqual([s.sigma for s in schedule.stages], [2.0, 2.0, 3.0, 3.0])
        for stage, lr in zip(schedule.stages, (2e-3, 1.4e-3, 9.8e-4, 6.86e-4)):
            self.assertAlmostEqual(stage.lr, lr, places=15)
        self.assertEqual(schedule.resample_every, 200)

    def test_default_noisy(self):
        self.assertEqual(default_schedule("noisy").stages[-1].sigma, 5.0)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            default_schedule("blurry")

    def test_scalar_values_broadcast(self):
        schedule = build_schedule([16, 32, 64], 5, 1.5, seed=3)
        self.assertEqual([s.iterations for s in schedule.stages], [5, 5, 5])
        self.assertEqual([s.sigma for s in schedule.stages], [1.5, 1.5, 1.5])
        self.assertEqual(schedule.seed, 3)

    def test_length_mismatch(self):
        with self.assertRaises(ConfigError):
            build_schedule([32, 64], [10, 10, 10], 2.0)

    def test_resolutions_must_increase(self):
        with self.assertRaises(ValidationError):
            build_schedule([64, 32], 10, 2.0)


class TestInitSphere(unittest.TestCase):

    def test_points_on_sphere(self):
        cloud = init_sphere(1000, radius=0.3, rng_seed=0)
        offsets = cloud.positions - 0.5
        np.testing.assert_allclose(np.linalg.norm(offsets, axis=1), 0.3, atol=1e-12)
        np.testing.assert_allclose(cloud.normals, offsets / 0.3, atol=1e-12)

    def test_uniform_on_average(self):
        cloud = init_sphere(20_000, radius=0.3, rng_seed=1)
        np.testing.assert_allclose(cloud.positions.mean(axis=0), 0.5, atol=0.01)

    def test_fixed_seed_is_deterministic(self):
        first = init_sphere(100, radius=0.2, rng_seed=[7])
        second = init_sphere(100, radius=0.2, rng_seed=[7])
        np.testing.assert_array_equal(first.positions, second.positions)

    def test_sphere_must_fit_working_cube(self):
        with self.assertRaises(ConfigError):
            init_sphere(100, radius=0.4)

    def test_empty(self):
        with self.assertRaises(EmptyPointSetError):
            init_sphere(0, radius=0.3)


class TestNormalizeInput(unittest.TestCase):

    def test_working_cube_is_fixed(self):
        corners = np.array(list(np.ndindex(2, 2, 2)), dtype=np.float64) * 0.7 + 0.15
        normalized, transform = normalize_input(corners)
        self.assertAlmostEqual(transform.scale, 1.0, places=14)
        np.testing.assert_allclose(transform.offset, 0.0, atol=1e-14)
        np.testing.assert_allclose(normalized, corners, atol=1e-14)

    def test_round_trip_and_bounds(self):
        points = np.random.default_rng(0).uniform(-5.0, 5.0, size=(500, 3)) * [1.0, 0.5, 2.0]
        normalized, transform = normalize_input(points)
        self.assertGreaterEqual(normalized.min(), 0.15 - 1e-12)
        self.assertLessEqual(normalized.max(), 0.85 + 1e-12)
        np.testing.assert_allclose(transform.inverse(normalized), points, atol=1e-12)
        self.assertAlmostEqual(float(normalized[:, 2].min() + normalized[:, 2].max()), 1.0, places=12)

    def test_identical_points(self):
        with self.assertRaises(DegenerateInputError):
            normalize_input(np.ones((5, 3)))

    def test_empty(self):
        with self.assertRaises(EmptyPointSetError):
            normalize_input(np.zeros((0, 3)))

    def test_coplanar_target_warns(self):
        points = np.random.default_rng(1).uniform(size=(10, 3))
        points[:, 2] = 0.0
        with self.assertLogs("src.services.optimizer", level="WARNING"):
            normalize_input(points)


class TestReconstructionStep(unittest.TestCase):

    def setUp(self) -> None:
        self.spec = GridSpec(resolution=32)
        self.params = SolverParams(sigma=2.0)
        self.cloud = init_sphere(2000, radius=0.3, rng_seed=0)

    def test_zero_learning_rate_keeps_cloud(self):
        target = _sphere_points(2000, (0.5, 0.5, 0.5), 0.25)
        cloud, loss = reconstruction_step(self.cloud, target, self.spec, self.params, AdamState(lr=0.0), 2000, 0)
        np.testing.assert_array_equal(cloud.positions, self.cloud.positions)
        np.testing.assert_array_equal(cloud.normals, self.cloud.normals)
        self.assertTrue(np.isfinite(loss))

    def test_own_surface_is_a_fixed_point(self):
        chi, _ = dpsr_forward(self.cloud, self.spec, self.params)
        target = sample_surface(marching_cubes(chi), 5000, rng_seed=99).points
        _, loss = reconstruction_step(self.cloud, target, self.spec, self.params, AdamState(lr=0.0), 5000, 0)
        self.assertLess(loss, 1e-3)

    def test_loss_decreases(self):
        target = _sphere_points(2000, (0.55, 0.5, 0.5), 0.25)
        adam = AdamState(lr=2e-3)
        cloud, losses = self.cloud, []
        for iteration in range(50):
            cloud, loss = reconstruction_step(cloud, target, self.spec, self.params, adam, 2000, [0, 0, iteration])
            losses.append(loss)
        self.assertLess(np.mean(losses[-10:]), np.mean(losses[:10]))

    def test_positions_stay_clamped(self):
        adam = AdamState(lr=0.5)
        target = _sphere_points(500, (0.5, 0.5, 0.5), 0.1)
        cloud, _ = reconstruction_step(self.cloud, target, self.spec, self.params, adam, 500, 0)
        self.assertGreaterEqual(cloud.positions.min(), 0.02)
        self.assertLessEqual(cloud.positions.max(), 0.98)

    def test_zero_normals_are_degenerate(self):
        cloud = OrientedPointCloud(self.cloud.positions, np.zeros_like(self.cloud.normals))
        with self.assertRaises(DegenerateScaleError):
            reconstruction_step(cloud, self.cloud.positions, self.spec, self.params, AdamState(lr=1e-3), 100)


class TestResampleCloud(unittest.TestCase):

    def setUp(self) -> None:
        self.spec = GridSpec(resolution=32)
        self.cloud = init_sphere(10, radius=0.3, rng_seed=0)
        axis = np.arange(32) / 32
        x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
        big = np.sqrt((x - 0.3) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2) - 0.2
        small = np.sqrt((x - 0.75) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2) - 0.1
        self.chi = ScalarGrid(self.spec, np.minimum(big, small))

    def test_keeps_only_the_largest_component(self):
        resampled = resample_cloud(self.cloud, self.chi, self.spec, 500, rng_seed=[0, 0, 9, 1])
        self.assertEqual(len(resampled), 500)
        distance = np.linalg.norm(resampled.positions - [0.3, 0.5, 0.5], axis=1)
        self.assertTrue(np.all(distance < 0.25))
        np.testing.assert_allclose(np.linalg.norm(resampled.normals, axis=1), 1.0, atol=1e-12)

    def test_no_surface(self):
        with self.assertRaises(EmptyMeshError):
            resample_cloud(self.cloud, ScalarGrid(self.spec, np.ones(self.spec.shape)), self.spec, 10)


class TestRunReconstruction(unittest.TestCase):

    def setUp(self) -> None:
        self.target = _sphere_points(2000, (2.0, 3.0, 4.0), 1.0, seed=5)
        self.schedule = build_schedule([16, 32], 20, 2.0, n_points=1000, n_samples=1000, resample_every=10)

    def test_small_run(self):
        result = run_reconstruction(self.target, self.schedule, ground_truth=self.target)
        self.assertEqual(len(result.log.iterations), 40)
        self.assertEqual(result.log.resampled, [(0, 9), (0, 19), (1, 9), (1, 19)])
        self.assertEqual(len(result.cloud), 1000)
        self.assertFalse(result.mesh.is_empty)
        np.testing.assert_allclose(result.mesh.vertices.mean(axis=0), [2.0, 3.0, 4.0], atol=0.3)
        self.assertEqual(len(result.log.stages), 2)
        self.assertIsNotNone(result.log.stages[-1].chamfer_l1)
        self.assertGreater(result.log.stages[-1].fscore, 0.0)

        again = run_reconstruction(self.target, self.schedule, ground_truth=self.target)
        self.assertEqual(result.log, again.log)
        np.testing.assert_array_equal(result.mesh.vertices, again.mesh.vertices)

    def test_consecutive_failed_windows_abort(self):
        schedule = build_schedule([16], 50, 2.0, n_points=100, n_samples=100, resample_every=10)
        with patch("src.services.optimizer.reconstruction_step", side_effect=EmptyMeshError("gone")) as step:
            with self.assertRaises(ReconstructionAbortedError):
                run_reconstruction(self.target, schedule)
        self.assertEqual(step.call_count, 40)

    def test_skipped_iterations_are_logged(self):
        calls = []

        def flaky(cloud, *args, **kwargs):
            calls.append(1)
            if len(calls) <= 3:
                raise EmptyMeshError("gone")
            return cloud, 0.25

        schedule = build_schedule([16], 10, 2.0, n_points=200, n_samples=200, resample_every=5)
        with patch("src.services.optimizer.reconstruction_step", side_effect=flaky):
            result = run_reconstruction(self.target, schedule)
        self.assertEqual([r.skipped is not None for r in result.log.iterations[:4]], [True, True, True, False])
        self.assertEqual(result.log.losses, [0.25] * 7)
        self.assertEqual(result.log.resampled, [(0, 4), (0, 9)])

    def test_unknown_metrics_frame(self):
        with self.assertRaises(ConfigError):
            run_reconstruction(self.target, self.schedule, metrics_frame="world")


if __name__ == "__main__":
    unittest.main()
