import unittest
from unittest.mock import patch

import numpy as np

from src.entity.models import OrientedPointCloud, ScalarGrid, VectorGrid
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services import gradcheck
from src.services.errors import DegenerateScaleError, ResolutionGuardError, TapeMismatchError
from src.services.grid import frequency_grid, sample_trilinear
from src.services.optimizer import init_sphere
from src.services.solver import (
    dpsr_backward,
    dpsr_forward,
    gaussian_kernel,
    normalize_indicator,
    solve_raw,
    solve_raw_reference,
)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-30))


class TestGaussianKernel(unittest.TestCase):

    def test_values(self):
        freq = frequency_grid(GridSpec(resolution=32))
        kernel = gaussian_kernel(freq, 2.0, 32)
        self.assertEqual(kernel[0, 0, 0], 1.0)
        self.assertAlmostEqual(kernel[8, 0, 0], np.exp(-0.5), places=14)
        self.assertTrue(np.all((kernel > 0) & (kernel <= 1)))

    def test_zero_sigma_disables_smoothing(self):
        freq = frequency_grid(GridSpec(resolution=8))
        np.testing.assert_array_equal(gaussian_kernel(freq, 0.0, 8), np.ones((8, 8, 8)))


class TestSolveRaw(unittest.TestCase):

    def setUp(self) -> None:
        self.rng = np.random.default_rng(0)
        self.params = SolverParams(sigma=2.0)

    def test_zero_field(self):
        spec = GridSpec(resolution=8)
        chi = solve_raw(VectorGrid(spec, np.zeros((3, *spec.shape))), self.params)
        self.assertFalse(np.any(chi.values))

    def test_constant_field_has_no_divergence(self):
        spec = GridSpec(resolution=8)
        chi = solve_raw(VectorGrid(spec, np.full((3, *spec.shape), 0.7)), self.params)
        np.testing.assert_allclose(chi.values, 0.0, atol=1e-14)

    def test_matches_direct_dft(self):
        for resolution, trials in ((8, 20), (16, 20)):
            spec = GridSpec(resolution=resolution)
            for _ in range(trials):
                v = VectorGrid(spec, self.rng.standard_normal((3, *spec.shape)))
                fast = solve_raw(v, self.params)
                reference = solve_raw_reference(v, self.params)
                self.assertLess(_relative(fast.values, reference.values), 1e-10)

    def test_mean_free(self):
        spec = GridSpec(resolution=16)
        chi = solve_raw(VectorGrid(spec, self.rng.standard_normal((3, *spec.shape))), self.params)
        self.assertLess(abs(float(chi.values.mean())), 1e-12 * float(np.abs(chi.values).max()))

    def test_linear(self):
        spec = GridSpec(resolution=8)
        v = self.rng.standard_normal((3, *spec.shape))
        w = self.rng.standard_normal((3, *spec.shape))
        combined = solve_raw(VectorGrid(spec, 2.0 * v - 3.0 * w), self.params).values
        separate = 2.0 * solve_raw(VectorGrid(spec, v), self.params).values - 3.0 * solve_raw(
            VectorGrid(spec, w), self.params
        ).values
        self.assertLess(_relative(combined, separate), 1e-12)

    def test_adjoint(self):
        self.assertLess(gradcheck.check_solver_adjoint(GridSpec(resolution=16), self.rng), 1e-10)

    def test_smoothing_damps_high_frequencies(self):
        spec = GridSpec(resolution=16)
        v = VectorGrid(spec, self.rng.standard_normal((3, *spec.shape)))
        high = frequency_grid(spec).sq_norm > 16
        energies = []
        for sigma in (0.0, 1.0, 2.0, 4.0):
            spectrum = np.fft.fftn(solve_raw(v, SolverParams(sigma=sigma)).values)
            energies.append(float(np.sum(np.abs(spectrum[high]) ** 2)))
        self.assertEqual(energies, sorted(energies, reverse=True))

    def test_single_precision(self):
        spec = GridSpec(resolution=16)
        v = self.rng.standard_normal((3, *spec.shape))
        single = solve_raw(VectorGrid(spec, v.astype(np.float32)), self.params)
        double = solve_raw(VectorGrid(spec, v), self.params)
        self.assertEqual(single.dtype, np.float32)
        self.assertLess(_relative(single.values.astype(np.float64), double.values), 1e-4)

    def test_reference_refuses_large_grids(self):
        spec = GridSpec(resolution=32)
        with self.assertRaises(ResolutionGuardError):
            solve_raw_reference(VectorGrid(spec, np.zeros((3, *spec.shape))), self.params)


class TestNormalizeIndicator(unittest.TestCase):

    def setUp(self) -> None:
        self.spec = GridSpec(resolution=4)
        self.rng = np.random.default_rng(3)
        self.points = np.array([[0.25, 0.25, 0.25], [0.5, 0.25, 0.25], [0.25, 0.5, 0.5]])

    def test_unit_scale_halves_the_shifted_field(self):
        values = self.rng.standard_normal(self.spec.shape)
        mu = float(np.mean([values[1, 1, 1], values[2, 1, 1], values[1, 2, 2]]))
        values[0, 0, 0] = mu + 1.0
        chi, tape = normalize_indicator(ScalarGrid(self.spec, values), self.points, SolverParams())
        self.assertAlmostEqual(tape.mu, mu, places=14)
        self.assertAlmostEqual(tape.a, 1.0, places=14)
        np.testing.assert_allclose(chi.values, 0.5 * (values - mu), atol=1e-14)
        self.assertEqual(chi.values[0, 0, 0], 0.5)

    def test_negative_scale_keeps_sign(self):
        values = self.rng.standard_normal(self.spec.shape)
        mu = float(np.mean([values[1, 1, 1], values[2, 1, 1], values[1, 2, 2]]))
        values[0, 0, 0] = mu - 4.0
        chi, _ = normalize_indicator(ScalarGrid(self.spec, values), self.points, SolverParams(m=1.0))
        self.assertEqual(chi.values[0, 0, 0], -1.0)

    def test_constant_field_is_degenerate(self):
        with self.assertRaises(DegenerateScaleError):
            normalize_indicator(ScalarGrid(self.spec, np.full(self.spec.shape, 2.0)), self.points, SolverParams())


class TestDpsr(unittest.TestCase):

    def setUp(self) -> None:
        self.params = SolverParams(sigma=2.0)
        self.cloud = init_sphere(5000, radius=0.3, center=(0.5, 0.5, 0.5), rng_seed=0)

    def test_sphere_sign(self):
        spec = GridSpec(resolution=64)
        chi, _ = dpsr_forward(self.cloud, spec, self.params)
        self.assertLess(chi.values[32, 32, 32], 0.0)
        for corner in np.ndindex(2, 2, 2):
            self.assertGreater(chi.values[tuple(63 * np.array(corner))], 0.0)
        self.assertEqual(chi.values[0, 0, 0], 0.5)

    def test_constraints_hold(self):
        spec = GridSpec(resolution=32)
        chi, tape = dpsr_forward(self.cloud, spec, self.params)
        self.assertEqual(abs(chi.values[0, 0, 0]), 0.5)
        self.assertLess(abs(float(sample_trilinear(chi, self.cloud.positions).mean())), 1e-12)
        self.assertEqual(tape.spec, spec)

    def test_flipped_normals_negate(self):
        spec = GridSpec(resolution=32)
        chi, _ = dpsr_forward(self.cloud, spec, self.params)
        flipped, _ = dpsr_forward(OrientedPointCloud(self.cloud.positions, -self.cloud.normals), spec, self.params)
        np.testing.assert_allclose(flipped.values, -chi.values, rtol=1e-12, atol=1e-12)

    def test_single_precision(self):
        spec = GridSpec(resolution=32)
        chi, _ = dpsr_forward(self.cloud.astype(np.float32), spec, self.params)
        reference, _ = dpsr_forward(self.cloud, spec, self.params)
        self.assertEqual(chi.dtype, np.float32)
        self.assertLess(_relative(chi.values.astype(np.float64), reference.values), 1e-3)


class TestDpsrBackward(unittest.TestCase):

    def setUp(self) -> None:
        self.spec = GridSpec(resolution=16)
        self.rng = np.random.default_rng(4)
        self.cloud = init_sphere(400, radius=0.3, rng_seed=1)
        self.params = SolverParams(sigma=1.0)

    def test_zero_upstream(self):
        _, tape = dpsr_forward(self.cloud, self.spec, self.params)
        grad_positions, grad_normals = dpsr_backward(tape, self.cloud, ScalarGrid.zeros(self.spec))
        self.assertFalse(np.any(grad_positions))
        self.assertFalse(np.any(grad_normals))

    def test_scale_invariance_in_normals(self):
        # chi is invariant to a global rescale of the normals
        _, tape = dpsr_forward(self.cloud, self.spec, self.params)
        upstream = ScalarGrid(self.spec, self.rng.standard_normal(self.spec.shape))
        _, grad_normals = dpsr_backward(tape, self.cloud, upstream)
        projection = float(np.sum(self.cloud.normals * grad_normals))
        self.assertLess(abs(projection), 1e-9 * np.linalg.norm(grad_normals) * np.linalg.norm(self.cloud.normals))

    def test_matches_finite_differences(self):
        self.assertLess(gradcheck.check_dpsr(self.spec, self.rng), 1e-4)

    def test_rejects_foreign_tape(self):
        _, tape = dpsr_forward(self.cloud, self.spec, self.params)
        other = init_sphere(400, radius=0.25, rng_seed=1)
        with self.assertRaises(TapeMismatchError):
            dpsr_backward(tape, other, ScalarGrid.zeros(self.spec))

    def test_rejects_cloud_moved_in_place(self):
        cloud = init_sphere(400, radius=0.3, rng_seed=2)
        _, tape = dpsr_forward(cloud, self.spec, self.params)
        cloud.positions[0] += 0.01
        with self.assertRaises(TapeMismatchError):
            dpsr_backward(tape, cloud, ScalarGrid.zeros(self.spec))

    def test_solve_runs_once_per_kernel(self):
        with patch("src.services.solver.gaussian_kernel", wraps=gaussian_kernel) as kernel:
            spec = GridSpec(resolution=12)
            dpsr_forward(self.cloud, spec, SolverParams(sigma=1.5))
            dpsr_forward(self.cloud, spec, SolverParams(sigma=1.5))
        self.assertEqual(kernel.call_count, 1)


if __name__ == "__main__":
    unittest.main()
