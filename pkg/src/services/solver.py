"""
Differentiable spectral Poisson solver.

Forward transform convention is ``exp(-2 pi i x.u)`` with the ``1/n``
normalization on the inverse, matching ``scipy.fft`` defaults.
"""

import logging
from dataclasses import replace
from functools import lru_cache

import numpy as np
from scipy import fft

from src.conf import messages
from src.entity.models import (
    FrequencyGrid,
    OrientedPointCloud,
    ScalarGrid,
    SolveTape,
    SpectralKernel,
    TrilinearStencil,
    VectorGrid,
)
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.errors import (
    DegenerateScaleError,
    GridSpecMismatchError,
    NonFiniteInputError,
    ResolutionGuardError,
    TapeMismatchError,
)
from src.services.grid import (
    frequency_grid,
    sample_grad_with_stencil,
    sample_with_stencil,
    trilinear_stencil,
)
from src.services.rasterizer import rasterize, rasterize_backward

logger = logging.getLogger(__name__)

REFERENCE_MAX_RESOLUTION = 16
SPATIAL_AXES = (1, 2, 3)


def gaussian_kernel(freq: FrequencyGrid, sigma: float, r: int) -> np.ndarray:
    """
    Spectral Gaussian ``exp(-2 sigma^2 |u|^2 / r^2)``.

    :param freq: FrequencyGrid: Wavenumbers to evaluate at.
    :param sigma: float: Bandwidth in voxel units.
    :param r: int: Grid resolution.
    :return: np.ndarray: One weight in (0, 1] per frequency, 1 at u = 0.
    """
    return np.exp(-2.0 * sigma**2 * freq.sq_norm / float(r) ** 2)


def _derivative_wavenumbers(axis: np.ndarray, r: int) -> np.ndarray:
    # odd derivative of the Nyquist mode is not real-representable
    return np.where(np.abs(axis) == r // 2, 0, axis).astype(np.float64)


def _transfer(sq_norm: np.ndarray, gaussian: np.ndarray) -> np.ndarray:
    denominator = -2.0 * np.pi * np.where(sq_norm == 0, 1, sq_norm)
    return np.where(sq_norm == 0, 0.0, gaussian / denominator)


@lru_cache(maxsize=4)
def spectral_kernel(spec: GridSpec, sigma: float) -> SpectralKernel:
    """Cached half-spectrum operator of one (resolution, sigma) pair."""
    r = spec.resolution
    freq = frequency_grid(spec, half=True)
    transfer = _transfer(freq.sq_norm, gaussian_kernel(freq, sigma, r))
    transfer.setflags(write=False)
    full_axis = freq.u[:, 0, 0, 0]
    half_axis = freq.u[0, 0, :, 2]
    wavenumbers = (
        _derivative_wavenumbers(full_axis, r),
        _derivative_wavenumbers(full_axis, r),
        _derivative_wavenumbers(half_axis, r),
    )
    for axis in wavenumbers:
        axis.setflags(write=False)
    return SpectralKernel(spec=spec, sigma=sigma, transfer=transfer, wavenumbers=wavenumbers)


def _complex_dtype(dtype) -> np.dtype:
    return np.result_type(dtype, np.complex64)


def _apply_solve(values: np.ndarray, kernel: SpectralKernel) -> np.ndarray:
    r = kernel.spec.resolution
    spectrum = fft.rfftn(values, axes=SPATIAL_AXES)
    divergence = sum(kernel.derivative(axis) * spectrum[axis] for axis in range(3))
    chi_hat = (1j * kernel.transfer * divergence).astype(_complex_dtype(values.dtype), copy=False)
    return fft.irfftn(chi_hat, s=(r, r, r), axes=(0, 1, 2))


def solve_raw_adjoint(upstream: np.ndarray, kernel: SpectralKernel) -> np.ndarray:
    """
    Transpose of the raw solve: maps dL/dchi' (r, r, r) to dL/dv (3, r, r, r).

    The kernel of each channel is purely imaginary, so its conjugate is its negation.
    """
    r = kernel.spec.resolution
    spectrum = fft.rfftn(upstream)
    weighted = (-1j * kernel.transfer * spectrum).astype(_complex_dtype(upstream.dtype), copy=False)
    channels = [fft.irfftn(kernel.derivative(axis) * weighted, s=(r, r, r)) for axis in range(3)]
    return np.stack(channels).astype(upstream.dtype, copy=False)


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError(messages.NON_FINITE_INPUT)


def solve_raw(v: VectorGrid, params: SolverParams) -> ScalarGrid:
    """
    Solves the Poisson equation for the raw indicator chi' in the spectral domain.

    The zero-frequency coefficient is set to 0, so chi' is mean free.

    :param v: VectorGrid: Rasterized normal field.
    :param params: SolverParams: Only ``sigma`` is used here.
    :return: ScalarGrid: chi', linear in ``v``.
    """
    _check_finite(v.values)
    kernel = spectral_kernel(v.spec, float(params.sigma))
    chi = _apply_solve(v.values, kernel).astype(v.dtype, copy=False)
    return ScalarGrid(v.spec, chi)


def solve_raw_reference(v: VectorGrid, params: SolverParams) -> ScalarGrid:
    """
    Direct-summation DFT version of :func:`solve_raw`, used as a test oracle.

    Each axis is transformed by an explicit ``r x r`` DFT matrix; no FFT is involved.

    :raises ResolutionGuardError: Above resolution 16.
    """
    r = v.spec.resolution
    if r > REFERENCE_MAX_RESOLUTION:
        raise ResolutionGuardError(messages.RESOLUTION_GUARD.format(resolution=r, limit=REFERENCE_MAX_RESOLUTION))
    _check_finite(v.values)

    samples = np.arange(r)
    forward = np.exp(-2j * np.pi * np.outer(samples, samples) / r)
    backward = np.conj(forward)
    v_hat = np.einsum(
        "ax,by,cz,ixyz->iabc", forward, forward, forward, v.values.astype(np.float64), optimize=True
    )

    freq = frequency_grid(v.spec)
    derivative = np.where(np.abs(freq.u) == r // 2, 0, freq.u).astype(np.float64)
    transfer = _transfer(freq.sq_norm, gaussian_kernel(freq, params.sigma, r))
    chi_hat = 1j * transfer * np.einsum("xyzc,cxyz->xyz", derivative, v_hat)

    chi = np.einsum("xa,yb,zc,abc->xyz", backward, backward, backward, chi_hat, optimize=True) / v.spec.voxel_count
    return ScalarGrid(v.spec, chi.real.astype(v.dtype, copy=False))


def normalize_indicator(
    chi_raw: ScalarGrid, points, params: SolverParams, stencil: TrilinearStencil | None = None
) -> tuple[ScalarGrid, SolveTape]:
    """
    Shifts chi' to zero mean at the points and scales it so ``|chi|`` at grid node 0 is ``m``.

    ``chi = m / |a| * (chi' - mu)`` with ``mu`` the mean of chi' sampled at the
    points and ``a = chi'(node 0) - mu``.

    :raises DegenerateScaleError: ``|a| < eps_scale``.
    """
    points = np.asarray(points)
    if stencil is None:
        stencil = trilinear_stencil(points, chi_raw.spec)
    mu = float(sample_with_stencil(chi_raw.values, stencil).mean())
    a = float(chi_raw.values[0, 0, 0]) - mu
    if not abs(a) >= params.eps_scale:
        raise DegenerateScaleError(messages.DEGENERATE_SCALE.format(value=abs(a)))

    chi = (params.m / abs(a)) * (chi_raw.values - mu)
    chi[0, 0, 0] = np.copysign(params.m, a)
    tape = SolveTape(
        spec=chi_raw.spec,
        chi_raw=chi_raw,
        mu=mu,
        a=a,
        m=params.m,
        stencil=stencil,
        positions=points.copy(),
    )
    return ScalarGrid(chi_raw.spec, chi.astype(chi_raw.dtype, copy=False)), tape


def dpsr_forward(cloud: OrientedPointCloud, spec: GridSpec, params: SolverParams) -> tuple[ScalarGrid, SolveTape]:
    """
    Differentiable Poisson surface reconstruction: oriented points to indicator grid.

    With outward normals, chi < 0 inside the shape and chi > 0 outside.

    :param cloud: OrientedPointCloud: Positions in the unit cube and normals.
    :param spec: GridSpec: Output grid.
    :param params: SolverParams: Smoothing and normalization parameters.
    :return: (chi, tape for :func:`dpsr_backward`)
    """
    stencil = trilinear_stencil(cloud.positions, spec)
    v = rasterize(cloud, spec, stencil=stencil)
    chi_raw = solve_raw(v, params)
    chi, tape = normalize_indicator(chi_raw, cloud.positions, params, stencil=stencil)
    return chi, replace(tape, kernel=spectral_kernel(spec, float(params.sigma)))


def normalize_indicator_backward(tape: SolveTape, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Backward pass of :func:`normalize_indicator`.

    :return: (dL/dchi' (r, r, r), dL/dpositions from the mean term (N, 3))
    """
    chi_raw = tape.chi_raw.values
    a = tape.a
    scale = tape.m / abs(a)

    grad_scale = float(np.sum(upstream * (chi_raw - tape.mu)))
    grad_a = grad_scale * (-tape.m * np.sign(a) / a**2)
    grad_mu = -scale * float(upstream.sum()) - grad_a

    grad_raw = scale * upstream
    grad_raw[0, 0, 0] += grad_a
    per_point = np.full(len(tape.stencil), grad_mu / len(tape.stencil), dtype=chi_raw.dtype)
    grid_from_mean, positions_from_mean = sample_grad_with_stencil(chi_raw, tape.stencil, per_point)
    return grad_raw + grid_from_mean, positions_from_mean


def dpsr_backward(
    tape: SolveTape, cloud: OrientedPointCloud, upstream: ScalarGrid
) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact reverse-mode gradient of :func:`dpsr_forward`.

    :param tape: SolveTape: From the forward call on ``cloud``.
    :param cloud: OrientedPointCloud: The same cloud.
    :param upstream: ScalarGrid: dL/dchi.
    :return: (dL/dpositions (N, 3), dL/dnormals (N, 3))
    :raises TapeMismatchError: The tape belongs to another cloud or grid.
    """
    if tape.positions.shape != cloud.positions.shape or not np.array_equal(tape.positions, cloud.positions):
        raise TapeMismatchError(messages.TAPE_MISMATCH)
    if upstream.spec != tape.spec:
        raise GridSpecMismatchError(messages.SPEC_MISMATCH.format(left=tape.spec, right=upstream.spec))
    if tape.kernel is None:
        raise TapeMismatchError(messages.TAPE_MISMATCH)

    grad_raw, positions_from_mean = normalize_indicator_backward(tape, upstream.values)
    grad_v = VectorGrid(tape.spec, solve_raw_adjoint(grad_raw, tape.kernel))
    grad_positions, grad_normals = rasterize_backward(cloud, tape.spec, grad_v, stencil=tape.stencil)
    return grad_positions + positions_from_mean, grad_normals
