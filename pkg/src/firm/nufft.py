"""3D non-uniform FFT pair plus brute-force DFT oracles.

Type-2 evaluates f(p) = sum_n V_n exp(-i <n, p>) at arbitrary points
p in [-pi, pi]^3, with n running over the centered grid [-N/2, N/2)^3.
Type-1 is its exact adjoint: a_n = sum_j q_j exp(+i <n, p_j>).

Both are Kaiser-Bessel gridding transforms at oversampling 2; type-1 is
implemented as the literal transpose of type-2 (same weights, conjugate
transform), so the adjoint identity holds to roundoff, not just to the
requested accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _gridding
from .core import _require

OVERSAMPLING = 2.0
_DIRECT_MAX_SIDE = 32
_DIRECT_MAX_POINTS = 10_000


@dataclass(frozen=True)
class NufftPlan:
    grid_side: int
    points: np.ndarray       # (K, 3) float64, radians in [-pi, pi]
    accuracy: float
    oversampling: float
    kernel_width: int
    beta: float

    @property
    def count(self) -> int:
        return self.points.shape[0]


def kernel_params(accuracy: float) -> tuple[int, float]:
    """Spreading width and shape parameter for a requested relative error."""
    width = int(np.ceil(np.log10(1.0 / accuracy))) + 2
    beta = np.pi * width * (1.0 - 1.0 / (2.0 * OVERSAMPLING))
    return width, beta


def make_plan(grid_side: int, points: np.ndarray, accuracy: float = 1e-6) -> NufftPlan:
    _require(grid_side >= 2 and grid_side % 2 == 0, "grid side must be even and >= 2")
    _require(1e-12 <= accuracy <= 1e-2, "accuracy must lie in [1e-12, 1e-2]")
    pts = np.ascontiguousarray(points, dtype=np.float64)
    _require(pts.ndim == 2 and pts.shape[1] == 3, "points must be (K, 3)")
    _require(bool(np.all(np.abs(pts) <= np.pi + 1e-9)), "points must lie in [-pi, pi]^3")
    width, beta = kernel_params(accuracy)
    return NufftPlan(
        grid_side=int(grid_side),
        points=pts,
        accuracy=float(accuracy),
        oversampling=OVERSAMPLING,
        kernel_width=width,
        beta=beta,
    )


def _kb_fourier(xi: np.ndarray, width: int, beta: float) -> np.ndarray:
    """Continuous Fourier transform of the spreading kernel at xi rad/cell."""
    g2 = beta**2 - (0.5 * width * xi) ** 2
    out = np.empty_like(xi)
    pos = g2 > 0
    gp = np.sqrt(g2[pos])
    out[pos] = width * np.sinh(gp) / gp
    gn = np.sqrt(np.maximum(-g2[~pos], 0.0))
    small = gn < 1e-30
    with np.errstate(invalid="ignore", divide="ignore"):
        tail = width * np.sin(gn) / gn
    out[~pos] = np.where(small, float(width), tail)
    return out


def _deconv_factors(out_side: int, n_fine: int, width: int, beta: float) -> np.ndarray:
    n = np.arange(out_side) - out_side // 2
    return _kb_fourier(2.0 * np.pi * n / n_fine, width, beta)


def _centered_map(side: int, n_fine: int) -> np.ndarray:
    return (np.arange(side) - side // 2) % n_fine


def nufft_type2(plan: NufftPlan, grid_values: np.ndarray) -> np.ndarray:
    """Grid -> values at the plan's points, relative l2 error <= plan accuracy."""
    n = plan.grid_side
    _require(grid_values.shape == (n,) * 3, "grid side does not match plan")
    n_fine = int(plan.oversampling * n)
    d = _deconv_factors(n, n_fine, plan.kernel_width, plan.beta)
    scaled = grid_values / (d[:, None, None] * d[None, :, None] * d[None, None, :])
    fine = np.zeros((n_fine,) * 3, dtype=np.complex128)
    idx = _centered_map(n, n_fine)
    fine[np.ix_(idx, idx, idx)] = scaled
    fine = np.fft.fftn(fine)
    out = np.empty(plan.count, dtype=np.complex128)
    _gridding.interp(plan.points, fine, n_fine, plan.kernel_width, plan.beta, out)
    return out


def nufft_type1(plan: NufftPlan, point_values: np.ndarray, out_side: int) -> np.ndarray:
    """Values at points -> (out_side)^3 grid; exact transpose of type-2."""
    _require(point_values.shape == (plan.count,), "one value per plan point required")
    _require(
        out_side in (plan.grid_side, 2 * plan.grid_side),
        "output side must be the plan side or twice it",
    )
    n_fine = int(plan.oversampling * out_side)
    fine = np.zeros((n_fine,) * 3, dtype=np.complex128)
    vals = np.ascontiguousarray(point_values, dtype=np.complex128)
    _gridding.spread(plan.points, vals, n_fine, plan.kernel_width, plan.beta, fine)
    fine = np.fft.ifftn(fine)
    fine *= n_fine**3
    idx = _centered_map(out_side, n_fine)
    out = fine[np.ix_(idx, idx, idx)]
    d = _deconv_factors(out_side, n_fine, plan.kernel_width, plan.beta)
    out /= d[:, None, None] * d[None, :, None] * d[None, None, :]
    return out


def _direct_guard(plan: NufftPlan, side: int) -> None:
    _require(side <= _DIRECT_MAX_SIDE, "direct sum limited to sides <= 32")
    _require(plan.count <= _DIRECT_MAX_POINTS, "direct sum limited to 1e4 points")


def _phase_tables(points: np.ndarray, side: int, sign: float):
    n = np.arange(side) - side // 2
    return [np.exp(sign * 1j * np.outer(points[:, ax], n)) for ax in range(3)]


def dft_direct_type2(plan: NufftPlan, grid_values: np.ndarray) -> np.ndarray:
    """Brute-force evaluation of the type-2 sum (test oracle)."""
    n = plan.grid_side
    _require(grid_values.shape == (n,) * 3, "grid side does not match plan")
    _direct_guard(plan, n)
    e1, e2, e3 = _phase_tables(plan.points, n, -1.0)
    return np.einsum("xyz,kx,ky,kz->k", grid_values, e1, e2, e3, optimize=True)


def dft_direct_type1(plan: NufftPlan, point_values: np.ndarray, out_side: int) -> np.ndarray:
    """Brute-force adjoint sum on the (out_side)^3 grid (test oracle)."""
    _require(point_values.shape == (plan.count,), "one value per plan point required")
    _direct_guard(plan, out_side)
    e1, e2, e3 = _phase_tables(plan.points, out_side, +1.0)
    return np.einsum("k,kx,ky,kz->xyz", point_values, e1, e2, e3, optimize=True)
