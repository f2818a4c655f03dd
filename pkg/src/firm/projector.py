"""Forward projector (volume -> CTF-modulated Fourier slices) and its adjoint.

The forward map evaluates the volume's Fourier transform on the rotated
central-slice disks and multiplies by the per-group radial transfer
function; the adjoint spreads slice samples back onto the Cartesian grid
with conjugate phases and the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CtfParams, DiskGrid, Rotation, Volume, _require, ctf_on_disk
from .nufft import NufftPlan, make_plan, nufft_type1, nufft_type2


@dataclass(frozen=True)
class ProjectionOperator:
    grid: DiskGrid
    rotations: tuple            # M Rotation
    ctf_disk: np.ndarray        # (P, G) CTF values per defocus group
    defocus_group: np.ndarray   # (M,) int
    plan: NufftPlan             # all M*P slice points, image-major

    def __post_init__(self):
        _require(self.plan.count == self.grid.count * len(self.rotations),
                 "plan must hold one point per (disk point, image)")
        _require(bool(np.all(np.isfinite(self.ctf_disk))), "CTF values must be finite")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def m(self) -> int:
        return len(self.rotations)

    def ctf_per_point(self) -> np.ndarray:
        """CTF weight for every concatenated slice point, shape (M*P,)."""
        return self.ctf_disk[:, self.defocus_group].T.ravel()


def all_slice_points(rotations, grid: DiskGrid) -> np.ndarray:
    """Concatenated R^T omega points for all rotations, image-major (M*P, 3)."""
    omega = np.zeros((grid.count, 3))
    omega[:, :2] = 2.0 * np.pi * grid.points / grid.n
    mats = np.stack([r.matrix for r in rotations])
    return np.einsum("pk,mkj->mpj", omega, mats).reshape(-1, 3)


def build_operator(
    grid: DiskGrid,
    rotations,
    ctfs,
    defocus_group,
    accuracy: float = 1e-6,
) -> ProjectionOperator:
    """Assemble the projector; ``ctfs=None`` or ``()`` gives unit response."""
    groups = np.asarray(defocus_group, dtype=np.int64)
    _require(len(groups) == len(rotations), "need one group id per rotation")
    if ctfs:
        ctf_disk = np.stack([ctf_on_disk(c, grid) for c in ctfs], axis=1)
        _require(int(groups.max()) < ctf_disk.shape[1], "group id out of range")
    else:
        ctf_disk = np.ones((grid.count, 1))
        _require(int(groups.max(initial=0)) == 0, "group ids require CTF parameters")
    plan = make_plan(grid.n, all_slice_points(rotations, grid), accuracy)
    return ProjectionOperator(
        grid=grid,
        rotations=tuple(rotations),
        ctf_disk=ctf_disk,
        defocus_group=groups,
        plan=plan,
    )


def _volume_data(v) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def forward(op: ProjectionOperator, v) -> np.ndarray:
    """Apply the forward projector; returns slice values of shape (P, M)."""
    data = _volume_data(v)
    _require(data.shape == (op.n,) * 3, "volume side does not match operator")
    raw = nufft_type2(op.plan, data.astype(np.complex128, copy=False))
    raw *= op.ctf_per_point()
    return raw.reshape(op.m, op.grid.count).T.copy()


def adjoint(op: ProjectionOperator, values: np.ndarray) -> np.ndarray:
    """Apply the back-projector to (P, M) slice values; returns a complex grid."""
    _require(values.shape == (op.grid.count, op.m), "values must be (P, M)")
    weighted = values.T.reshape(-1) * op.ctf_per_point()
    return nufft_type1(op.plan, weighted, op.n)


def slices_from_images(images: np.ndarray, grid: DiskGrid) -> np.ndarray:
    """Centered 2D DFT of each image restricted to the disk, shape (P, M).

    Images are (M, N, N) real arrays in the centered index convention; the
    twiddle-free route goes through ifftshift + fft2, which matches the
    centered sum exactly for integer frequencies.
    """
    images = np.asarray(images)
    _require(images.ndim == 3 and images.shape[1] == images.shape[2] == grid.n,
             "images must be (M, N, N) with the grid's side")
    spectra = np.fft.fft2(np.fft.ifftshift(images, axes=(1, 2)), axes=(1, 2))
    k1 = grid.points[:, 0] % grid.n
    k2 = grid.points[:, 1] % grid.n
    return spectra[:, k1, k2].T.copy()


def images_from_slices(values: np.ndarray, grid: DiskGrid) -> np.ndarray:
    """Inverse of ``slices_from_images``: embed disk values, inverse DFT, real part."""
    _require(values.ndim == 2 and values.shape[0] == grid.count, "values must be (P, M)")
    m = values.shape[1]
    spectra = np.zeros((m, grid.n, grid.n), dtype=np.complex128)
    k1 = grid.points[:, 0] % grid.n
    k2 = grid.points[:, 1] % grid.n
    spectra[:, k1, k2] = values.T
    return np.fft.fftshift(np.fft.ifft2(spectra, axes=(1, 2)), axes=(1, 2)).real
