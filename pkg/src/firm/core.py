"""Domain types and sampling geometry shared by every other module.

Index conventions used throughout the package:

* A volume of side ``N`` (even) is stored as an ``(N, N, N)`` array whose
  position ``i`` along each axis carries the centered index ``n = i - N/2``,
  so ``n`` runs over ``[-N/2, N/2)``.  Images use the same convention in 2D.
* Fourier-disk indices ``k = (k1, k2)`` live on the symmetric range
  ``[-(N/2 - 1), N/2 - 1]`` so the sample set is closed under negation,
  which keeps back-projections of real images real up to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NumericalFailure(RuntimeError):
    """Raised when an iteration produces non-finite values."""


class InconsistentKernelError(ValueError):
    """Raised when a convolution kernel violates Hermitian symmetry."""


class CacheMismatchError(ValueError):
    """Raised when a cached kernel does not match the requested geometry."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class Volume:
    """Real 3D density grid of even side ``n`` with ``pixel_size`` in Angstrom."""

    n: int
    pixel_size: float
    data: np.ndarray

    def __post_init__(self):
        _require(self.n >= 4 and self.n % 2 == 0, "volume side must be even and >= 4")
        _require(self.pixel_size > 0, "pixel_size must be positive")
        _require(self.data.shape == (self.n,) * 3, "volume data shape mismatch")
        _require(bool(np.all(np.isfinite(self.data))), "volume data must be finite")


@dataclass(frozen=True)
class Rotation:
    """Proper rotation (element of SO(3)), stored as a 3x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        _require(m.shape == (3, 3), "rotation matrix must be 3x3")
        _require(np.abs(m @ m.T - np.eye(3)).max() <= 1e-12, "matrix is not orthogonal")
        _require(abs(np.linalg.det(m) - 1.0) <= 1e-12, "determinant must be +1")
        object.__setattr__(self, "matrix", m)


def rotation_from_euler_zyz(alpha_deg: float, beta_deg: float, gamma_deg: float) -> Rotation:
    """Intrinsic ZYZ Euler angles (degrees) -> Rotation, R = Rz(a) Ry(b) Rz(g)."""
    a, b, g = (math.radians(x) for x in (alpha_deg, beta_deg, gamma_deg))

    def rz(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def ry(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])

    return Rotation(rz(a) @ ry(b) @ rz(g))


@dataclass(frozen=True)
class CtfParams:
    """Sinusoidal transfer function parameters.

    Units: defocus in micrometers, spherical aberration in millimeters,
    electron wavelength in picometers, pixel size in Angstrom.  The
    amplitude contrast and the envelope width are dimensionless and enter
    the formula exactly as given.
    """

    defocus_um: float
    cs_mm: float
    wavelength_pm: float
    amplitude_contrast: float
    b_factor: float
    pixel_size: float

    def __post_init__(self):
        _require(self.defocus_um > 0, "defocus must be positive")
        _require(self.cs_mm >= 0, "spherical aberration must be non-negative")
        _require(self.wavelength_pm > 0, "wavelength must be positive")
        _require(0 <= self.amplitude_contrast < 1, "amplitude contrast must be in [0, 1)")
        _require(self.b_factor > 0, "envelope width must be positive")
        _require(self.pixel_size > 0, "pixel size must be positive")


@dataclass(frozen=True)
class DiskGrid:
    """Integer frequency pairs inside the Fourier disk of a side-``n`` image."""

    n: int
    points: np.ndarray  # (count, 2) int64, row-major over k1 with k2 fastest

    def __post_init__(self):
        _require(self.points.ndim == 2 and self.points.shape[1] == 2, "points must be (P, 2)")

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def radii(self) -> np.ndarray:
        """Euclidean index radius ||k|| per point."""
        return np.sqrt((self.points.astype(np.float64) ** 2).sum(axis=1))


def build_disk_grid(n: int) -> DiskGrid:
    """All centered index pairs with k1^2 + k2^2 <= (n/2)^2.

    The range per axis is the symmetric [-(n/2-1), n/2-1] so the set is
    closed under negation; comparisons are exact integer arithmetic.
    """
    _require(n >= 4 and n % 2 == 0, "side must be even and >= 4")
    half = n // 2 - 1
    limit = (n // 2) ** 2
    pts = [
        (k1, k2)
        for k1 in range(-half, half + 1)
        for k2 in range(-half, half + 1)
        if k1 * k1 + k2 * k2 <= limit
    ]
    return DiskGrid(n=n, points=np.array(pts, dtype=np.int64))


def slice_points(rot: Rotation, grid: DiskGrid) -> np.ndarray:
    """3D frequencies R^T (2 pi k1 / N, 2 pi k2 / N, 0) for every disk point.

    Returns an (P, 3) array of radian frequencies; all norms are <= pi.
    """
    omega = np.zeros((grid.count, 3))
    omega[:, :2] = 2.0 * np.pi * grid.points / grid.n
    # row-vector form of R^T omega
    return omega @ rot.matrix


def ctf_eval(params: CtfParams, r) -> np.ndarray | float:
    """Transfer function value at spatial frequency ``r`` (1/Angstrom).

    All lengths are converted to Angstrom before evaluating
    sin(-pi (defocus r^2 - Cs lambda^3 r^4 / 2) - A) * exp(-(r / (2 B))^2).
    """
    r_arr = np.asarray(r, dtype=np.float64)
    _require(bool(np.all(r_arr >= 0)), "spatial frequency must be non-negative")
    defocus = params.defocus_um * 1e4
    lam = params.wavelength_pm * 1e-2
    cs = params.cs_mm * 1e7
    phase = -np.pi * (defocus * r_arr**2 - cs * lam**3 * r_arr**4 / 2.0) - params.amplitude_contrast
    value = np.sin(phase) * np.exp(-((r_arr / (2.0 * params.b_factor)) ** 2))
    return value if r_arr.ndim else float(value)


def ctf_on_disk(params: CtfParams, grid: DiskGrid) -> np.ndarray:
    """CTF sampled at every disk point, r = ||k|| / (N * pixel_size)."""
    r = grid.radii() / (grid.n * params.pixel_size)
    return np.asarray(ctf_eval(params, r))


@dataclass(frozen=True)
class SliceStack:
    """Truncated Fourier slices of M images plus their imaging geometry.

    ``values[k, m]`` is the Fourier coefficient of image ``m`` at disk point
    ``k`` (ordering per ``grid.points``).
    """

    n: int
    m: int
    grid: DiskGrid
    values: np.ndarray            # (P, M) complex128
    rotations: tuple              # M Rotation
    defocus_group: np.ndarray     # (M,) int
    ctfs: tuple = field(default=())  # one CtfParams per group, empty = unit response

    def __post_init__(self):
        _require(self.values.shape == (self.grid.count, self.m), "values must be (P, M)")
        _require(bool(np.all(np.isfinite(self.values.view(np.float64)))), "values must be finite")
        _require(len(self.rotations) == self.m, "need one rotation per image")
        _require(len(self.defocus_group) == self.m, "need one group id per image")
        if len(self.ctfs) > 0:
            _require(int(np.max(self.defocus_group)) < len(self.ctfs), "group id out of range")
