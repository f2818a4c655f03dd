"""Fourier shell correlation between volumes, with missing-cone masks.

Shells follow the half-open predicate
``0.5 + (i-1) + eps <= ||j|| < 0.5 + i + eps`` with ``eps = 1e-4`` over the
centered frequency grid, for shell indices 1 .. N/2-1.  Shells without
masked voxels (or with vanishing denominator) are reported absent rather
than zero.  Accumulation uses integer-keyed binning in a fixed order, so
results are run-to-run identical and cone partitions add exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import Volume, _require

SHELL_EPS = 1e-4


@dataclass(frozen=True)
class FscCurve:
    """Per-shell statistics; ``value`` is NaN where a shell is absent."""

    n: int
    pixel_size: float
    shell_index: np.ndarray   # (S,) int, 1 .. N/2-1
    frequency: np.ndarray     # (S,) float, i / (N * pixel_size)
    value: np.ndarray         # (S,) float, NaN = absent
    voxel_count: np.ndarray   # (S,) int
    numerator: np.ndarray     # (S,) float, Re sum F1 conj(F2) over the shell
    power1: np.ndarray        # (S,) float, sum |F1|^2
    power2: np.ndarray        # (S,) float, sum |F2|^2

    def present(self) -> np.ndarray:
        return ~np.isnan(self.value)


@dataclass(frozen=True)
class ConeMask:
    """Indicator of the double cone around the z-axis on the centered grid."""

    n: int
    half_angle_deg: float
    indicator: np.ndarray     # (N, N, N) bool, index j = position - N/2

    def __post_init__(self):
        _require(self.indicator.shape == (self.n,) * 3, "indicator shape mismatch")


def missing_cone_mask(n: int, tilt_deg: float) -> ConeMask:
    """Double cone of half-angle (90 - tilt) degrees; the origin is excluded."""
    _require(0 < tilt_deg < 90, "tilt must lie strictly between 0 and 90 degrees")
    half_angle = 90.0 - tilt_deg
    j = np.arange(n) - n // 2
    j1, j2, j3 = np.meshgrid(j, j, j, indexing="ij")
    radius = np.sqrt(j1**2 + j2**2 + j3**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_angle = np.abs(j3) / np.where(radius > 0, radius, 1.0)
    indicator = (cos_angle > math.cos(math.radians(half_angle))) & (radius > 0)
    return ConeMask(n=n, half_angle_deg=half_angle, indicator=indicator)


def _centered_spectra(v1: Volume, v2: Volume):
    _require(v1.n == v2.n, "volumes must share a side length")
    _require(v1.pixel_size == v2.pixel_size, "volumes must share a pixel size")
    f1 = np.fft.fftshift(np.fft.fftn(v1.data))
    f2 = np.fft.fftshift(np.fft.fftn(v2.data))
    return f1, f2


def _shell_map(n: int) -> np.ndarray:
    """Shell index per voxel (0 where outside every shell)."""
    j = np.arange(n) - n // 2
    j1, j2, j3 = np.meshgrid(j, j, j, indexing="ij")
    radius = np.sqrt((j1**2 + j2**2 + j3**2).astype(np.float64))
    idx = np.floor(radius - 0.5 - SHELL_EPS).astype(np.int64) + 1
    idx[(idx < 1) | (idx > n // 2 - 1)] = 0
    return idx


def _binned_sums(f1, f2, keys, n_bins):
    prod = f1 * np.conj(f2)
    num_re = np.bincount(keys.ravel(), weights=prod.real.ravel(), minlength=n_bins)
    num_im = np.bincount(keys.ravel(), weights=prod.imag.ravel(), minlength=n_bins)
    p1 = np.bincount(keys.ravel(), weights=(f1.real**2 + f1.imag**2).ravel(), minlength=n_bins)
    p2 = np.bincount(keys.ravel(), weights=(f2.real**2 + f2.imag**2).ravel(), minlength=n_bins)
    counts = np.bincount(keys.ravel(), minlength=n_bins)
    return num_re, num_im, p1, p2, counts


def _finalize(n, pixel_size, num_re, num_im, p1, p2, counts) -> FscCurve:
    shells = np.arange(1, n // 2)
    scale = math.sqrt(max(p1.max(initial=0.0), 1e-300) * max(p2.max(initial=0.0), 1e-300))
    _require(bool(np.all(np.abs(num_im[shells]) <= 1e-10 * scale + 1e-300)),
             "shell numerators have a non-negligible imaginary part")
    present = (counts[shells] > 0) & (p1[shells] > 0) & (p2[shells] > 0)
    value = np.full(shells.size, np.nan)
    a = p1[shells][present]
    b = p2[shells][present]
    denom = np.where(a == b, a, np.sqrt(a * b))  # equal powers: exact self-correlation
    value[present] = num_re[shells][present] / denom
    return FscCurve(
        n=n,
        pixel_size=pixel_size,
        shell_index=shells,
        frequency=shells / (n * pixel_size),
        value=value,
        voxel_count=counts[shells].astype(np.int64),
        numerator=num_re[shells],
        power1=p1[shells],
        power2=p2[shells],
    )


def fsc(v1: Volume, v2: Volume, mask: ConeMask | None = None,
        mode: str = "exclude") -> FscCurve:
    """Shell correlation of two volumes, optionally restricted by a cone mask.

    ``mode="exclude"`` keeps voxels outside the cone, ``"within"`` keeps
    the cone interior.
    """
    _require(mode in ("exclude", "within"), "mode must be 'exclude' or 'within'")
    f1, f2 = _centered_spectra(v1, v2)
    keys = _shell_map(v1.n)
    if mask is not None:
        _require(mask.n == v1.n, "mask side does not match volumes")
        keep = ~mask.indicator if mode == "exclude" else mask.indicator
        keys = np.where(keep, keys, 0)
    sums = _binned_sums(f1, f2, keys, v1.n // 2)
    return _finalize(v1.n, v1.pixel_size, *sums)


def fsc_cone_partition(v1: Volume, v2: Volume, tilt_deg: float):
    """(all, exclude, within) curves with exactly additive shell sums.

    All three come from one pass with combined (shell, region) keys; the
    unmasked sums are formed as region sums added pairwise, so the
    partition identity holds exactly in floating point.
    """
    mask = missing_cone_mask(v1.n, tilt_deg)
    f1, f2 = _centered_spectra(v1, v2)
    shells = _shell_map(v1.n)
    n_bins = v1.n // 2
    keys = shells * 2 + mask.indicator
    keys[shells == 0] = 0
    num_re, num_im, p1, p2, counts = _binned_sums(f1, f2, keys, 2 * n_bins)

    def pick(region):
        sl = slice(region, None, 2)
        return num_re[sl], num_im[sl], p1[sl], p2[sl], counts[sl]

    ex, wi = pick(0), pick(1)
    total = tuple(a + b for a, b in zip(ex, wi))
    curves = tuple(
        _finalize(v1.n, v1.pixel_size, *parts) for parts in (total, ex, wi)
    )
    return curves


def write_fsc_csv(curve: FscCurve, path: str) -> None:
    """CSV: shell_index, spatial_freq_inv_angstrom, fsc, voxel_count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shell_index", "spatial_freq_inv_angstrom", "fsc", "voxel_count"])
        for i in range(curve.shell_index.size):
            val = curve.value[i]
            writer.writerow([
                int(curve.shell_index[i]),
                repr(float(curve.frequency[i])),
                "" if np.isnan(val) else repr(float(val)),
                int(curve.voxel_count[i]),
            ])
