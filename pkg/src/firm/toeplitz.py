"""Convolution-kernel representation of the normal operator.

The composition of back-projection and forward projection is constant
along index differences, so applying it to a volume is a convolution with
a (2N-1)^3 kernel.  Embedding that kernel in a (2N)^3 circulant
diagonalizes the application into two FFTs and a pointwise multiply, which
is what makes the per-iteration cost independent of the number of images.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DiskGrid, InconsistentKernelError, CacheMismatchError, _require
from .nufft import NufftPlan, make_plan, nufft_type1
from .projector import all_slice_points, ctf_on_disk

SPECTRUM_NEG_TOL = 1e-6


class KernelSpectrumWarning(UserWarning):
    """Embedded spectrum has entries below -1e-6 of its maximum."""


@dataclass(frozen=True)
class ToeplitzKernel:
    n: int
    spectrum: np.ndarray      # (2N)^3 real eigenvalues of the embedded circulant
    build_metadata: dict

    def __post_init__(self):
        _require(self.spectrum.shape == (2 * self.n,) * 3, "spectrum must be (2N)^3")


def kernel_metadata(rotations, ctfs, defocus_group, n: int, accuracy: float) -> dict:
    """Geometry fingerprint stored alongside a kernel (cache validation)."""
    digest = hashlib.sha256()
    for r in rotations:
        digest.update(np.ascontiguousarray(r.matrix, dtype=np.float64).tobytes())
    rot_hash = digest.hexdigest()
    ctf_fields = [
        (c.defocus_um, c.cs_mm, c.wavelength_pm, c.amplitude_contrast, c.b_factor, c.pixel_size)
        for c in (ctfs or ())
    ]
    return {
        "n": int(n),
        "nufft_accuracy": float(accuracy),
        "rotations_sha256": rot_hash,
        "defocus_group": [int(g) for g in defocus_group],
        "ctf_params": ctf_fields,
    }


def compute_kernel(
    rotations,
    ctfs,
    defocus_group,
    grid: DiskGrid,
    accuracy: float = 1e-6,
    plan: NufftPlan | None = None,
    exploit_symmetry: bool = True,
) -> np.ndarray:
    """Convolution kernel values on the cube -N < n < N, shape (2N-1)^3.

    Each entry is sum_m sum_k exp(i <n, R_m^T omega>) h_m(||omega||)^2,
    accumulated by volume-sized adjoint NUFFTs onto the eight N^3 octants
    of the doubled grid (phase-modulated weights shift the output window).
    With ``exploit_symmetry`` only the upper half-space is transformed and
    the rest is filled through Ker(-n) = conj(Ker(n)), which is what keeps
    the kernel cost at roughly four back-projections.
    """
    _require(len(rotations) >= 1, "at least one rotation required")
    n = grid.n
    if plan is None:
        plan = make_plan(n, all_slice_points(rotations, grid), accuracy)
    _require(plan.count == grid.count * len(rotations), "plan does not match geometry")

    groups = np.asarray(defocus_group, dtype=np.int64)
    if ctfs:
        ctf_disk = np.stack([ctf_on_disk(c, grid) for c in ctfs], axis=1)
        weights = (ctf_disk[:, groups] ** 2).T.ravel()
    else:
        weights = np.ones(plan.count)

    half = n // 2
    c3_range = (half,) if exploit_symmetry else (-half, half)
    kfull = np.zeros((2 * n,) * 3, dtype=np.complex128)
    for c3 in c3_range:
        for c1 in (-half, half):
            for c2 in (-half, half):
                shift = np.array([c1, c2, c3], dtype=np.float64)
                modulated = weights * np.exp(1j * (plan.points @ shift))
                octant = nufft_type1(plan, modulated, n)
                s1 = slice(n, 2 * n) if c1 > 0 else slice(0, n)
                s2 = slice(n, 2 * n) if c2 > 0 else slice(0, n)
                s3 = slice(n, 2 * n) if c3 > 0 else slice(0, n)
                kfull[s1, s2, s3] = octant
    if exploit_symmetry:
        # the n3 = 0 plane pairs with itself; average to make symmetry exact
        plane = kfull[1:, 1:, n]
        plane[:] = 0.5 * (plane + np.conj(plane[::-1, ::-1]))
        kfull[1:, 1:, 1:n] = np.conj(kfull[:0:-1, :0:-1, :n:-1])
    return kfull[1:, 1:, 1:]


def embed_circulant(ker: np.ndarray, build_metadata: dict | None = None) -> ToeplitzKernel:
    """Build the (2N)^3 circulant spectrum from a (2N-1)^3 kernel cube.

    The first column takes the kernel at differences 0..N-1, a padding
    plane carrying the zero-difference values, then differences 1-N..-1;
    its FFT is asserted real (Hermitian kernel) and stored realified.
    """
    _require(ker.ndim == 3 and ker.shape[0] == ker.shape[1] == ker.shape[2],
             "kernel must be a cube")
    side = ker.shape[0]
    _require(side % 2 == 1 and side >= 7, "kernel side must be 2N-1")
    n = (side + 1) // 2

    flipped = np.conj(ker[::-1, ::-1, ::-1])
    scale = np.abs(ker).max()
    sym_err = np.abs(ker - flipped).max()
    if sym_err > 1e-6 * scale:
        raise InconsistentKernelError(
            f"Hermitian symmetry violated: max error {sym_err:.3e} vs {scale:.3e} scale"
        )

    emap = np.concatenate([
        np.arange(n - 1, 2 * n - 1),   # differences 0 .. N-1
        [n - 1],                       # padding slot: zero difference
        np.arange(0, n - 1),           # differences 1-N .. -1
    ])
    column = ker[np.ix_(emap, emap, emap)]
    spectrum = np.fft.fftn(column)
    peak = np.abs(spectrum.real).max()
    imag_err = np.abs(spectrum.imag).max()
    if imag_err > 1e-8 * peak:
        raise InconsistentKernelError(
            f"spectrum not real: imaginary residue {imag_err:.3e} vs {peak:.3e} peak"
        )
    spectrum = np.ascontiguousarray(spectrum.real)
    neg = spectrum.min()
    if neg < -SPECTRUM_NEG_TOL * spectrum.max():
        warnings.warn(
            f"circulant spectrum has negative entries (min/max = {neg / spectrum.max():.3e}); "
            "the retained Toeplitz block stays positive semidefinite",
            KernelSpectrumWarning,
            stacklevel=2,
        )
    return ToeplitzKernel(n=n, spectrum=spectrum, build_metadata=dict(build_metadata or {}))


def apply_normal(kernel: ToeplitzKernel, v: np.ndarray) -> np.ndarray:
    """Apply the normal operator to an N^3 array via the embedded circulant."""
    n = kernel.n
    v = np.asarray(v)
    _require(v.shape == (n,) * 3, "input side does not match kernel")
    buf = np.zeros((2 * n,) * 3, dtype=np.complex128)
    buf[:n, :n, :n] = v
    out = np.fft.ifftn(np.fft.fftn(buf) * kernel.spectrum)
    return out[:n, :n, :n]


# ---------------------------------------------------------------------------
# kernel cache: raw float64 spectrum + JSON sidecar
# ---------------------------------------------------------------------------

def save_kernel(kernel: ToeplitzKernel, path: str) -> None:
    tmp = path + ".tmp"
    kernel.spectrum.astype("<f8").tofile(tmp)
    os.replace(tmp, path)
    sidecar = {"n": kernel.n, "metadata": kernel.build_metadata}
    tmp = path + ".json.tmp"
    with open(tmp, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    os.replace(tmp, path + ".json")


def load_kernel(path: str, expected_metadata: dict) -> ToeplitzKernel:
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    stored = sidecar.get("metadata", {})
    expected = json.loads(json.dumps(expected_metadata))  # normalize types like stored
    if stored != expected:
        raise CacheMismatchError("kernel cache metadata does not match requested geometry")
    n = int(sidecar["n"])
    spectrum = np.fromfile(path, dtype="<f8")
    _require(spectrum.size == (2 * n) ** 3, "kernel cache truncated")
    return ToeplitzKernel(
        n=n,
        spectrum=spectrum.reshape((2 * n,) * 3),
        build_metadata=stored,
    )
