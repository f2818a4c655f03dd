"""Hot inner loops: Kaiser-Bessel spreading and interpolation on a fine grid.

Two interchangeable backends implement the same arithmetic:

* ``*_numba`` -- numba @njit loops (default when numba imports cleanly),
* ``*_numpy`` -- batched vectorized numpy (fallback).

Set ``FIRM_DISABLE_NUMBA=1`` to force the numpy path.  The type-2 gather
parallelizes over points, which keeps results bit-identical for any thread
count; the type-1 scatter runs in a fixed accumulation order for the same
reason.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("FIRM_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _ENV_FLAG not in ("", "0", "false")

_NP_BATCH = 4096  # points per vectorized batch; bounds scratch memory


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def i0_numpy(x: np.ndarray) -> np.ndarray:
    """Modified Bessel I0 by its power series (monotone terms, no cancellation)."""
    t = 0.25 * np.asarray(x, dtype=np.float64) ** 2
    term = np.ones_like(t)
    acc = np.ones_like(t)
    k = 1
    while True:
        term = term * t / (k * k)
        acc += term
        k += 1
        if term.max(initial=0.0) <= 1e-17 * acc.min(initial=1.0) or k > 500:
            break
    return acc


def _kb_axis_weights_numpy(z0, x, width, beta):
    # (B, width) kernel values at integer offsets from the point coordinate
    u = (z0[:, None] + np.arange(width)[None, :]) - x[:, None]
    s = 1.0 - (u / (0.5 * width)) ** 2
    out = np.ones_like(s)
    pos = s > 0
    out[pos] = i0_numpy(beta * np.sqrt(s[pos]))
    return out


def spread_numpy(points, values, n_fine, width, beta, grid):
    """Scatter point values onto the (n_fine)^3 complex grid in point order."""
    scale = n_fine / (2.0 * np.pi)
    half = 0.5 * width
    offs = np.arange(width)
    flat = grid.ravel()
    for lo in range(0, points.shape[0], _NP_BATCH):
        p = points[lo:lo + _NP_BATCH] * scale
        v = values[lo:lo + _NP_BATCH]
        z0 = np.ceil(p - half).astype(np.int64)
        w1 = _kb_axis_weights_numpy(z0[:, 0], p[:, 0], width, beta)
        w2 = _kb_axis_weights_numpy(z0[:, 1], p[:, 1], width, beta)
        w3 = _kb_axis_weights_numpy(z0[:, 2], p[:, 2], width, beta)
        i1 = (z0[:, 0, None] + offs) % n_fine
        i2 = (z0[:, 1, None] + offs) % n_fine
        i3 = (z0[:, 2, None] + offs) % n_fine
        idx = (
            (i1[:, :, None, None] * n_fine + i2[:, None, :, None]) * n_fine
            + i3[:, None, None, :]
        ).ravel()
        w = (
            v[:, None, None, None]
            * w1[:, :, None, None]
            * w2[:, None, :, None]
            * w3[:, None, None, :]
        ).ravel()
        flat += np.bincount(idx, weights=w.real, minlength=flat.size)
        flat += 1j * np.bincount(idx, weights=w.imag, minlength=flat.size)


def interp_numpy(points, grid, n_fine, width, beta, out):
    """Gather grid values at each point with Kaiser-Bessel weights."""
    scale = n_fine / (2.0 * np.pi)
    half = 0.5 * width
    offs = np.arange(width)
    flat = grid.ravel()
    for lo in range(0, points.shape[0], _NP_BATCH):
        p = points[lo:lo + _NP_BATCH] * scale
        z0 = np.ceil(p - half).astype(np.int64)
        w1 = _kb_axis_weights_numpy(z0[:, 0], p[:, 0], width, beta)
        w2 = _kb_axis_weights_numpy(z0[:, 1], p[:, 1], width, beta)
        w3 = _kb_axis_weights_numpy(z0[:, 2], p[:, 2], width, beta)
        i1 = (z0[:, 0, None] + offs) % n_fine
        i2 = (z0[:, 1, None] + offs) % n_fine
        i3 = (z0[:, 2, None] + offs) % n_fine
        idx = (
            (i1[:, :, None, None] * n_fine + i2[:, None, :, None]) * n_fine
            + i3[:, None, None, :]
        )
        vals = flat[idx]
        out[lo:lo + _NP_BATCH] = np.einsum(
            "jabc,ja,jb,jc->j", vals, w1, w2, w3, optimize=True
        )


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

HAVE_NUMBA = False
if not NUMBA_DISABLED:
    try:
        import numba
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - environment without numba
        HAVE_NUMBA = False

if HAVE_NUMBA:

    @njit(cache=True)
    def _i0_scalar(x):
        t = 0.25 * x * x
        term = 1.0
        acc = 1.0
        k = 1
        while term > 1e-17 * acc and k < 500:
            term *= t / (k * k)
            acc += term
            k += 1
        return acc

    @njit(cache=True)
    def _axis_weights(z0, x, width, beta, w):
        half = 0.5 * width
        for a in range(width):
            u = (z0 + a) - x
            s = 1.0 - (u / half) ** 2
            w[a] = _i0_scalar(beta * np.sqrt(s)) if s > 0.0 else 1.0

    @njit(cache=True, fastmath=True)
    def spread_numba(points, values, n_fine, width, beta, grid):
        half = 0.5 * width
        scale = n_fine / (2.0 * np.pi)
        w1 = np.empty(width)
        w2 = np.empty(width)
        w3 = np.empty(width)
        for j in range(points.shape[0]):
            x1 = points[j, 0] * scale
            x2 = points[j, 1] * scale
            x3 = points[j, 2] * scale
            z1 = int(np.ceil(x1 - half))
            z2 = int(np.ceil(x2 - half))
            z3 = int(np.ceil(x3 - half))
            _axis_weights(z1, x1, width, beta, w1)
            _axis_weights(z2, x2, width, beta, w2)
            _axis_weights(z3, x3, width, beta, w3)
            v = values[j]
            for a in range(width):
                i1 = (z1 + a) % n_fine
                va = v * w1[a]
                for b in range(width):
                    i2 = (z2 + b) % n_fine
                    vb = va * w2[b]
                    for c in range(width):
                        i3 = (z3 + c) % n_fine
                        grid[i1, i2, i3] += vb * w3[c]

    @njit(cache=True, fastmath=True, parallel=True)
    def interp_numba(points, grid, n_fine, width, beta, out):
        half = 0.5 * width
        scale = n_fine / (2.0 * np.pi)
        for j in prange(points.shape[0]):
            w1 = np.empty(width)
            w2 = np.empty(width)
            w3 = np.empty(width)
            x1 = points[j, 0] * scale
            x2 = points[j, 1] * scale
            x3 = points[j, 2] * scale
            z1 = int(np.ceil(x1 - half))
            z2 = int(np.ceil(x2 - half))
            z3 = int(np.ceil(x3 - half))
            _axis_weights(z1, x1, width, beta, w1)
            _axis_weights(z2, x2, width, beta, w2)
            _axis_weights(z3, x3, width, beta, w3)
            acc = 0.0 + 0.0j
            for a in range(width):
                i1 = (z1 + a) % n_fine
                for b in range(width):
                    wab = w1[a] * w2[b]
                    i2 = (z2 + b) % n_fine
                    for c in range(width):
                        i3 = (z3 + c) % n_fine
                        acc += grid[i1, i2, i3] * (wab * w3[c])
            out[j] = acc

    def set_threads(n: int) -> None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))

    spread = spread_numba
    interp = interp_numba
else:
    def set_threads(n: int) -> None:  # numpy path is single threaded
        return

    spread = spread_numpy
    interp = interp_numpy

BACKEND = "numba" if HAVE_NUMBA else "numpy"
