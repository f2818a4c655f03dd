"""Command-line pipeline: simulate -> reconstruct -> evaluate -> check.

File formats (all raw arrays little-endian):

* ``images.f32``  -- float32, image-major, row-major within an image
* ``truth.f32`` / ``recon.f32`` -- float32 volume, x fastest, then y, then z,
  lowest centered index first
* ``manifest.json`` -- dataset geometry and file references
* ``residuals.csv`` / ``timing.json`` / FSC CSVs -- reconstruction outputs
* kernel cache -- raw float64 spectrum plus a JSON sidecar

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import _gridding
from .core import (CacheMismatchError, CtfParams, Volume, build_disk_grid,
                   rotation_from_euler_zyz)
from .fsc import fsc, fsc_cone_partition, write_fsc_csv
from .projector import adjoint, build_operator, forward, slices_from_images
from .sim import DatasetSpec, default_phantom, make_dataset
from .solver import CgOptions, cg_solve, write_trace_csv
from .toeplitz import (compute_kernel, embed_circulant, kernel_metadata,
                       load_kernel, save_kernel)

FIG2_DEFOCUS_UM = (1.4, 1.75, 2.0)
FIG2_CS_MM = 2.0
FIG2_WAVELENGTH_PM = 2.51
FIG2_AMPLITUDE_CONTRAST = 0.07
FIG2_B_FACTOR = 100.0
DEFAULT_PIXEL_SIZE = 3.36


def default_ctf_groups(n_groups: int, pixel_size: float) -> tuple:
    """Reference defocus series; beyond three groups the range is resampled."""
    if n_groups <= len(FIG2_DEFOCUS_UM):
        defoci = FIG2_DEFOCUS_UM[:n_groups]
    else:
        defoci = np.linspace(FIG2_DEFOCUS_UM[0], FIG2_DEFOCUS_UM[-1], n_groups)
    return tuple(
        CtfParams(
            defocus_um=float(d),
            cs_mm=FIG2_CS_MM,
            wavelength_pm=FIG2_WAVELENGTH_PM,
            amplitude_contrast=FIG2_AMPLITUDE_CONTRAST,
            b_factor=FIG2_B_FACTOR,
            pixel_size=pixel_size,
        )
        for d in defoci
    )


# ---------------------------------------------------------------------------
# raw file helpers (atomic writes: temp file + rename)
# ---------------------------------------------------------------------------

def _atomic_bytes(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_volume_f32(path: str, volume: Volume) -> None:
    _atomic_bytes(path, volume.data.astype("<f4").tobytes(order="F"))


def read_volume_f32(path: str, pixel_size: float) -> Volume:
    raw = np.fromfile(path, dtype="<f4")
    n = round(raw.size ** (1.0 / 3.0))
    if n**3 != raw.size:
        raise ValueError(f"{path}: size {raw.size} is not a cube")
    data = raw.astype(np.float64).reshape((n, n, n), order="F")
    return Volume(n=n, pixel_size=pixel_size, data=data)


def write_images_f32(path: str, images: np.ndarray) -> None:
    _atomic_bytes(path, np.ascontiguousarray(images, dtype="<f4").tobytes())


def read_images_f32(path: str, m: int, n: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != m * n * n:
        raise ValueError(f"{path}: expected {m}x{n}x{n} samples, found {raw.size}")
    return raw.astype(np.float64).reshape(m, n, n)


def _snr_to_json(snr: float):
    return "inf" if math.isinf(snr) else snr


def _snr_from_json(value) -> float:
    return math.inf if value == "inf" else float(value)


def write_manifest(path: str, spec: DatasetSpec, euler: np.ndarray,
                   groups: np.ndarray, files: dict) -> None:
    doc = {
        "n": spec.n,
        "m": spec.m,
        "pixel_size": spec.pixel_size,
        "tilt_deg": spec.tilt_deg,
        "snr": _snr_to_json(spec.snr),
        "seed": spec.seed,
        "euler_zyz_deg": [[float(a) for a in row] for row in euler],
        "defocus_group": [int(g) for g in groups],
        "ctf_groups": [
            {
                "defocus_um": c.defocus_um,
                "cs_mm": c.cs_mm,
                "wavelength_pm": c.wavelength_pm,
                "amplitude_contrast": c.amplitude_contrast,
                "b_factor": c.b_factor,
                "pixel_size": c.pixel_size,
            }
            for c in spec.defocus_groups
        ],
        "files": files,
    }
    payload = json.dumps(doc, indent=2, sort_keys=True).encode()
    _atomic_bytes(path, payload)


def load_manifest(dataset_dir: str) -> dict:
    path = os.path.join(dataset_dir, "manifest.json")
    with open(path) as fh:
        doc = json.load(fh)
    m, n = doc["m"], doc["n"]
    for key in ("euler_zyz_deg", "defocus_group"):
        if len(doc[key]) != m:
            raise ValueError(f"manifest {key} length does not match m={m}")
    images_path = os.path.join(dataset_dir, doc["files"]["images"])
    if os.path.getsize(images_path) != m * n * n * 4:
        raise ValueError("images file size does not match manifest")
    truth_path = os.path.join(dataset_dir, doc["files"]["truth"])
    if os.path.getsize(truth_path) != n**3 * 4:
        raise ValueError("truth file size does not match manifest")
    return doc


def manifest_ctfs(doc: dict) -> tuple:
    return tuple(CtfParams(**entry) for entry in doc["ctf_groups"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = DatasetSpec(
        n=args.n,
        m=args.m,
        tilt_deg=args.tilt,
        snr=args.snr,
        defocus_groups=default_ctf_groups(args.groups, args.pixel_size),
        seed=args.seed,
        pixel_size=args.pixel_size,
    )
    dataset = make_dataset(spec, default_phantom(args.n))
    os.makedirs(args.out, exist_ok=True)
    write_images_f32(os.path.join(args.out, "images.f32"), dataset.images)
    write_volume_f32(os.path.join(args.out, "truth.f32"), dataset.truth)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        spec,
        dataset.euler_zyz_deg,
        dataset.stack.defocus_group,
        {"images": "images.f32", "truth": "truth.f32"},
    )
    print(f"wrote dataset: {args.out} (n={args.n}, m={args.m})")
    return 0


def cmd_reconstruct(args) -> int:
    doc = load_manifest(args.dataset)
    n, m = doc["n"], doc["m"]
    pixel_size = doc["pixel_size"]
    images = read_images_f32(os.path.join(args.dataset, doc["files"]["images"]), m, n)
    rotations = [rotation_from_euler_zyz(*angles) for angles in doc["euler_zyz_deg"]]
    groups = np.asarray(doc["defocus_group"], dtype=np.int64)
    ctfs = manifest_ctfs(doc)
    grid = build_disk_grid(n)

    timing = {}
    t0 = time.perf_counter()
    values = slices_from_images(images, grid)
    timing["fft"] = time.perf_counter() - t0

    op = build_operator(grid, rotations, ctfs, groups, accuracy=args.nufft_eps)
    t0 = time.perf_counter()
    rhs = adjoint(op, values)
    timing["backprojection"] = time.perf_counter() - t0

    metadata = kernel_metadata(rotations, ctfs, groups, n, args.nufft_eps)
    t0 = time.perf_counter()
    kernel = None
    if args.kernel_cache and os.path.exists(args.kernel_cache):
        kernel = load_kernel(args.kernel_cache, metadata)
    if kernel is None:
        ker = compute_kernel(rotations, ctfs, groups, grid,
                             accuracy=args.nufft_eps, plan=op.plan)
        kernel = embed_circulant(ker, metadata)
        if args.kernel_cache:
            save_kernel(kernel, args.kernel_cache)
    timing["kernel"] = time.perf_counter() - t0

    opts = CgOptions(max_iters=args.iters,
                     record_data_residual_every=args.residual_every)
    t0 = time.perf_counter()
    volume, trace = cg_solve(kernel, rhs, opts, forward_for_residual=op,
                             measured_values=values, pixel_size=pixel_size)
    cg_total = time.perf_counter() - t0
    iters_done = max(len(trace.iterations), 1)
    timing["cg_total"] = cg_total
    timing["cg_iterations"] = len(trace.iterations)
    timing["per_iteration"] = cg_total / iters_done

    os.makedirs(args.out, exist_ok=True)
    write_volume_f32(os.path.join(args.out, "recon.f32"), volume)
    write_trace_csv(trace, os.path.join(args.out, "residuals.csv"))
    _atomic_bytes(os.path.join(args.out, "timing.json"),
                  json.dumps(timing, indent=2, sort_keys=True).encode())
    print(f"wrote reconstruction: {args.out} ({len(trace.iterations)} iterations)")
    return 0


def cmd_evaluate(args) -> int:
    recon = read_volume_f32(args.recon, args.pixel_size)
    truth = read_volume_f32(args.truth, args.pixel_size)
    if recon.n != truth.n:
        raise ValueError("reconstruction and truth have different sides")
    if args.tilt is None:
        write_fsc_csv(fsc(recon, truth), args.out_prefix + "fsc_all.csv")
        print(f"wrote {args.out_prefix}fsc_all.csv")
        return 0
    curve_all, curve_ex, curve_in = fsc_cone_partition(recon, truth, args.tilt)
    gap = np.abs(curve_ex.numerator + curve_in.numerator - curve_all.numerator).max()
    if gap != 0.0:
        raise RuntimeError("cone partition sums failed to add exactly")
    for curve, name in ((curve_all, "fsc_all.csv"),
                        (curve_ex, "fsc_exclude_cone.csv"),
                        (curve_in, "fsc_within_cone.csv")):
        write_fsc_csv(curve, args.out_prefix + name)
    print(f"wrote {args.out_prefix}{{fsc_all,fsc_exclude_cone,fsc_within_cone}}.csv")
    return 0


def cmd_check(args) -> int:
    """Small-size diagnostic suite; exits nonzero if any bound is exceeded."""
    from .sim import conical_tilt_rotations
    from .nufft import dft_direct_type1, dft_direct_type2
    from .toeplitz import apply_normal

    rng = np.random.default_rng(args.seed)
    n, m = args.n, args.m
    grid = build_disk_grid(n)
    rotations = conical_tilt_rotations(m, 60.0, args.seed)
    ctfs = default_ctf_groups(min(3, m), DEFAULT_PIXEL_SIZE)
    groups = rng.integers(0, len(ctfs), size=m)
    op = build_operator(grid, rotations, ctfs, groups, accuracy=args.nufft_eps)

    checks = []

    worst = 0.0
    for _ in range(5):
        v = rng.standard_normal((n, n, n)) + 1j * rng.standard_normal((n, n, n))
        g = rng.standard_normal((grid.count, m)) + 1j * rng.standard_normal((grid.count, m))
        av = forward(op, v)
        atg = adjoint(op, g)
        gap = abs(np.sum(av * np.conj(g)) - np.sum(v * np.conj(atg)))
        worst = max(worst, gap / (np.linalg.norm(av) * np.linalg.norm(g)))
    checks.append(("adjointness", worst, 1e-5))

    ker = compute_kernel(rotations, ctfs, groups, grid,
                         accuracy=args.nufft_eps, plan=op.plan)
    kernel = embed_circulant(ker)
    v = rng.standard_normal((n, n, n)) + 1j * rng.standard_normal((n, n, n))
    ata = adjoint(op, forward(op, v))
    conv = apply_normal(kernel, v)
    checks.append(("toeplitz_equivalence",
                   np.linalg.norm(conv - ata) / np.linalg.norm(ata), 1e-5))

    if 2 * n <= 32 and op.plan.count <= 10_000:
        weights = op.ctf_per_point() ** 2
        brute = dft_direct_type1(op.plan, weights.astype(np.complex128), 2 * n)[1:, 1:, 1:]
        checks.append(("kernel_vs_direct",
                       np.linalg.norm(ker - brute) / np.linalg.norm(brute), 1e-5))
        sym = np.abs(brute[::-1, ::-1, ::-1] - np.conj(brute)).max()
        checks.append(("kernel_symmetry_direct", sym / np.abs(brute).max(), 1e-10))
    sym = np.abs(ker[::-1, ::-1, ::-1] - np.conj(ker)).max()
    checks.append(("kernel_symmetry", sym / np.abs(ker).max(), 1e-10))

    rhs = adjoint(op, forward(op, rng.standard_normal((n, n, n))))
    _, trace = cg_solve(kernel, rhs, CgOptions(max_iters=25))
    obj = np.asarray(trace.objective)
    slack = 1e-12 * max(1.0, np.abs(obj).max())
    rise = float((obj[1:] - obj[:-1]).max(initial=-np.inf))
    checks.append(("cg_objective_monotone", max(rise, 0.0), slack))

    failed = False
    for name, measured, bound in checks:
        ok = measured <= bound
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: measured={measured:.3e} bound={bound:.3e}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _float_or_inf(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="firm",
        description="Fourier-based iterative 3D reconstruction pipeline",
    )
    parser.add_argument("--threads", type=int, default=0,
                        help="bound internal parallelism (0 = all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic tilted dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tilt", type=float, default=60.0)
    p.add_argument("--snr", type=_float_or_inf, default=1.0)
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pixel-size", type=float, default=DEFAULT_PIXEL_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--nufft-eps", type=float, default=1e-6)
    p.add_argument("--kernel-cache", default=None)
    p.add_argument("--residual-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="shell correlation against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tilt", type=float, default=None,
                   help="acquisition tilt; enables missing-cone masks")
    p.add_argument("--pixel-size", type=float, default=1.0)
    p.add_argument("--out-prefix", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check", help="run the numerical diagnostics suite")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nufft-eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads > 0:
        _gridding.set_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, CacheMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
