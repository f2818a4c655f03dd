"""Conjugate gradients on the normal equations, with residual bookkeeping.

Iteration count is the regularization parameter here: the solver runs a
fixed number of steps from the all-zero volume and records the
normal-equation residual and quadratic objective each iteration, plus the
(expensive) data residual on request.  ``classify_phases`` segments the
log-residual curve into its dropping / transition / level phases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import NumericalFailure, Volume, _require
from .projector import ProjectionOperator, forward
from .toeplitz import ToeplitzKernel, apply_normal


@dataclass(frozen=True)
class CgOptions:
    max_iters: int = 30
    record_data_residual_every: int = 0   # 0 = never
    objective_tolerance: float = 0.0      # 0 = run all iterations

    def __post_init__(self):
        _require(self.max_iters >= 1, "max_iters must be >= 1")


@dataclass
class CgTrace:
    iterations: list = field(default_factory=list)       # 1-based iteration index
    normal_residual: list = field(default_factory=list)  # ||A*b - K x_k||
    objective: list = field(default_factory=list)        # 0.5 <x,Kx> - <x, A*b>
    data_residual: list = field(default_factory=list)    # ||b - A x_k|| or None
    phases: list = field(default_factory=list)           # labels, filled on demand


def cg_solve(
    kernel: ToeplitzKernel,
    rhs: np.ndarray,
    opts: CgOptions,
    forward_for_residual: ProjectionOperator | None = None,
    measured_values: np.ndarray | None = None,
    pixel_size: float = 1.0,
) -> tuple[Volume, CgTrace]:
    """Minimize ||b - A(V)||^2 through K x = A*b with K applied by FFTs.

    ``rhs`` is the back-projected data; its imaginary part must be noise
    level (<= 1e-6 relative) and is discarded, so the iterates stay real.
    Recording the data residual needs both the forward operator and the
    measured slice values.
    """
    n = kernel.n
    _require(rhs.shape == (n,) * 3, "rhs side does not match kernel")
    rhs = np.asarray(rhs)
    if np.iscomplexobj(rhs):
        scale = np.linalg.norm(rhs)
        _require(
            scale == 0.0 or np.linalg.norm(rhs.imag) <= 1e-6 * scale,
            "rhs has a non-negligible imaginary part",
        )
        rhs = np.ascontiguousarray(rhs.real)
    every = opts.record_data_residual_every
    if every > 0:
        _require(
            forward_for_residual is not None and measured_values is not None,
            "data residual needs the forward operator and measured values",
        )

    trace = CgTrace()
    x = np.zeros_like(rhs)
    if np.linalg.norm(rhs) == 0.0:
        return Volume(n=n, pixel_size=pixel_size, data=x), trace

    r = rhs.copy()
    p = r.copy()
    rr = float(np.vdot(r, r).real)
    flat_count = 0
    prev_obj = 0.0
    for k in range(1, opts.max_iters + 1):
        kp = apply_normal(kernel, p).real
        pkp = float(np.vdot(p, kp).real)
        if not np.isfinite(pkp) or not np.isfinite(rr):
            raise NumericalFailure(f"non-finite quantity at iteration {k}")
        if pkp <= 0.0:
            break  # numerically exhausted the range of K
        alpha = rr / pkp
        x += alpha * p
        r -= alpha * kp
        rr_next = float(np.vdot(r, r).real)
        if not np.isfinite(rr_next):
            raise NumericalFailure(f"non-finite residual at iteration {k}")

        # <x, Kx> = <x, rhs - r> exactly in exact arithmetic
        obj = -0.5 * (float(np.vdot(x, rhs).real) + float(np.vdot(x, r).real))
        trace.iterations.append(k)
        trace.normal_residual.append(float(np.sqrt(rr_next)))
        trace.objective.append(obj)
        if every > 0 and (k % every == 0 or k == opts.max_iters):
            resid = measured_values - forward(forward_for_residual, x)
            trace.data_residual.append(float(np.linalg.norm(resid)))
        else:
            trace.data_residual.append(None)

        if opts.objective_tolerance > 0 and k > 1:
            rel_drop = (prev_obj - obj) / max(abs(obj), 1e-300)
            flat_count = flat_count + 1 if rel_drop < opts.objective_tolerance else 0
            if flat_count >= 3:
                break
        prev_obj = obj
        if rr_next == 0.0:
            break
        p = r + (rr_next / rr) * p
        rr = rr_next

    if len(trace.normal_residual) >= 3:
        trace.phases = classify_phases(trace)
    else:
        trace.phases = ["" for _ in trace.iterations]
    return Volume(n=n, pixel_size=pixel_size, data=x), trace


# ---------------------------------------------------------------------------
# residual-curve phase segmentation
# ---------------------------------------------------------------------------

def _segment_stats(prefix, a, b):
    """Least-squares line SSE over indices [a, b) from prefix sums."""
    if b - a < 3:
        return 0.0, 0.0
    c, sx, sy, sxx, sxy, syy = (prefix[key][b] - prefix[key][a] for key in
                                ("c", "sx", "sy", "sxx", "sxy", "syy"))
    denom = c * sxx - sx * sx
    slope = (c * sxy - sx * sy) / denom
    sse = (syy - sy * sy / c) - slope * slope * (sxx - sx * sx / c)
    return max(sse, 0.0), slope


def classify_phases(trace: CgTrace) -> list:
    """Label each iteration dropping / transition / level.

    Fits a three-piece linear model to log10 residuals by exhaustive
    breakpoint search (ties resolved toward late breakpoints, so clean
    geometric decay collapses to a single segment).  Labels are advisory.
    """
    y = np.log10(np.maximum(np.asarray(trace.normal_residual, dtype=np.float64), 1e-300))
    count = y.size
    _require(count >= 3, "need at least 3 recorded residuals")
    xs = np.arange(count, dtype=np.float64)
    prefix = {
        "c": np.concatenate([[0.0], np.cumsum(np.ones(count))]),
        "sx": np.concatenate([[0.0], np.cumsum(xs)]),
        "sy": np.concatenate([[0.0], np.cumsum(y)]),
        "sxx": np.concatenate([[0.0], np.cumsum(xs * xs)]),
        "sxy": np.concatenate([[0.0], np.cumsum(xs * y)]),
        "syy": np.concatenate([[0.0], np.cumsum(y * y)]),
    }
    best = None
    for b1 in range(count + 1):
        sse1, slope1 = _segment_stats(prefix, 0, b1)
        for b2 in range(b1, count + 1):
            sse2, slope2 = _segment_stats(prefix, b1, b2)
            sse3, slope3 = _segment_stats(prefix, b2, count)
            key = (sse1 + sse2 + sse3, -(b1 + b2), -b1)
            if best is None or key < best[0]:
                best = (key, (b1, b2), (slope1, slope2, slope3))
    (_, (b1, b2), _) = best

    segments = []
    for a, b in ((0, b1), (b1, b2), (b2, count)):
        if b - a > 0:
            segments.append((a, b, _fit_slope(xs[a:b], y[a:b])))
    steepest = min(s for _, _, s in segments)
    labels = []
    for a, b, s in segments:
        if abs(s) < max(0.01, 0.05 * abs(steepest)):
            label = "level"
        elif steepest < 0 and s <= 0.5 * steepest:
            label = "dropping"
        else:
            label = "transition"
        labels.extend([label] * (b - a))
    return labels


def _fit_slope(x, y):
    if x.size < 2:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


def write_trace_csv(trace: CgTrace, path: str) -> None:
    """Residual log: iter, normal_residual, objective, data_residual, phase."""
    phases = trace.phases or ["" for _ in trace.iterations]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "normal_residual", "objective", "data_residual", "phase"])
        for i, it in enumerate(trace.iterations):
            data_res = trace.data_residual[i]
            writer.writerow([
                it,
                repr(trace.normal_residual[i]),
                repr(trace.objective[i]),
                "" if data_res is None else repr(data_res),
                phases[i],
            ])
