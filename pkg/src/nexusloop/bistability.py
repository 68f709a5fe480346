"""Mono/bistable classification of the (power, detuning) plane and cusp location."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import MultipleTonguesError, NoCuspError
from .model import DrivePoint, PhysicalParams, _monic_scaled, cubic_coefficients, derive_params, steady_states

DISC_MARGINAL = 1e-9


def normalized_discriminant(d1, d2, d3, d4) -> float:
    """Cubic discriminant divided by the sum of its term magnitudes.

    Positive means three distinct real roots, negative one real root.  The
    polynomial is rescaled to O(1) monic form first; that only multiplies the
    discriminant by a positive constant.
    """
    if d1 == 0:
        return -1.0
    s, b, c, d = _monic_scaled(d1, d2, d3, d4)
    if s == 0:
        return 0.0
    terms = (18.0 * b * c * d, -4.0 * b**3 * d, b * b * c * c, -4.0 * c**3, -27.0 * d * d)
    scale = math.fsum(abs(t) for t in terms)
    return math.fsum(terms) / scale if scale > 0 else 0.0


def drive_discriminant(p: PhysicalParams, d: DrivePoint) -> float:
    return normalized_discriminant(*cubic_coefficients(p, d))


def classify_point(p: PhysicalParams, d: DrivePoint, dp=None, policy: str = "static"):
    """``(real_roots, stable_roots)`` at one drive point.

    ``stable_roots`` counts physical non-saddle roots by default; with
    ``policy="dynamic"`` it counts Routh-Hurwitz stable ones instead.
    """
    c = cell_counts(p, d, dp)
    return c.real_roots, (c.rh_stable if policy == "dynamic" else c.static_stable)


@dataclass(frozen=True)
class CellCounts:
    real_roots: int
    static_stable: int
    rh_stable: int
    unphysical: int
    marginal: bool
    disc: float
    roots: tuple


def cell_counts(p: PhysicalParams, d: DrivePoint, dp=None) -> CellCounts:
    states = steady_states(p, d, dp)
    disc = drive_discriminant(p, d)
    return CellCounts(
        real_roots=len(states),
        static_stable=sum(1 for s in states if s.physical and s.static_stable),
        rh_stable=sum(1 for s in states if s.physical and s.stable),
        unphysical=sum(1 for s in states if not s.physical),
        marginal=abs(disc) < DISC_MARGINAL,
        disc=disc,
        roots=tuple(s.q_s for s in states),
    )


@dataclass
class RegionMap:
    p_axis: np.ndarray
    delta_axis: np.ndarray
    cells: list  # cells[i][j] is the CellCounts at (p_axis[i], delta_axis[j])
    fold_points: list = field(default_factory=list)
    nexus: tuple | None = None

    def count_grid(self, attr: str = "real_roots") -> np.ndarray:
        return np.array([[getattr(c, attr) for c in row] for row in self.cells])


def _axis(rng, resolution):
    lo, hi = float(rng[0]), float(rng[1])
    if hi < lo:
        raise ValueError(f"empty range {rng}")
    return np.array([lo]) if hi == lo else np.linspace(lo, hi, resolution)


def _row(args):
    p, power, deltas = args
    dp = derive_params(p)
    return [cell_counts(p, DrivePoint(power, float(dl)), dp) for dl in deltas]


def worker_count() -> int:
    env = os.environ.get("NEXUSLOOP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def scan_region(p: PhysicalParams, p_range, delta_range, resolution: int = 64, workers: int | None = None) -> RegionMap:
    """Classify a grid and refine fold crossings along its edges.

    A range with equal ends gives a single-point axis.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16 per axis")
    p_axis, d_axis = _axis(p_range, resolution), _axis(delta_range, resolution)
    workers = worker_count() if workers is None else workers
    jobs = [(p, float(pw), d_axis) for pw in p_axis]
    if workers > 1 and len(jobs) * len(d_axis) >= 2048:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            cells = list(ex.map(_row, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        cells = [_row(j) for j in jobs]
    rmap = RegionMap(p_axis=p_axis, delta_axis=d_axis, cells=cells)
    rmap.fold_points = _fold_points(p, rmap)
    return rmap


def _bisect_edge(f, a, b, fa, rel_tol=1e-6):
    """Sign change of ``f`` between ``a`` and ``b``; ``fa`` is the sign at ``a``."""
    span = abs(b - a)
    while abs(b - a) > rel_tol * max(span, abs(a), abs(b), 1e-300):
        mid = 0.5 * (a + b)
        if (f(mid) > 0) == fa:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def _fold_points(p, rmap: RegionMap):
    grid = rmap.count_grid()
    pts = []
    na, nb = grid.shape
    for i in range(na):
        for j in range(nb):
            pw, dl = rmap.p_axis[i], rmap.delta_axis[j]
            if i + 1 < na and grid[i, j] != grid[i + 1, j]:
                f = lambda x, dl=dl: drive_discriminant(p, DrivePoint(x, dl))
                x = _bisect_edge(f, pw, rmap.p_axis[i + 1], grid[i, j] == 3)
                pts.append((x, float(dl)))
            if j + 1 < nb and grid[i, j] != grid[i, j + 1]:
                f = lambda y, pw=pw: drive_discriminant(p, DrivePoint(pw, y))
                y = _bisect_edge(f, dl, rmap.delta_axis[j + 1], grid[i, j] == 3)
                pts.append((float(pw), y))
    return pts


def _slice(f, xs):
    """Three-root interval of one slice, or ``None``.

    The peak of ``f`` is refined with a bounded scalar search, so tongues
    narrower than the sampling grid are still found.  More than one positive
    run on the grid raises :class:`MultipleTonguesError`.
    """
    vals = np.array([f(x) for x in xs])
    pos = vals > 0
    runs = int(np.count_nonzero(pos[1:] & ~pos[:-1]) + pos[0])
    if runs > 1:
        raise MultipleTonguesError(f"{runs} separate three-root intervals in one slice")
    k = int(np.argmax(vals))
    lo_k, hi_k = max(k - 1, 0), min(k + 1, len(xs) - 1)
    x_peak, f_peak = xs[k], vals[k]
    if hi_k > lo_k:
        span = xs[-1] - xs[0]
        res = minimize_scalar(lambda x: -f(x), bounds=(xs[lo_k], xs[hi_k]), method="bounded",
                              options={"xatol": 1e-13 * max(span, 1e-300)})
        if -res.fun > f_peak:
            x_peak, f_peak = res.x, -res.fun
    if f_peak <= 0:
        return None, x_peak
    i = k
    while i > 0 and vals[i - 1] > 0:
        i -= 1
    j = k
    while j < len(xs) - 1 and vals[j + 1] > 0:
        j += 1
    left_out = xs[i - 1] if i > 0 and vals[i] > 0 else (xs[i] if vals[i] <= 0 else None)
    right_out = xs[j + 1] if j < len(xs) - 1 and vals[j] > 0 else (xs[j] if vals[j] <= 0 else None)
    lo = xs[0] if left_out is None else _bisect_edge(f, min(left_out, x_peak), x_peak, False, 1e-12)
    hi = xs[-1] if right_out is None else _bisect_edge(f, x_peak, max(right_out, x_peak), True, 1e-12)
    return (lo, hi), x_peak


@dataclass(frozen=True)
class Cusp:
    x: float
    y: float
    x_tol: float
    y_tol: float
    max_width: float


def locate_cusp(
    coeffs, x_range, y_range, n_x: int = 400, n_y: int = 64, rel_width: float = 1e-3, rel_y: float = 1e-6
) -> Cusp:
    """Closure point of the three-root tongue of a cubic family.

    ``coeffs(x, y)`` returns the four cubic coefficients.  For each ``y`` the
    three-root interval in ``x`` is measured; the cusp is where its width
    goes to zero.  The ``y`` direction is bisected until the width drops below
    ``rel_width`` times the largest width seen and the ``y`` bracket below
    ``rel_y`` times the ``y`` span.
    """
    xs = np.linspace(x_range[0], x_range[1], n_x)
    ys = np.linspace(y_range[0], y_range[1], n_y)

    def width_at(y):
        iv, x_peak = _slice(lambda x: normalized_discriminant(*coeffs(x, y)), xs)
        return (0.0, None, x_peak) if iv is None else (iv[1] - iv[0], iv, x_peak)

    widths = [width_at(y)[0] for y in ys]
    open_ = [w > 0 for w in widths]
    flips = [k for k in range(1, n_y) if open_[k] != open_[k - 1]]
    if not flips:
        raise NoCuspError("three-root region never closes inside the search box")
    if len(flips) > 1:
        raise MultipleTonguesError(f"tongue opens/closes {len(flips)} times along y")
    max_width = max(widths)
    k = flips[0]
    y_closed, y_open = (ys[k - 1], ys[k]) if not open_[k - 1] else (ys[k], ys[k - 1])
    w, iv, _ = width_at(y_open)
    y_span = abs(y_range[1] - y_range[0])
    while w >= rel_width * max_width or abs(y_open - y_closed) > rel_y * y_span:
        mid = 0.5 * (y_closed + y_open)
        wm, ivm, _ = width_at(mid)
        if wm > 0:
            y_open, w, iv = mid, wm, ivm
        else:
            y_closed = mid
    return Cusp(x=0.5 * (iv[0] + iv[1]), y=y_open, x_tol=w, y_tol=abs(y_open - y_closed), max_width=max_width)


@dataclass(frozen=True)
class Nexus:
    p_star: float
    delta_star: float
    p_tol: float
    delta_tol: float


def locate_nexus(p: PhysicalParams, search_box, **kw) -> Nexus:
    """Nexus in ``search_box = ((P_lo, P_hi), (Delta_lo, Delta_hi))`` [W, rad/s]."""
    (p_lo, p_hi), (d_lo, d_hi) = search_box
    cusp = locate_cusp(
        lambda x, y: cubic_coefficients(p, DrivePoint(max(x, 0.0), y)), (p_lo, p_hi), (d_lo, d_hi), **kw
    )
    return Nexus(cusp.x, cusp.y, cusp.x_tol, cusp.y_tol)


def winding_number(xs, ys, x0: float, y0: float) -> int:
    """Winding number of the closed polyline ``(xs, ys)`` around ``(x0, y0)``."""
    ang = np.unwrap(np.arctan2(np.asarray(ys) - y0, np.asarray(xs) - x0))
    return int(round((ang[-1] - ang[0]) / (2.0 * math.pi)))


def loop_winding(spec, point, n: int = 2048) -> int:
    """Winding of the (clamped) loop around ``point = (P, Delta)``, in normalized axes."""
    from .loop import loop_point

    thetas = np.linspace(0.0, 2.0 * math.pi, n + 1)
    drives = [loop_point(spec, float(t)) for t in thetas]
    sx = max(abs(spec.a0), 1e-30)
    sy = max(abs(spec.b0), 1e-30)
    xs = [d.power / sx for d in drives]
    ys = [d.detuning / sy for d in drives]
    return winding_number(xs, ys, point[0] / sx, point[1] / sy)


def loop_bounding_box(spec, margin: float = 0.2):
    """Bounding box of the loop (power clamped at zero) enlarged by ``margin`` per side."""
    a = abs(spec.a0) * (1 + spec.delta_fluct)
    b = abs(spec.b0) * (1 + spec.delta_fluct)
    p_lo, p_hi = max(0.0, spec.p0 - a), spec.p0 + a
    d_lo, d_hi = spec.delta0 - b, spec.delta0 + b
    dp_, dd = (p_hi - p_lo) * margin, (d_hi - d_lo) * margin
    return (max(0.0, p_lo - dp_), p_hi + dp_), (d_lo - dd, d_hi + dd)
