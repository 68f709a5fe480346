"""Quasi-static parameter loops, branch continuation and the nonreciprocity test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import NoStableRootError, NumericalError, StartNotBistableError
from .model import Branch, DerivedParams, DrivePoint, PhysicalParams, SteadyState, derive_params, steady_states
from .stability import DMode, covariance


class Direction(str, Enum):
    CW = "cw"  # loop angle decreasing
    CCW = "ccw"  # loop angle increasing

    @property
    def sign(self) -> int:
        return -1 if self is Direction.CW else 1


class FluctMode(str, Enum):
    CONSTANT = "constant"
    PER_STEP = "per_step_uniform"


class Admissibility(str, Enum):
    """Which roots branch continuation may land on.

    ``STATIC`` excludes saddles only (the middle root); ``DYNAMIC`` also
    excludes roots that fail the Routh-Hurwitz test.
    """

    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class LoopSpec:
    p0: float
    delta0: float
    a0: float
    b0: float
    theta0: float
    delta_fluct: float = 0.0
    n_steps: int = 256
    direction: Direction = Direction.CCW
    fluct_mode: FluctMode = FluctMode.CONSTANT
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 16:
            raise ValueError(f"n_steps must be >= 16, got {self.n_steps}")
        for name in ("p0", "delta0", "a0", "b0", "theta0", "delta_fluct"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "fluct_mode", FluctMode(self.fluct_mode))

    @classmethod
    def default(cls, p: PhysicalParams, **overrides) -> "LoopSpec":
        """Reference loop: 15 uW power and 0.45 omega_m detuning radii around (15 uW, 0.3 omega_m)."""
        base = dict(p0=15e-6, delta0=0.3 * p.omega_m, a0=15e-6, b0=0.45 * p.omega_m, theta0=0.28 * math.pi)
        base.update(overrides)
        return cls(**base)

    def scaled(self, factor: float) -> "LoopSpec":
        return replace(self, a0=self.a0 * factor, b0=self.b0 * factor)

    def step_deltas(self, count: int | None = None) -> np.ndarray:
        """Radius fluctuation at each sample (``n_steps + 1`` by default)."""
        n = self.n_steps + 1 if count is None else count
        if self.fluct_mode is FluctMode.CONSTANT or self.delta_fluct == 0:
            return np.full(n, self.delta_fluct)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-abs(self.delta_fluct), abs(self.delta_fluct), n)


def loop_point(spec: LoopSpec, theta: float, delta: float | None = None) -> DrivePoint:
    """Drive at loop angle ``theta``; power is clamped at zero."""
    dl = spec.delta_fluct if delta is None else delta
    a = spec.a0 * (1.0 + dl)
    b = spec.b0 * (1.0 + dl)
    power = spec.p0 + a * math.cos(theta + spec.theta0)
    return DrivePoint(power=max(0.0, power), detuning=spec.delta0 + b * math.sin(theta + spec.theta0))


def perturbed_spec(spec: LoopSpec, delta: float) -> LoopSpec:
    return spec if delta == spec.delta_fluct else replace(spec, delta_fluct=delta)


@dataclass
class Sample:
    theta: float
    drive: DrivePoint
    state: SteadyState
    n_admissible: int
    e_n: float | None = None
    e_n_status: str = "not_computed"
    nu_minus: float | None = None


@dataclass(frozen=True)
class Jump:
    theta: float
    from_branch: Branch
    to_branch: Branch
    q_from: float
    q_to: float


@dataclass
class Trajectory:
    samples: list
    jumps: list
    start_branch: Branch
    final_branch: Branch
    direction: Direction
    spec: LoopSpec
    jump_threshold: float
    admissibility: Admissibility = Admissibility.STATIC

    @property
    def e_n_final(self):
        return self.samples[-1].e_n


def _admissible(p, dp, d, policy: Admissibility):
    out = []
    for s in steady_states(p, d, dp):
        if not s.physical:
            continue
        if policy is Admissibility.DYNAMIC:
            if s.stable and not s.marginal:
                out.append(s)
        elif s.static_stable:
            out.append(s)
    return out


def _nearest(states, q):
    return min(states, key=lambda s: abs(s.q_s - q))


def _jump_threshold(levels, floor):
    """3x the largest step of the single-root segments, or of any count-preserving segment."""
    mono = [abs(b[0].q_s - a[0].q_s) for a, b in zip(levels, levels[1:]) if len(a) == 1 and len(b) == 1]
    if not mono:
        mono = [
            max(min(abs(x.q_s - y.q_s) for y in b) for x in a)
            for a, b in zip(levels, levels[1:])
            if len(a) == len(b) and a
        ]
    return max(3.0 * max(mono, default=0.0), floor)


def track_branch(
    p: PhysicalParams,
    spec: LoopSpec,
    start: Branch | str,
    n_steps: int | None = None,
    *,
    dp: DerivedParams | None = None,
    admissibility: Admissibility | str = Admissibility.STATIC,
    revolutions: int = 1,
) -> Trajectory:
    """Follow one branch around the loop, jumping at folds.

    At each step the admissible root nearest the previous displacement is
    taken.  A jump is recorded when the admissible-root count dropped and
    that distance exceeds the jump threshold (the tracked root vanished); the
    fold is then localized by bisection in the loop angle.
    """
    start = Branch(start)
    if start not in (Branch.UPPER, Branch.LOWER):
        raise ValueError("start must be 'upper' or 'lower'")
    policy = Admissibility(admissibility)
    dp = dp or derive_params(p)
    if n_steps is not None and n_steps != spec.n_steps:
        spec = replace(spec, n_steps=n_steps)
    n = spec.n_steps
    sign = spec.direction.sign
    total = n * revolutions
    deltas = spec.step_deltas(total + 1)
    thetas = [sign * 2.0 * math.pi * i / n for i in range(total + 1)]
    drives = [loop_point(spec, th, float(dl)) for th, dl in zip(thetas, deltas)]
    levels = [_admissible(p, dp, d, policy) for d in drives]

    if len(levels[0]) < 2:
        raise StartNotBistableError(
            f"start not bistable: {len(levels[0])} admissible root(s) at "
            f"P={drives[0].power:.6g} W, detuning={drives[0].detuning:.6g} rad/s"
        )
    current = next((s for s in levels[0] if s.branch is start), None)
    if current is None:
        raise StartNotBistableError(f"start not bistable: no admissible {start.value} root")

    threshold = _jump_threshold(levels, 10.0 * dp.q_zpf)
    min_dtheta = 2.0 * math.pi / (64.0 * n)
    samples = [Sample(thetas[0], drives[0], current, len(levels[0]))]
    jumps = []
    for i in range(1, total + 1):
        if not levels[i]:
            raise NoStableRootError(f"no admissible root at theta={thetas[i]:.6g}")
        nxt = _nearest(levels[i], current.q_s)
        dist = abs(nxt.q_s - current.q_s)
        dropped = len(levels[i]) < len(levels[i - 1])
        if dropped and dist > threshold:
            th_jump = _localize_fold(
                p, dp, spec, policy, thetas[i - 1], thetas[i], current, threshold, float(deltas[i]), min_dtheta
            )
            jumps.append(Jump(th_jump, current.branch, nxt.branch, current.q_s, nxt.q_s))
        current = nxt
        samples.append(Sample(thetas[i], drives[i], current, len(levels[i])))

    return Trajectory(samples, jumps, start, current.branch, spec.direction, spec, threshold, policy)


def _localize_fold(p, dp, spec, policy, th_a, th_b, state_a, threshold, delta, min_dtheta):
    """Bisect between ``th_a`` (tracked root present) and ``th_b`` (gone)."""
    q_ref = state_a.q_s
    while abs(th_b - th_a) > min_dtheta:
        mid = 0.5 * (th_a + th_b)
        roots = _admissible(p, dp, loop_point(spec, mid, delta), policy)
        near = _nearest(roots, q_ref) if roots else None
        if near is not None and abs(near.q_s - q_ref) <= threshold:
            th_a, q_ref = mid, near.q_s
        else:
            th_b = mid
    return th_b


def entanglement_along(
    p: PhysicalParams,
    traj: Trajectory,
    d_mode: DMode | str = DMode.PAPER,
    dp: DerivedParams | None = None,
) -> Trajectory:
    """Fill ``e_n`` for every sample whose state is stable and outside the marginal band.

    Other samples keep ``e_n = None`` with ``e_n_status`` set to
    ``unstable``, ``marginal`` or ``error``.  A covariance violating the
    uncertainty bound is kept but marked ``unphysical``.
    """
    dp = dp or derive_params(p)
    mode = DMode(d_mode)
    for s in traj.samples:
        st = s.state
        if st.marginal:
            s.e_n, s.e_n_status = None, "marginal"
            continue
        if not st.stable:
            s.e_n, s.e_n_status = None, "unstable"
            continue
        try:
            res = covariance(p, dp, st, mode)
        except NumericalError:
            s.e_n, s.e_n_status = None, "error"
            continue
        s.e_n, s.nu_minus = res.e_n, res.nu_minus
        s.e_n_status = "ok" if res.physical else "unphysical"
    return traj


@dataclass
class NonreciprocityReport:
    trajectories: dict
    outcomes: dict  # (direction, start) -> final branch
    outcome_table: dict  # direction -> final branch, or None when starts disagree
    nonreciprocal: bool
    e_n_final: dict = field(default_factory=dict)


def nonreciprocity_report(
    p: PhysicalParams,
    spec: LoopSpec,
    *,
    d_mode: DMode | str | None = DMode.PAPER,
    admissibility: Admissibility | str = Admissibility.STATIC,
    dp: DerivedParams | None = None,
) -> NonreciprocityReport:
    """Run all four direction/start combinations and classify the outcome.

    ``d_mode=None`` skips the entanglement evaluation.
    """
    dp = dp or derive_params(p)
    trajs, outcomes, e_final = {}, {}, {}
    for direction in (Direction.CW, Direction.CCW):
        for start in (Branch.UPPER, Branch.LOWER):
            t = track_branch(p, replace(spec, direction=direction), start, dp=dp, admissibility=admissibility)
            if d_mode is not None:
                entanglement_along(p, t, d_mode, dp)
            key = (direction, start)
            trajs[key], outcomes[key] = t, t.final_branch
            e_final[key] = t.e_n_final
    table = {}
    for direction in (Direction.CW, Direction.CCW):
        a, b = outcomes[(direction, Branch.UPPER)], outcomes[(direction, Branch.LOWER)]
        table[direction] = a if a is b else None
    cw, ccw = table[Direction.CW], table[Direction.CCW]
    nonrec = cw is not None and ccw is not None and cw is not ccw
    return NonreciprocityReport(trajs, outcomes, table, nonrec, e_final)
