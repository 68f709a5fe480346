"""Brute-force checks: nonlinear mean-field integration and stochastic sampling.

The mean-field part integrates the classical equations of motion with RK4.
The stochastic part samples the linearized fluctuation dynamics in
dimensionless quadratures and estimates their stationary covariance.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import kernels
from .errors import DivergenceError, StartNotBistableError, StepTooLargeError, UnphysicalStateError, UnstableSystemError
from .loop import Admissibility, Direction, LoopSpec, _admissible, loop_point
from .model import (
    HBAR, Branch, DerivedParams, DrivePoint, PhysicalParams, SteadyState,
    cavity_amplitude, derive_params, exact_fixed_point,
)
from .stability import DMode, dimensionless_system


@dataclass(frozen=True)
class MeanFieldState:
    c: complex
    q: float
    p: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.c.real, self.c.imag, self.q, self.p])


@dataclass(frozen=True)
class Schedule:
    """Drive ``P = max(0, p0 + a cos(phi))``, ``Delta = delta0 + b sin(phi)``.

    ``phi = theta0 + theta_start + theta_rate * t``.  A constant drive has
    ``a = b = 0``.
    """

    p0: float
    a: float
    delta0: float
    b: float
    theta0: float = 0.0
    theta_start: float = 0.0
    theta_rate: float = 0.0

    @classmethod
    def constant(cls, d: DrivePoint) -> "Schedule":
        return cls(p0=d.power, a=0.0, delta0=d.detuning, b=0.0)

    @classmethod
    def from_loop(cls, spec: LoopSpec, t_total: float, direction: Direction | None = None) -> "Schedule":
        direction = Direction(direction or spec.direction)
        return cls(
            p0=spec.p0,
            a=spec.a0 * (1.0 + spec.delta_fluct),
            delta0=spec.delta0,
            b=spec.b0 * (1.0 + spec.delta_fluct),
            theta0=spec.theta0,
            theta_rate=direction.sign * 2.0 * math.pi / t_total,
        )

    def at(self, t: float) -> DrivePoint:
        phi = self.theta0 + self.theta_start + self.theta_rate * t
        return DrivePoint(max(0.0, self.p0 + self.a * math.cos(phi)), self.delta0 + self.b * math.sin(phi))


def _param_vector(p: PhysicalParams, dp: DerivedParams, sched: Schedule) -> np.ndarray:
    par = np.zeros(kernels.N_PARAMS)
    par[kernels.P_M] = p.m
    par[kernels.P_OMEGA] = p.omega_m
    par[kernels.P_GAMMA] = dp.gamma
    par[kernels.P_KAPPA] = p.kappa
    par[kernels.P_GK] = p.g_kappa
    par[kernels.P_GW] = p.g_omega
    par[kernels.P_HBAR] = HBAR
    par[kernels.P_HBAR_WD] = HBAR * dp.omega_d
    par[kernels.P_P0] = sched.p0
    par[kernels.P_A] = sched.a
    par[kernels.P_D0] = sched.delta0
    par[kernels.P_B] = sched.b
    par[kernels.P_TH0] = sched.theta0
    par[kernels.P_TH_START] = sched.theta_start
    par[kernels.P_TH_RATE] = sched.theta_rate
    return par


def mean_field_rhs(p: PhysicalParams, d: DrivePoint, s: MeanFieldState):
    """Time derivatives ``(dc/dt, dq/dt, dp/dt)`` of the noiseless equations of motion."""
    kq = p.kappa + p.g_kappa * s.q
    if kq <= 0:
        raise UnphysicalStateError(f"kappa(q)={kq:.6g} <= 0")
    dp_ = derive_params(p)
    eps = math.sqrt(d.power / (HBAR * dp_.omega_d))
    dc = -(kq / 2.0 + 1j * (d.detuning + p.g_omega * s.q)) * s.c + math.sqrt(kq) * eps
    dq = s.p / p.m
    dpm = (
        -p.m * p.omega_m**2 * s.q
        - HBAR * p.g_omega * abs(s.c) ** 2
        - HBAR * p.g_kappa * eps * s.c.imag / math.sqrt(p.kappa)
        - dp_.gamma * s.p
    )
    return dc, dq, dpm


def max_step(p: PhysicalParams) -> float:
    return 0.05 / max(p.kappa, p.omega_m)


def integrate_mean_field(
    p: PhysicalParams,
    schedule: Schedule | DrivePoint,
    init: MeanFieldState,
    dt: float,
    t_total: float,
    record_every: int | None = None,
    backend=None,
):
    """Fixed-step RK4 from ``init.t`` to ``init.t + t_total``.

    Returns ``(final_state, trace)``; ``trace`` rows are ``(t, Re c, Im c, q, p)``.
    The drive is evaluated at every RK stage.
    """
    if dt <= 0 or dt > max_step(p) * (1.0 + 1e-12):
        raise StepTooLargeError(f"dt={dt:.3e} s exceeds 0.05/max(kappa, omega_m)={max_step(p):.3e} s")
    if isinstance(schedule, DrivePoint):
        schedule = Schedule.constant(schedule)
    dp = derive_params(p)
    n_steps = max(1, int(round(t_total / dt)))
    record_every = record_every or max(1, n_steps // 2000)
    be = backend or kernels.backend
    y, trace, status, done = be.rk4_integrate(
        init.as_array(), _param_vector(p, dp, schedule), init.t, dt, n_steps, record_every
    )
    if status == kernels.STATUS_UNPHYSICAL:
        raise UnphysicalStateError(f"kappa(q) <= 0 after {done} steps")
    if status == kernels.STATUS_DIVERGED:
        raise DivergenceError(f"state diverged after {done} steps")
    final = MeanFieldState(complex(y[0], y[1]), float(y[2]), float(y[3]), init.t + n_steps * dt)
    return final, trace


def steady_init(p: PhysicalParams, d: DrivePoint, q_guess: float) -> MeanFieldState:
    """Exact stationary point of the equations of motion near ``q_guess``."""
    q = exact_fixed_point(p, d, q_guess)
    return MeanFieldState(cavity_amplitude(p, d, q), q, 0.0)


@dataclass
class DynamicLoopResult:
    final_branch: Branch
    q_final: float
    q_mean: float
    t_total: float
    dt: float
    trace: np.ndarray = field(repr=False)


def quasi_static_loop_dynamic(
    p: PhysicalParams,
    spec: LoopSpec,
    init_branch: Branch | str,
    t_total: float = 0.05,
    dt: float | None = None,
    direction: Direction | str | None = None,
    average_periods: int = 50,
    admissibility: Admissibility | str = Admissibility.STATIC,
) -> DynamicLoopResult:
    """Drive the nonlinear equations once around the loop in ``t_total`` seconds.

    The run starts at the stationary point of ``init_branch``.  The final
    state is classified by the admissible root at the closing drive point
    nearest to ``q`` averaged over the last ``average_periods`` mechanical
    periods (residual ringing after fold jumps averages out).
    """
    init_branch = Branch(init_branch)
    direction = Direction(direction or spec.direction)
    policy = Admissibility(admissibility)
    spec = replace(spec, direction=direction)
    dp = derive_params(p)
    dt = dt or max_step(p)
    d0 = loop_point(spec, 0.0)
    roots = _admissible(p, dp, d0, policy)
    if len(roots) < 2:
        raise StartNotBistableError("start not bistable")
    root = next((s for s in roots if s.branch is init_branch), None)
    if root is None:
        raise StartNotBistableError(f"no admissible {init_branch.value} root at the start point")
    init = steady_init(p, d0, root.q_s)
    final, trace = integrate_mean_field(p, Schedule.from_loop(spec, t_total, direction), init, dt, t_total)
    window = average_periods * 2.0 * math.pi / p.omega_m
    tail = trace[trace[:, 0] >= trace[-1, 0] - window]
    q_mean = float(np.mean(tail[:, 3])) if len(tail) > 1 else final.q
    nearest = min(roots, key=lambda s: abs(s.q_s - q_mean))
    return DynamicLoopResult(nearest.branch, final.q, q_mean, t_total, dt, trace)


# ---------------------------------------------------------------- stochastic

MIN_BATCHES = 8


@dataclass
class McEstimate:
    v_hat: np.ndarray
    stderr: np.ndarray
    n_traj: int
    t_total: float
    dt: float
    seed: int
    burn_in: float
    n_samples: int
    warnings: list = field(default_factory=list)


def discrete_noise(a: np.ndarray, d: np.ndarray, dt: float):
    """Exact one-step propagator and noise factor of ``du = A u dt + dW``, ``<dW dW^T> = D dt``.

    Returns ``(E, G)`` with ``E = exp(A dt)`` and ``G G^T`` equal to the
    integrated noise covariance over one step (Van Loan block exponential).
    """
    n = a.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -a
    blk[:n, n:] = d
    blk[n:, n:] = a.T
    f = expm(blk * dt)
    e = f[n:, n:].T
    q = e @ f[:n, n:]
    q = 0.5 * (q + q.T)
    w, vecs = np.linalg.eigh(q)
    g = vecs * np.sqrt(np.clip(w, 0.0, None))
    return e, g


def mc_rates(a: np.ndarray):
    lam = np.linalg.eigvals(a)
    if np.max(lam.real) >= 0:
        raise UnstableSystemError("drift matrix is not Hurwitz; no stationary covariance")
    decay = -lam.real
    return float(decay.min()), float(decay.max()), float(np.abs(lam).max())


def _run_batch(e, g, n_traj, n_steps, n_burn, sample_every, seed, batch, chunk, backend):
    rng = np.random.default_rng(np.random.SeedSequence([seed, batch]))
    u = np.zeros((n_traj, 4))
    acc = np.zeros((n_traj, 4, 4))
    k = g.shape[1]
    done, samples = 0, 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        z = rng.standard_normal((m, n_traj, k))
        if done < n_burn < done + m:
            m = n_burn - done
            z = z[:m]
        accumulate = done >= n_burn
        samples += backend.mc_chunk(e, g, u, z, sample_every, done - n_burn if accumulate else 0, accumulate, acc)
        done += m
    return acc.sum(axis=0), samples * n_traj


def sample_covariance(
    a: np.ndarray,
    d: np.ndarray,
    dt: float | None = None,
    t_total: float | None = None,
    n_traj: int = 200,
    seed: int = 0,
    sample_interval: float | None = None,
    n_batches: int = 16,
    workers: int | None = None,
    backend=None,
) -> McEstimate:
    """Monte Carlo stationary covariance of ``du = A u dt + noise`` with diffusion ``D``.

    Trajectories start at the origin and are advanced with the exact
    one-step propagator, so the only error sources are sampling noise and
    the finite burn-in ``10 / slowest decay rate``.  Second moments are
    taken every ``sample_interval`` after burn-in; trajectories are split
    into batches with independent seeds and the standard error is the spread
    of the batch means.  Default duration is burn-in plus
    ``max(40 / slowest, 200 / fastest)`` decay times.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    slow, fast, lam_max = mc_rates(a)
    dt = dt or 0.2 / lam_max
    burn = 10.0 / slow
    t_total = t_total or burn + max(40.0 / slow, 200.0 / fast)
    n_steps = int(math.ceil(t_total / dt))
    n_burn = min(int(math.ceil(burn / dt)), n_steps - 1)
    sample_every = max(1, int(round((sample_interval or 1.0 / fast) / dt)))
    e, g = discrete_noise(a, d, dt)

    n_batches = max(2, min(n_batches, n_traj))
    sizes = [n_traj // n_batches + (1 if b < n_traj % n_batches else 0) for b in range(n_batches)]
    backend = backend or kernels.backend
    chunk = max(1, 2_000_000 // (4 * max(sizes)))
    workers = workers or _workers()
    args = [(e, g, sizes[b], n_steps, n_burn, sample_every, seed, b, chunk, backend) for b in range(n_batches)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda x: _run_batch(*x), args))
    else:
        results = [_run_batch(*x) for x in args]

    means = np.array([s / max(cnt, 1) for s, cnt in results])
    counts = np.array([cnt for _, cnt in results], dtype=float)
    v_hat = np.einsum("b,bij->ij", counts, means) / counts.sum()
    v_hat = 0.5 * (v_hat + v_hat.T)
    stderr = means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    warnings = []
    scale = np.sqrt(np.outer(np.diag(v_hat), np.diag(v_hat)))
    if np.any(stderr > 0.2 * scale):
        warnings.append("insufficient samples: standard error exceeds 20% of the covariance scale")
    if n_batches < MIN_BATCHES:
        # the spread of so few batch means says little about the true error
        warnings.append(f"insufficient samples: {n_traj} trajectories give only {n_batches} independent batches")
    return McEstimate(v_hat, stderr, n_traj, n_steps * dt, dt, seed, n_burn * dt, int(counts.sum()), warnings)


def stochastic_covariance(
    p: PhysicalParams,
    dp: DerivedParams,
    ss: SteadyState,
    dt: float | None = None,
    t_total: float | None = None,
    n_traj: int = 200,
    seed: int = 0,
    d_mode: DMode | str = DMode.PAPER,
    **kw,
) -> McEstimate:
    """:func:`sample_covariance` for one steady state, in dimensionless quadratures, sampled every ``1/kappa``."""
    a, d = dimensionless_system(p, dp, ss, d_mode)
    return sample_covariance(a, d, dt, t_total, n_traj, seed, sample_interval=1.0 / p.kappa, **kw)


def covariance_agreement(v_ref: np.ndarray, mc: McEstimate, rel: float = 0.05, n_sigma: float = 3.0):
    """Entrywise check ``|V - V_hat| <= max(rel * sqrt(V_ii V_jj), n_sigma * stderr)``.

    Returns ``(ok, worst_ratio)``; the ratio is deviation over tolerance.
    """
    scale = np.sqrt(np.outer(np.diag(v_ref), np.diag(v_ref)))
    tol = np.maximum(rel * scale, n_sigma * mc.stderr)
    ratio = np.abs(v_ref - mc.v_hat) / tol
    return bool(np.all(ratio <= 1.0)), float(ratio.max())


def _workers() -> int:
    from .bistability import worker_count

    return worker_count()
