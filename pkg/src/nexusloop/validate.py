"""Oracle cross-checks, each reported as ``{name, pass, metric, tolerance}``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bistability import (
    DISC_MARGINAL, locate_nexus, loop_bounding_box, loop_winding, scan_region,
)
from .dynamics import covariance_agreement, mc_rates, quasi_static_loop_dynamic, stochastic_covariance
from .errors import NumericalError, UnphysicalStateError
from .loop import (
    Direction, LoopSpec, loop_point, nonreciprocity_report,
    track_branch,
)
from .model import (
    APPROX_GUARD, Branch, DrivePoint, PhysicalParams, derive_params, fixed_point_residual, steady_states,
)
from .stability import (
    PHYSICALITY_TOL, DMode, covariance, dimensionless_system, drift_matrix, hurwitz_generic, log_negativity,
)


@dataclass
class Check:
    name: str
    passed: bool
    metric: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        return {"name": self.name, "pass": self.passed, "metric": self.metric, "tolerance": self.tolerance,
                "detail": self.detail}


def fixed_point_gap(p: PhysicalParams, spec: LoopSpec, n_points: int = 50):
    """Relative self-consistency residual of every physical cubic root at ``n_points`` loop drives."""
    dp = derive_params(p)
    rows = []
    for k in range(n_points):
        th = 2.0 * math.pi * k / n_points
        d = loop_point(spec, th)
        for s in steady_states(p, d, dp):
            if not s.physical or s.q_s == 0:
                continue
            rel = abs(fixed_point_residual(p, d, s.q_s)) / abs(s.q_s)
            rows.append({"theta": th, "q_s": s.q_s, "branch": s.branch, "rel_residual": rel,
                         "g_kappa_q_over_kappa": p.g_kappa * s.q_s / p.kappa})
    return rows


def check_fixed_point(p, spec, n_points=50, tol=1e-3) -> Check:
    rows = fixed_point_gap(p, spec, n_points)
    worst = max((r["rel_residual"] for r in rows), default=0.0)
    over = sum(r["rel_residual"] >= tol for r in rows)
    return Check("cubic_vs_fixed_point", worst < tol, worst, tol,
                 {"roots": len(rows), "over_tolerance": over, "residuals": rows})


def hurwitz_samples(p: PhysicalParams, n: int = 1000, seed: int = 0):
    """Random drive/device points around ``p``; yields ``(params, drive, state)`` for physical roots."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    for _ in range(n):
        q = PhysicalParams(
            m=p.m,
            omega_m=p.omega_m,
            quality=p.quality * rng.uniform(0.5, 2.0),
            kappa=p.kappa * rng.uniform(0.8, 1.2),
            lambda_drive=p.lambda_drive,
            g_omega=p.g_omega * rng.uniform(0.8, 1.2),
            g_kappa=p.g_kappa * rng.uniform(0.8, 1.2),
            temperature=rng.uniform(0.0, 5e-3),
            freq_convention=p.freq_convention,
        )
        d = DrivePoint(rng.uniform(0.0, 40e-6), p.omega_m * rng.uniform(-0.4, 1.0))
        dq = derive_params(q)
        for s in steady_states(q, d, dq):
            if s.physical:
                yield q, dq, d, s


def check_hurwitz(p, n=1000, seed=0) -> Check:
    agree = disagree = marginal = 0
    bad = []
    for q, dq, d, s in hurwitz_samples(p, n, seed):
        if s.marginal:
            marginal += 1
            continue
        generic = hurwitz_generic(drift_matrix(q, dq, d, s).a)
        if generic == s.stable:
            agree += 1
        else:
            disagree += 1
            bad.append({"power": d.power, "detuning": d.detuning, "q_s": s.q_s, "rh": s.stable, "generic": generic})
    return Check("hurwitz_crosscheck", disagree == 0, float(disagree), 0.0,
                 {"points": n, "roots_compared": agree + disagree, "marginal_excluded": marginal,
                  "disagreements": bad[:20]})


def _runs(mask):
    runs, start = [], None
    for i, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = i
        if not m and start is not None:
            runs.append((start, i))
            start = None
    return runs


def reference_states(p: PhysicalParams, spec: LoopSpec, d_mode=DMode.PAPER, n: int = 256):
    """Stable states for the stochastic cross-check: upper, lower and monostable.

    The bistable pick is the loop point, inside the longest arc where both
    outer roots pass Routh-Hurwitz, whose slower branch decays fastest; the
    monostable pick is the fastest-decaying point of the longest one-root arc.
    Fast decay keeps the sampling cost low.
    """
    dp = derive_params(p)
    bist, mono = [], []
    for k in range(n):
        d = loop_point(spec, 2.0 * math.pi * k / n)
        roots = [s for s in steady_states(p, d, dp) if s.physical]
        ok = [s for s in roots if s.stable and not s.marginal]
        if len(roots) == 3 and {s.branch for s in ok} >= {Branch.UPPER, Branch.LOWER}:
            rates = [mc_rates(dimensionless_system(p, dp, s, d_mode)[0])[0] for s in ok if s.branch is not Branch.MIDDLE]
            bist.append((k, min(rates), {s.branch: s for s in ok}))
        elif len(roots) == 1 and ok:
            mono.append((k, mc_rates(dimensionless_system(p, dp, ok[0], d_mode)[0])[0], ok[0]))
    out = {}
    if bist:
        idx = {b[0]: b for b in bist}
        runs = _runs([k in idx for k in range(n)])
        s0, s1 = max(runs, key=lambda r: r[1] - r[0])
        best = max((idx[k] for k in range(s0, s1)), key=lambda b: b[1])
        out["upper"], out["lower"] = best[2][Branch.UPPER], best[2][Branch.LOWER]
    if mono:
        idx = {m[0]: m for m in mono}
        runs = _runs([k in idx for k in range(n)])
        s0, s1 = max(runs, key=lambda r: r[1] - r[0])
        out["mono"] = max((idx[k] for k in range(s0, s1)), key=lambda m: m[1])[2]
    return out


def check_lyapunov_mc(p, spec, d_mode=DMode.PAPER, n_traj=200, seed=1, t_total=None):
    dp = derive_params(p)
    states = reference_states(p, spec, d_mode)
    detail, warnings, worst, ok_all = {}, [], 0.0, len(states) == 3
    min_nu = math.inf
    for name, s in states.items():
        cov = covariance(p, dp, s, d_mode)
        mc = stochastic_covariance(p, dp, s, n_traj=n_traj, seed=seed, d_mode=d_mode, t_total=t_total)
        ok, ratio = covariance_agreement(cov.v, mc)
        ok_all &= ok
        worst = max(worst, ratio)
        min_nu = min(min_nu, cov.nu_minus)
        warnings += [f"{name}: {w}" for w in mc.warnings]
        detail[name] = {"theta_drive": [s.drive.power, s.drive.detuning], "q_s": s.q_s, "ratio": ratio,
                        "e_n": cov.e_n, "nu_minus": cov.nu_minus, "t_total": mc.t_total, "n_traj": mc.n_traj,
                        "samples": mc.n_samples, "v_lyapunov": cov.v, "v_mc": mc.v_hat, "stderr": mc.stderr}
    detail["states_found"] = sorted(states)
    return Check("lyapunov_vs_monte_carlo", ok_all, worst, 1.0, detail), warnings, min_nu


def check_dynamic(p, spec, t_total=0.05) -> Check:
    mism, detail = 0, {}
    for direction in (Direction.CW, Direction.CCW):
        for start in (Branch.UPPER, Branch.LOWER):
            qs = track_branch(p, replace(spec, direction=direction), start).final_branch
            dyn = [quasi_static_loop_dynamic(p, spec, start, t_total=t, direction=direction).final_branch
                   for t in (t_total, 2.0 * t_total)]
            mism += sum(b is not qs for b in dyn)
            detail[f"{direction.value}/{start.value}"] = {"quasi_static": qs, "dynamic": dyn[0],
                                                          "dynamic_doubled_time": dyn[1]}
    return Check("dynamic_vs_quasi_static", mism == 0, float(mism), 0.0, detail)


def loop_covariances(p, spec, d_mode=DMode.PAPER):
    """Physicality data of every evaluated covariance along the four loop runs."""
    rep = nonreciprocity_report(p, spec, d_mode=d_mode)
    rows = []
    for (direction, start), t in rep.trajectories.items():
        for s in t.samples:
            if s.nu_minus is not None:
                rows.append({"run": f"{direction.value}/{start.value}", "theta": s.theta, "branch": s.state.branch,
                             "nu_minus": s.nu_minus, "e_n": s.e_n})
    return rep, rows


def check_physicality(p, spec, d_mode=DMode.PAPER, extra_min_nu=math.inf) -> Check:
    _, rows = loop_covariances(p, spec, d_mode)
    worst = min([r["nu_minus"] for r in rows] + [extra_min_nu])
    bound = 0.5 - PHYSICALITY_TOL
    viol = [r for r in rows if r["nu_minus"] < bound]
    return Check("physicality", worst >= bound, worst, bound,
                 {"covariances": len(rows), "violations": len(viol), "first_violations": viol[:10]})


def tmsv(r: float) -> np.ndarray:
    c, s = math.cosh(2 * r) / 2.0, math.sinh(2 * r) / 2.0
    v = np.zeros((4, 4))
    v[:2, :2] = v[2:, 2:] = c * np.eye(2)
    v[:2, 2:] = v[2:, :2] = s * np.diag([1.0, -1.0])
    return v


def check_analytic() -> Check:
    err = abs(log_negativity(tmsv(0.5)).e_n - 1.0)
    vac = log_negativity(0.5 * np.eye(4)).e_n
    return Check("analytic_entanglement", err < 1e-9 and vac == 0.0, err, 1e-9, {"vacuum_e_n": vac})


def check_nexus(p, spec) -> Check:
    box = loop_bounding_box(spec)
    nx = locate_nexus(p, box)
    pt = (nx.p_star, nx.delta_star)
    w_full = loop_winding(spec, pt)
    small = spec.scaled(0.1)
    w_small = loop_winding(small, pt)
    try:
        small_nonrec = nonreciprocity_report(p, small, d_mode=None).nonreciprocal
    except NumericalError as exc:
        small_nonrec = None
        err = str(exc)
    else:
        err = None
    ok = abs(w_full) == 1 and w_small == 0 and small_nonrec is False
    return Check("nexus_geometry", ok, float(abs(w_full)), 1.0,
                 {"p_star": nx.p_star, "delta_star": nx.delta_star, "p_tol": nx.p_tol, "delta_tol": nx.delta_tol,
                  "winding_reference_loop": w_full, "winding_small_loop": w_small,
                  "small_loop_nonreciprocal": small_nonrec, "small_loop_error": err})


def check_map_discriminant(p, spec, resolution=32) -> Check:
    box = loop_bounding_box(spec)
    rmap = scan_region(p, *box, resolution=resolution)
    mism = marg = 0
    for row in rmap.cells:
        for c in row:
            if c.marginal:
                marg += 1
                continue
            mism += (c.real_roots == 3) != (c.disc > 0)
    return Check("map_discriminant", mism == 0, float(mism), 0.0,
                 {"cells": len(rmap.p_axis) * len(rmap.delta_axis), "marginal": marg,
                  "disc_tolerance": DISC_MARGINAL})


def check_nonreciprocity(p, spec) -> Check:
    rep = nonreciprocity_report(p, spec, d_mode=None)
    ok = rep.outcome_table == {Direction.CW: Branch.LOWER, Direction.CCW: Branch.UPPER}
    return Check("nonreciprocity", ok and rep.nonreciprocal, float(rep.nonreciprocal), 1.0,
                 {"outcome_table": {k.value: (v.value if v else None) for k, v in rep.outcome_table.items()}})


def approximation_warnings(p, spec):
    out = []
    for direction in (Direction.CW, Direction.CCW):
        for start in (Branch.UPPER, Branch.LOWER):
            t = track_branch(p, replace(spec, direction=direction), start)
            worst = max(abs(p.g_kappa * s.state.q_s) / p.kappa for s in t.samples)
            if worst >= APPROX_GUARD:
                out.append(f"{direction.value}/{start.value}: |g_kappa Q_s|/kappa reaches {worst:.3f} "
                           f"(guard {APPROX_GUARD})")
    return out


def run_validation(cfg, skip=()):
    """Run every check for a :class:`~nexusloop.config.RunConfig`; returns ``(checks, warnings)``."""
    p = cfg.params()
    spec = cfg.loop_spec(p)
    mode = DMode(cfg.run.d_mode)
    checks, warnings = [], []

    def guarded(name, fn):
        if name in skip:
            return None
        try:
            return fn()
        except (NumericalError, ValueError) as exc:
            return Check(name, False, math.nan, math.nan, {"error": f"{type(exc).__name__}: {exc}"})

    checks.append(guarded("cubic_vs_fixed_point", lambda: check_fixed_point(p, spec)))
    checks.append(guarded("hurwitz_crosscheck", lambda: check_hurwitz(p, seed=cfg.run.seed)))
    min_nu = math.inf
    if "lyapunov_vs_monte_carlo" not in skip:
        try:
            c, w, min_nu = check_lyapunov_mc(p, spec, mode, cfg.run.mc_n_traj, cfg.run.seed, cfg.run.mc_t_total_s)
            checks.append(c)
            warnings += w
        except (NumericalError, ValueError) as exc:
            checks.append(Check("lyapunov_vs_monte_carlo", False, math.nan, 1.0, {"error": str(exc)}))
    checks.append(guarded("dynamic_vs_quasi_static", lambda: check_dynamic(p, spec, cfg.run.dynamic_t_total_s)))
    checks.append(guarded("physicality", lambda: check_physicality(p, spec, mode, min_nu)))
    checks.append(guarded("analytic_entanglement", check_analytic))
    checks.append(guarded("nexus_geometry", lambda: check_nexus(p, spec)))
    checks.append(guarded("map_discriminant", lambda: check_map_discriminant(p, spec)))
    checks.append(guarded("nonreciprocity", lambda: check_nonreciprocity(p, spec)))
    try:
        warnings += approximation_warnings(p, spec)
    except NumericalError:
        pass
    return [c for c in checks if c is not None], warnings


def entanglement_table(physical_kwargs=None, spec_kwargs=None):
    """Start-point dissipation ratios and CCW entanglement for each convention x diffusion mode."""
    from .loop import LoopSpec as _LS

    physical_kwargs = physical_kwargs or {}
    rows = []
    for conv in ("angular", "times2pi"):
        p = PhysicalParams.from_quoted(**physical_kwargs, freq_convention=conv)
        spec = _LS.default(p, **(spec_kwargs or {}))
        dp = derive_params(p)
        start = [s for s in steady_states(p, loop_point(spec, 0.0), dp) if s.physical]
        ratios = {s.branch.value: s.kappa_eff / p.kappa for s in start}
        for mode in (DMode.PAPER, DMode.EXACT):
            row = {"freq_convention": conv, "d_mode": mode.value, "kappa_eff_over_kappa": ratios}
            try:
                rep = nonreciprocity_report(p, spec, d_mode=mode, dp=dp)
            except NumericalError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
                continue
            ccw = [rep.trajectories[(Direction.CCW, b)] for b in (Branch.UPPER, Branch.LOWER)]
            cw = [rep.trajectories[(Direction.CW, b)] for b in (Branch.UPPER, Branch.LOWER)]
            fin = ccw[0].samples[-1]
            peak = max((s.e_n for t in ccw for s in t.samples if s.e_n is not None and s.state.branch is Branch.UPPER),
                       default=None)
            row.update({
                "ccw_final_e_n": fin.e_n, "ccw_final_status": fin.e_n_status,
                "ccw_final_e_n_formal": _formal_e_n(p, dp, fin.state, mode),
                "ccw_peak_e_n_upper_stable": peak,
                "cw_final_e_n": [t.samples[-1].e_n for t in cw],
            })
            rows.append(row)
    return rows


def _formal_e_n(p, dp, state, mode):
    """E_N of the Lyapunov solution even when the state is unstable (diagnostic only)."""
    from .stability import solve_lyapunov_unchecked

    try:
        a, d = dimensionless_system(p, dp, state, mode)
        return log_negativity(solve_lyapunov_unchecked(a, d)).e_n
    except (NumericalError, UnphysicalStateError):
        return None


def peak_upper_state(p: PhysicalParams, spec: LoopSpec, d_mode=DMode.PAPER):
    """Upper-branch loop state with the largest E_N among stable, evaluated samples."""
    rep = nonreciprocity_report(p, spec, d_mode=d_mode)
    best = None
    for t in rep.trajectories.values():
        for s in t.samples:
            if s.e_n is not None and s.state.branch is Branch.UPPER and (best is None or s.e_n > best.e_n):
                best = s
    return best.state if best else None


def thermal_sweep(p: PhysicalParams, spec: LoopSpec, temps_mk=None, d_mode=DMode.PAPER, state=None):
    """E_N of one upper-branch drive point as a function of bath temperature.

    Defaults to the drive point of :func:`peak_upper_state`.
    """
    temps_mk = np.linspace(0.0, 5.0, 11) if temps_mk is None else temps_mk
    ref = state or peak_upper_state(p, spec, d_mode)
    if ref is None:
        return []
    out = []
    for t in temps_mk:
        q = replace(p, temperature=float(t) * 1e-3)
        dq = derive_params(q)
        s = next(x for x in steady_states(q, ref.drive, dq) if x.branch is Branch.UPPER)
        try:
            out.append((float(t), covariance(q, dq, s, d_mode).e_n))
        except NumericalError:
            out.append((float(t), None))
    return out
