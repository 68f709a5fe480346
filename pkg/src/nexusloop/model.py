"""Device parameters, drive bookkeeping and semiclassical steady states.

All quantities are SI.  Quoted laboratory values (ng, kHz, nm, mK, uW) are
converted once, in :meth:`PhysicalParams.from_quoted`, which is also where
the frequency convention is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from scipy import constants

from .errors import ConvergenceError, UnphysicalStateError

HBAR = constants.hbar
K_B = constants.k
C0 = constants.c

# |g_kappa Q_s| / kappa above this flags the sqrt(kappa + g_kappa Q) expansion as unreliable
APPROX_GUARD = 0.5


class FreqConvention(str, Enum):
    """How quoted frequencies (kHz, kHz/nm) map to angular rates."""

    ANGULAR = "angular"  # quoted numbers already are rad/s
    TIMES_2PI = "times2pi"  # quoted numbers are cycles/s; multiply by 2 pi

    @property
    def factor(self) -> float:
        return 2.0 * math.pi if self is FreqConvention.TIMES_2PI else 1.0


class Branch(str, Enum):
    UPPER = "upper"
    LOWER = "lower"
    MIDDLE = "middle"
    MONO = "mono"


@dataclass(frozen=True)
class PhysicalParams:
    m: float
    omega_m: float
    quality: float
    kappa: float
    lambda_drive: float
    g_omega: float
    g_kappa: float
    temperature: float
    freq_convention: FreqConvention = FreqConvention.ANGULAR

    @classmethod
    def from_quoted(
        cls,
        mass_ng=80.0,
        omega_m_khz=136.0,
        kappa_over_omega_m=0.1,
        lambda_nm=1064.0,
        g_omega_khz_per_nm=196.57,
        g_kappa_khz_per_nm=17.47,
        temperature_mk=0.5,
        quality=5.8e5,
        freq_convention=FreqConvention.ANGULAR,
    ) -> "PhysicalParams":
        """Build parameters from laboratory units.

        Defaults are the membrane-in-the-middle values used throughout the
        package.  ``freq_convention`` decides whether ``136 kHz`` means
        ``136e3 rad/s`` or ``2 pi 136e3 rad/s``; the same factor is applied
        to both coupling strengths.
        """
        conv = FreqConvention(freq_convention)
        f = conv.factor
        omega_m = f * omega_m_khz * 1e3
        return cls(
            m=mass_ng * 1e-12,
            omega_m=omega_m,
            quality=quality,
            kappa=kappa_over_omega_m * omega_m,
            lambda_drive=lambda_nm * 1e-9,
            g_omega=f * g_omega_khz_per_nm * 1e3 / 1e-9,
            g_kappa=f * g_kappa_khz_per_nm * 1e3 / 1e-9,
            temperature=temperature_mk * 1e-3,
            freq_convention=conv,
        )

    def validate(self) -> None:
        checks = (
            ("m", self.m > 0),
            ("omega_m", self.omega_m > 0),
            ("quality", self.quality > 0),
            ("kappa", self.kappa > 0),
            ("lambda_drive", self.lambda_drive > 0),
            ("temperature", self.temperature >= 0),
        )
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid {name}={getattr(self, name)!r}")
        for name in ("g_omega", "g_kappa"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class DerivedParams:
    gamma: float
    omega_d: float
    n_bar: float
    q_zpf: float
    p_zpf: float


@dataclass(frozen=True)
class DrivePoint:
    power: float  # W
    detuning: float  # rad/s

    def __post_init__(self):
        if not self.power >= 0:
            raise ValueError(f"drive power must be >= 0, got {self.power!r}")


@dataclass(frozen=True)
class SteadyState:
    """One semiclassical root of the steady-state problem.

    ``stable`` is the Routh-Hurwitz verdict (dynamic stability).
    ``static_stable`` is False only for saddle roots (a real eigenvalue has
    crossed zero); this is the notion that separates the middle branch from
    the outer ones.  ``physical`` is False when ``kappa_eff <= 0``; such roots
    carry no amplitude or stability information.
    """

    q_s: float
    c_s: complex
    kappa_eff: float
    delta_eff: float
    rh: tuple
    stable: bool
    static_stable: bool
    marginal: bool
    branch: Branch | None
    physical: bool
    drive: DrivePoint
    approx_ok: bool = True
    extra: dict = field(default_factory=dict, compare=False, repr=False)


def derive_params(p: PhysicalParams) -> DerivedParams:
    p.validate()
    gamma = p.omega_m / p.quality
    omega_d = 2.0 * math.pi * C0 / p.lambda_drive
    if p.temperature == 0:
        n_bar = 0.0
    else:
        x = HBAR * p.omega_m / (K_B * p.temperature)
        n_bar = 0.0 if x > 700 else 1.0 / math.expm1(x)
    q_zpf = math.sqrt(HBAR / (2.0 * p.m * p.omega_m))
    p_zpf = math.sqrt(HBAR * p.m * p.omega_m / 2.0)
    return DerivedParams(gamma=gamma, omega_d=omega_d, n_bar=n_bar, q_zpf=q_zpf, p_zpf=p_zpf)


def drive_amplitude(d: DrivePoint, dp: DerivedParams) -> float:
    """Input amplitude in s^-1/2 for the given power."""
    return math.sqrt(d.power / (HBAR * dp.omega_d))


def _epsilon(p: PhysicalParams, d: DrivePoint) -> float:
    omega_d = 2.0 * math.pi * C0 / p.lambda_drive
    return math.sqrt(d.power / (HBAR * omega_d))


def effective_rates(p: PhysicalParams, d: DrivePoint, q_s: float):
    """Return ``(kappa_eff, delta_eff)``; ``kappa_eff <= 0`` is not an error here."""
    return p.kappa + p.g_kappa * q_s, d.detuning + p.g_omega * q_s


def cavity_amplitude(p: PhysicalParams, d: DrivePoint, q_s: float) -> complex:
    kappa_eff, delta_eff = effective_rates(p, d, q_s)
    if kappa_eff <= 0:
        raise UnphysicalStateError(f"kappa_eff={kappa_eff:.6g} <= 0 at q_s={q_s:.6g}")
    eps = _epsilon(p, d)
    return math.sqrt(kappa_eff) * eps / complex(kappa_eff / 2.0, delta_eff)


def cubic_coefficients(p: PhysicalParams, d: DrivePoint):
    """Coefficients of ``d1 Q^3 + d2 Q^2 + d3 Q + d4 = 0`` for the displacement."""
    eps2 = _epsilon(p, d) ** 2
    mw2 = p.m * p.omega_m**2
    k, gk, gw, delta = p.kappa, p.g_kappa, p.g_omega, d.detuning
    d1 = mw2 * (gk**2 / 4.0 + gw**2)
    d2 = mw2 * (k * gk / 2.0 + 2.0 * delta * gw) - HBAR * gk**2 * gw * eps2 / (2.0 * k)
    d3 = mw2 * (k**2 / 4.0 + delta**2) - HBAR * gk**2 * delta * eps2 / (2.0 * k)
    d4 = -HBAR * eps2 * (gk * delta - gw * k)
    return d1, d2, d3, d4


def _depressed(a, b, c):
    """Depressed form ``t^3 + pt + q`` of the monic cubic ``y^3 + a y^2 + b y + c``."""
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    return p, q


def _monic_scaled(d1, d2, d3, d4):
    A, B, C = d2 / d1, d3 / d1, d4 / d1
    s = max(abs(A), math.sqrt(abs(B)), abs(C) ** (1.0 / 3.0))
    if s == 0:
        return 0.0, 0.0, 0.0, 0.0
    # power of two keeps the scaling exact; repeated division avoids s**3 underflow
    s = math.ldexp(1.0, math.frexp(s)[1])
    return s, A / s, B / s / s, C / s / s / s


def _polish(y, a, b, c, steps=2, extra=4, target=1e-12):
    """Guarded Newton steps on the monic cubic.

    ``steps`` are always attempted; up to ``extra`` more are taken while the
    residual exceeds ``target`` times the largest term (roots much smaller
    than the coefficient scale need them).
    """
    for k in range(steps + extra):
        f = ((y + a) * y + b) * y + c
        if k >= steps and abs(f) <= target * max(abs(y) ** 3, abs(a * y * y), abs(b * y), abs(c)):
            break
        df = (3.0 * y + 2.0 * a) * y + b
        if df == 0:
            break
        y_new = y - f / df
        f_new = ((y_new + a) * y_new + b) * y_new + c
        if abs(f_new) > abs(f):
            break
        y = y_new
    return y


def _deflate(ys, a, b, c):
    """Re-derive the two smaller roots from the largest one via Vieta.

    ``y2 y3 = -c / y1`` together with the better conditioned of
    ``y2 + y3 = -a - y1`` and ``y2 + y3 = (b - y2 y3) / y1`` stays accurate
    for small or clustered roots, where the trigonometric form loses
    absolute precision.
    """
    y1 = _polish(max(ys, key=abs), a, b, c)
    if y1 == 0:
        return ys
    p_ = -c / y1
    # the pair sum from a cancels when the pair is tiny next to y1, from b when y2 ~ -y3
    s_a, s_b = -a - y1, (b - p_) / y1
    cond_a = (abs(a) + abs(y1)) / max(abs(s_a), 1e-300)
    cond_b = (abs(b) + abs(p_)) / max(abs(b - p_), 1e-300)
    s_ = s_a if cond_a <= cond_b else s_b
    disc = max(s_ * s_ - 4.0 * p_, 0.0)
    h = -0.5 * (-s_ + math.copysign(math.sqrt(disc), -s_))
    y2 = h
    y3 = p_ / h if h != 0 else 0.0
    return [y1, y2, y3]


def _lead_negligible(coeffs, rel_tol) -> bool:
    """True when the leading coefficient can be dropped.

    Two conditions must both hold: ``|c_0|`` is below ``rel_tol`` times the
    largest other coefficient, and the root(s) it creates lie more than
    ``1/rel_tol`` times beyond the Fujiwara-type root scale of the remainder
    (so they are effectively at infinity).  The second test keeps genuine
    cubics whose coefficients are large only because x is measured in small
    units.
    """
    lead, rest = coeffs[0], list(coeffs[1:])
    if lead == 0:
        return True
    if abs(lead) > rel_tol * max(abs(c) for c in rest):
        return False
    skip = 0
    while rest and rest[0] == 0:
        rest.pop(0)
        skip += 1
    if len(rest) < 2:
        return False
    k = len(rest) - 1
    r = max(abs(rest[i] / rest[0]) ** (1.0 / i) for i in range(1, k + 1))
    big = abs(rest[0] / lead) ** (1.0 / (skip + 1))
    return big * rel_tol >= r


def _solve_quadratic(a, b, c, rel_tol):
    if _lead_negligible((a, b, c), rel_tol):
        if b == 0:
            if c == 0:
                return [0.0]
            raise ValueError("degenerate polynomial has no roots")
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    qq = -0.5 * (b + math.copysign(sq, b))
    if qq == 0:
        return [0.0, 0.0]
    return sorted([qq / a, c / qq])


def solve_cubic(d1, d2, d3, d4, rel_tol=1e-12):
    """Real roots of ``d1 x^3 + d2 x^2 + d3 x + d4``, ascending.

    Three real roots use the trigonometric form; one real root uses the
    Cardano form written to avoid cancellation.  The polynomial is first
    rescaled so that its monic coefficients are O(1), and every root gets two
    guarded Newton steps.  A leading term smaller than ``rel_tol`` times the
    others, compared at the root scale of the lower-degree remainder, drops
    the degree.
    """
    if d1 == 0 and d2 == 0 and d3 == 0 and d4 == 0:
        raise ValueError("all cubic coefficients are zero")
    if _lead_negligible((d1, d2, d3, d4), rel_tol):
        return _solve_quadratic(d2, d3, d4, rel_tol)

    s, a, b, c = _monic_scaled(d1, d2, d3, d4)
    if s == 0:
        return [0.0, 0.0, 0.0]
    p, q = _depressed(a, b, c)
    if 4.0 * p**3 + 27.0 * q**2 < 0:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = (3.0 * q / (2.0 * p)) * math.sqrt(-3.0 / p)
        phase = math.acos(min(1.0, max(-1.0, arg)))
        ys = [r * math.cos((phase + 2.0 * k * math.pi) / 3.0) - a / 3.0 for k in range(3)]
        ys = _deflate(ys, a, b, c)
    else:
        sq = math.sqrt(max(q * q / 4.0 + p**3 / 27.0, 0.0))
        u = -q / 2.0 - math.copysign(sq, q)
        u = math.copysign(abs(u) ** (1.0 / 3.0), u)
        t = u - p / (3.0 * u) if u != 0 else 0.0
        ys = [t - a / 3.0]
    return sorted(s * _polish(y, a, b, c) for y in ys)


def label_branches(qs):
    """Branch labels for a set of physical roots, by rank of ``|Q_s|``."""
    n = len(qs)
    if n == 0:
        return []
    if n == 1:
        return [Branch.MONO]
    order = sorted(range(n), key=lambda i: (abs(qs[i]), qs[i]))
    labels = [Branch.MIDDLE] * n
    labels[order[0]] = Branch.LOWER
    labels[order[-1]] = Branch.UPPER
    return labels


def steady_states(p: PhysicalParams, d: DrivePoint, dp: DerivedParams | None = None):
    """All real roots at drive ``d`` as :class:`SteadyState` objects.

    Unphysical roots (``kappa_eff <= 0``) are kept with ``physical=False``
    and ``branch=None``.
    """
    from .stability import assess_stability

    dp = dp or derive_params(p)
    roots = solve_cubic(*cubic_coefficients(p, d))
    raw = []
    for q in roots:
        kappa_eff, delta_eff = effective_rates(p, d, q)
        approx_ok = abs(p.g_kappa * q) / p.kappa < APPROX_GUARD
        if kappa_eff <= 0:
            raw.append(
                SteadyState(
                    q_s=q, c_s=complex("nan"), kappa_eff=kappa_eff, delta_eff=delta_eff,
                    rh=(math.nan, math.nan, math.nan), stable=False, static_stable=False,
                    marginal=False, branch=None, physical=False, drive=d, approx_ok=approx_ok,
                )
            )
            continue
        c_s = cavity_amplitude(p, d, q)
        st = assess_stability(p, dp, d, q, c_s)
        raw.append(
            SteadyState(
                q_s=q, c_s=c_s, kappa_eff=kappa_eff, delta_eff=delta_eff, rh=st.s,
                stable=st.stable, static_stable=st.static_stable, marginal=st.marginal,
                branch=None, physical=True, drive=d, approx_ok=approx_ok,
            )
        )
    phys = [s for s in raw if s.physical]
    labels = iter(label_branches([s.q_s for s in phys]))
    return [replace(s, branch=next(labels)) if s.physical else s for s in raw]


def steady_state_map(p: PhysicalParams, d: DrivePoint, q: float) -> float:
    """Displacement implied by the exact self-consistency relation at ``q``."""
    kappa_eff, delta_eff = effective_rates(p, d, q)
    if kappa_eff <= 0:
        raise UnphysicalStateError(f"kappa_eff={kappa_eff:.6g} <= 0 at q_s={q:.6g}")
    eps = _epsilon(p, d)
    c = cavity_amplitude(p, d, q)
    mw2 = p.m * p.omega_m**2
    # -i (c* - c) = -2 Im(c)
    return (-HBAR * p.g_omega * abs(c) ** 2 - HBAR * p.g_kappa * eps * c.imag / math.sqrt(p.kappa)) / mw2


def fixed_point_residual(p: PhysicalParams, d: DrivePoint, q_s: float) -> float:
    """``F(q_s) - q_s`` where ``F`` is the exact self-consistency map [m]."""
    return steady_state_map(p, d, q_s) - q_s


def fixed_point_solve(p, d, q0, damping=0.5, max_iter=10_000, rtol=1e-12):
    """Damped fixed-point iteration ``q <- q + damping (F(q) - q)``.

    Returns ``(q, iterations)``.  Raises :class:`ConvergenceError` carrying the
    number of iterates when the tolerance is not met; repelling fixed points
    (the middle branch, typically) end up here.
    """
    q = q0
    for it in range(1, max_iter + 1):
        try:
            step = damping * fixed_point_residual(p, d, q)
        except UnphysicalStateError as exc:
            raise ConvergenceError(f"iterate left the physical region after {it} steps", it) from exc
        q += step
        if abs(step) <= rtol * max(abs(q), 1e-300):
            return q, it
    raise ConvergenceError(f"no convergence after {max_iter} iterates", max_iter)


def exact_fixed_point(p, d, q0, rel_window=0.2):
    """Root of ``F(q) - q`` near ``q0`` by bracketing; works for repelling roots too."""
    import numpy as np
    from scipy.optimize import brentq

    f = lambda q: fixed_point_residual(p, d, q)
    if q0 == 0:
        return 0.0 if f(0.0) == 0 else brentq(f, -1e-15, 1e-15)
    lo_f, hi_f = 1.0 - rel_window, 1.0 + rel_window
    for _ in range(40):
        a, b = q0 * lo_f, q0 * hi_f
        try:
            fa, fb = f(a), f(b)
        except UnphysicalStateError:
            fa = fb = 1.0
        if fa * fb < 0:
            return brentq(f, min(a, b), max(a, b), xtol=1e-30, rtol=4.0 * np.finfo(float).eps)
        lo_f, hi_f = 1.0 - (1.0 - lo_f) / 2, 1.0 + (hi_f - 1.0) / 2
        if hi_f - 1.0 < 1e-9:
            break
    raise ConvergenceError("no sign change of the fixed-point residual near q0")
