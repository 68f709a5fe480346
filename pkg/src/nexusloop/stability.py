"""Linearized fluctuations: drift/diffusion matrices, stability, covariance, entanglement.

Quadrature basis is ``(X, Y, q, p)`` with optical quadratures dimensionless and
mechanical ones in SI.  :func:`nondimensionalize` maps everything to the
vacuum-variance-1/2 convention used by :func:`log_negativity`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import matrix_balance

from .errors import (
    NumericalInconsistencyError,
    SingularSystemError,
    UnphysicalStateError,
    UnstableSystemError,
)
from .model import HBAR, DerivedParams, DrivePoint, PhysicalParams, SteadyState, _epsilon

MARGINAL_REL = 1e-6
LYAPUNOV_REL_RESIDUAL = 1e-10
PHYSICALITY_TOL = 1e-9
E_N_FLOOR = 1e-12

_OMEGA = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)
_PT = np.diag([1.0, 1.0, 1.0, -1.0])  # partial transpose: mechanical momentum sign flip


class DMode(str, Enum):
    PAPER = "paper"  # diagonal diffusion, no optical/mechanical noise cross terms
    EXACT = "exact"  # diffusion from the full noise vector, X-p and Y-p terms kept


@dataclass(frozen=True)
class DriftMatrix:
    a: np.ndarray
    u1: float
    u2: float
    v1: float
    v2: float


@dataclass(frozen=True)
class DiffusionMatrix:
    d: np.ndarray
    mode: DMode


@dataclass(frozen=True)
class StabilityVerdict:
    s: tuple
    stable: bool
    static_stable: bool
    marginal: bool
    det: float


@dataclass(frozen=True)
class CovarianceResult:
    v: np.ndarray
    eta_minus: float
    e_n: float
    nu_minus: float
    nu_plus: float

    @property
    def physical(self) -> bool:
        return self.nu_minus >= 0.5 - PHYSICALITY_TOL


def _coefficients(p: PhysicalParams, d: DrivePoint, q_s: float, c_s: complex):
    kappa_eff = p.kappa + p.g_kappa * q_s
    if kappa_eff <= 0:
        raise UnphysicalStateError(f"kappa_eff={kappa_eff:.6g} <= 0")
    eps = _epsilon(p, d)
    r2 = math.sqrt(2.0)
    gk, gw = p.g_kappa, p.g_omega
    u1 = -gk / r2 * c_s.real + gk * eps / math.sqrt(2.0 * kappa_eff) + r2 * gw * c_s.imag
    u2 = -gk / r2 * c_s.imag - r2 * gw * c_s.real
    v1 = -HBAR * gw * r2 * c_s.real
    v2 = -HBAR * gw * r2 * c_s.imag - HBAR * gk * eps / math.sqrt(2.0 * p.kappa)
    return kappa_eff, d.detuning + gw * q_s, u1, u2, v1, v2


def _require_physical(ss: SteadyState):
    if not ss.physical or ss.kappa_eff <= 0:
        raise UnphysicalStateError(f"steady state q_s={ss.q_s:.6g} is unphysical")


def drift_matrix(p: PhysicalParams, dp: DerivedParams, d: DrivePoint, ss: SteadyState) -> DriftMatrix:
    _require_physical(ss)
    ke, de, u1, u2, v1, v2 = _coefficients(p, d, ss.q_s, ss.c_s)
    a = np.array(
        [
            [-ke / 2.0, de, u1, 0.0],
            [-de, -ke / 2.0, u2, 0.0],
            [0.0, 0.0, 0.0, 1.0 / p.m],
            [v1, v2, -p.m * p.omega_m**2, -dp.gamma],
        ]
    )
    return DriftMatrix(a=a, u1=u1, u2=u2, v1=v1, v2=v2)


def diffusion_matrix(p: PhysicalParams, dp: DerivedParams, ss: SteadyState, mode=DMode.PAPER) -> DiffusionMatrix:
    """Symmetrized noise correlation matrix.

    ``EXACT`` writes the noise vector as ``B w`` with independent white
    sources ``w = (X_in, Y_in, xi)`` of intensities ``(1/2, 1/2, hbar m
    omega_m gamma (2 n + 1))`` and returns ``B W B^T``.  Its diagonal equals the
    ``PAPER`` matrix; the difference is the X-p and Y-p entries.
    """
    _require_physical(ss)
    mode = DMode(mode)
    b, w = noise_sources(p, dp, ss)
    if mode is DMode.EXACT:
        dm = b @ np.diag(w) @ b.T
        dm = 0.5 * (dm + dm.T)
    else:
        ke = ss.kappa_eff
        thermal = HBAR * p.m * p.omega_m * dp.gamma * (2.0 * dp.n_bar + 1.0)
        back = HBAR**2 * p.g_kappa**2 * abs(ss.c_s) ** 2 / (4.0 * p.kappa)
        dm = np.diag([ke / 2.0, ke / 2.0, 0.0, thermal + back])
    return DiffusionMatrix(d=dm, mode=mode)


def noise_sources(p: PhysicalParams, dp: DerivedParams, ss: SteadyState):
    """Return ``(B, w)``: noise loading matrix (4x3) and source intensities."""
    sk = math.sqrt(ss.kappa_eff)
    a = HBAR * p.g_kappa / math.sqrt(2.0 * p.kappa)
    b = np.array(
        [
            [sk, 0.0, 0.0],
            [0.0, sk, 0.0],
            [0.0, 0.0, 0.0],
            [-a * ss.c_s.imag, a * ss.c_s.real, 1.0],
        ]
    )
    w = np.array([0.5, 0.5, HBAR * p.m * p.omega_m * dp.gamma * (2.0 * dp.n_bar + 1.0)])
    return b, w


def _rh_terms(p: PhysicalParams, gamma: float, ke, de, u1, u2, v1, v2):
    m, wm2 = p.m, p.omega_m**2
    uv = (u1 * v1 + u2 * v2) / m
    t1 = (wm2 * (ke / 4.0) ** 2, wm2 * de**2, de * (u1 * v2 - u2 * v1) / m, -ke / 2.0 * uv)
    t2 = (gamma**2 * ke, de**2 * ke, ke**3 / 4.0, gamma * (ke**2 + wm2), uv)
    x = gamma * (de**2 + ke**2 / 4.0) + ke * wm2 - uv
    bracket = m * wm2 * (4.0 * de**2 + ke**2) + u1 * (4.0 * de * v2 - 2.0 * ke * v1) - 2.0 * u2 * (2.0 * de * v1 + ke * v2)
    t3 = (
        (gamma + ke) * (gamma * ke + de**2 + ke**2 / 4.0 + wm2) * x,
        -(x**2),
        -((gamma + ke) ** 2) / (4.0 * m) * bracket,
    )
    det_terms = (wm2 * ke**2 / 4.0, wm2 * de**2, t1[2], t1[3])
    return t1, t2, t3, det_terms


def _assess(p, gamma, coeffs) -> StabilityVerdict:
    t1, t2, t3, dt = _rh_terms(p, gamma, *coeffs)
    s = tuple(math.fsum(t) for t in (t1, t2, t3))
    scales = tuple(math.fsum(abs(x) for x in t) for t in (t1, t2, t3))
    det = math.fsum(dt)
    det_scale = math.fsum(abs(x) for x in dt)
    marginal = any(abs(si) < MARGINAL_REL * sc for si, sc in zip(s, scales)) or abs(det) < MARGINAL_REL * det_scale
    return StabilityVerdict(
        s=s,
        stable=all(si > 0 for si in s),
        static_stable=det > 0,
        marginal=marginal,
        det=det,
    )


def assess_stability(p: PhysicalParams, dp: DerivedParams, d: DrivePoint, q_s: float, c_s: complex) -> StabilityVerdict:
    """Routh-Hurwitz triple, static (saddle) verdict and marginal flag for one root.

    ``det`` is ``m det(A)``; its sign separates saddles from nodes and foci.
    """
    return _assess(p, dp.gamma, _coefficients(p, d, q_s, c_s))


def routh_hurwitz(p: PhysicalParams, dp: DerivedParams, ss: SteadyState):
    """Return ``(s1, s2, s3, stable)`` with ``stable`` true iff all three are positive."""
    _require_physical(ss)
    v = assess_stability(p, dp, ss.drive, ss.q_s, ss.c_s)
    return (*v.s, v.stable)


def characteristic_polynomial(a: np.ndarray) -> np.ndarray:
    """Coefficients ``[1, c1, ..., cn]`` of ``det(lambda I - A)`` by Faddeev-LeVerrier."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    mk = np.zeros_like(a)
    ident = np.eye(n)
    for k in range(1, n + 1):
        mk = a @ mk + coeffs[-1] * ident
        coeffs.append(-np.trace(a @ mk) / k)
    return np.array(coeffs)


def hurwitz_generic(a: np.ndarray) -> bool:
    """True iff every eigenvalue of the 4x4 matrix ``a`` has negative real part.

    Uses the characteristic polynomial and the Hurwitz determinant conditions
    for a quartic.  The matrix is balanced and rescaled first so the
    polynomial coefficients are O(1); neither step moves eigenvalues across
    the imaginary axis.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (4, 4):
        raise ValueError("hurwitz_generic expects a 4x4 matrix")
    bal, _ = matrix_balance(a, permute=False)
    scale = np.max(np.abs(bal))
    if scale == 0:
        return False
    _, a1, a2, a3, a4 = characteristic_polynomial(bal / scale)
    h2 = a1 * a2 - a3
    h3 = a3 * h2 - a1 * a1 * a4
    return bool(a1 > 0 and a2 > 0 and a3 > 0 and a4 > 0 and h2 > 0 and h3 > 0)


def scaling_matrix(dp: DerivedParams) -> np.ndarray:
    return np.diag([1.0, 1.0, 1.0 / (math.sqrt(2.0) * dp.q_zpf), 1.0 / (math.sqrt(2.0) * dp.p_zpf)])


def nondimensionalize(a: np.ndarray, d: np.ndarray, dp: DerivedParams):
    """``(S A S^-1, S D S)`` with ``S`` mapping ``(q, p)`` to vacuum-1/2 quadratures."""
    s = scaling_matrix(dp)
    s_inv = np.diag(1.0 / np.diag(s))
    return s @ a @ s_inv, s @ d @ s


def solve_lyapunov(a: np.ndarray, d: np.ndarray, refine: int = 2) -> np.ndarray:
    """Solve ``A V + V A^T = -D`` via the 16x16 Kronecker-sum system.

    Raises :class:`UnstableSystemError` if ``A`` is not Hurwitz and
    :class:`SingularSystemError` when it is marginal.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    a.shape[0]
    eig = np.linalg.eigvals(a)
    lam_scale = max(np.max(np.abs(eig)), np.finfo(float).tiny)
    max_re = float(np.max(eig.real))
    if abs(max_re) <= 1e-13 * lam_scale:
        raise SingularSystemError(f"drift matrix is marginal (max Re lambda = {max_re:.3e})")
    if max_re > 0:
        raise UnstableSystemError(f"drift matrix is not Hurwitz (max Re lambda = {max_re:.3e})")

    return solve_lyapunov_unchecked(a, d, refine)


def solve_lyapunov_unchecked(a: np.ndarray, d: np.ndarray, refine: int = 2) -> np.ndarray:
    """Kronecker-sum solve without the stability gate.

    For an unstable ``A`` the result is not a covariance; it is only useful
    as a diagnostic.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    n = a.shape[0]
    ident = np.eye(n)
    k = np.kron(ident, a) + np.kron(a, ident)
    rhs = -d.reshape(-1, order="F")
    try:
        x = np.linalg.solve(k, rhs)
        for _ in range(refine):
            x = x + np.linalg.solve(k, rhs - k @ x)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    v = x.reshape(n, n, order="F")
    v = 0.5 * (v + v.T)
    res = np.linalg.norm(a @ v + v @ a.T + d)
    if res > LYAPUNOV_REL_RESIDUAL * max(np.linalg.norm(d), np.finfo(float).tiny):
        raise NumericalInconsistencyError(f"Lyapunov residual {res:.3e} exceeds bound")
    return v


def _two_mode_eigs(sigma, det_v, tol=1e-9):
    disc = sigma * sigma - 4.0 * det_v
    if disc < 0:
        if disc < -tol * max(sigma * sigma, 1e-300):
            raise NumericalInconsistencyError(f"negative symplectic discriminant {disc:.3e}")
        disc = 0.0
    hi = (sigma + math.sqrt(disc)) / 2.0
    if hi <= 0:
        return 0.0, 0.0
    # smaller root from the product, avoiding cancellation when the two coincide
    lo = max(det_v / hi, 0.0)
    return math.sqrt(lo), math.sqrt(hi)


def _symplectic_spectrum(v: np.ndarray):
    """Smallest and largest symplectic eigenvalue, from ``eig(Omega V) = +-i nu``.

    The eigenvalue route keeps full precision when the two eigenvalues
    coincide (pure states), where the closed two-mode formula loses half
    the digits to a square root of a vanishing discriminant.
    """
    nu = np.sort(np.abs(np.linalg.eigvals(_OMEGA @ v).imag))
    return float(nu[0]), float(nu[-1])


def log_negativity(v: np.ndarray) -> CovarianceResult:
    """Logarithmic negativity of a two-mode Gaussian covariance (vacuum = I/2).

    The block-determinant invariants are checked for consistency (raising
    :class:`NumericalInconsistencyError`); the eigenvalues themselves come
    from :func:`_symplectic_spectrum` of ``V`` and of its partial transpose.
    Values of ``E_N`` below ``E_N_FLOOR`` are rounding noise and reported as 0.
    """
    v = np.asarray(v, dtype=float)
    va, vb, vc = v[:2, :2], v[2:, 2:], v[:2, 2:]
    det_a, det_b, det_c = np.linalg.det(va), np.linalg.det(vb), np.linalg.det(vc)
    det_v = float(np.linalg.det(v))
    _two_mode_eigs(det_a + det_b - 2.0 * det_c, det_v)
    _two_mode_eigs(det_a + det_b + 2.0 * det_c, det_v)
    eta_minus, _ = _symplectic_spectrum(_PT @ v @ _PT)
    nu_minus, nu_plus = _symplectic_spectrum(v)
    e_n = 0.0 if eta_minus >= 0.5 else -math.log(2.0 * eta_minus)
    if e_n < E_N_FLOOR:
        e_n = 0.0
    return CovarianceResult(v=v, eta_minus=eta_minus, e_n=e_n, nu_minus=nu_minus, nu_plus=nu_plus)


def dimensionless_system(p: PhysicalParams, dp: DerivedParams, ss: SteadyState, mode=DMode.PAPER):
    """Drift and diffusion of one steady state in dimensionless quadratures."""
    a = drift_matrix(p, dp, ss.drive, ss).a
    dm = diffusion_matrix(p, dp, ss, mode).d
    return nondimensionalize(a, dm, dp)


def covariance(p: PhysicalParams, dp: DerivedParams, ss: SteadyState, mode=DMode.PAPER) -> CovarianceResult:
    """Stationary covariance and entanglement of a stable, non-marginal steady state."""
    _require_physical(ss)
    if ss.marginal:
        raise SingularSystemError("steady state is in the marginal band")
    if not ss.stable:
        raise UnstableSystemError("steady state fails the Routh-Hurwitz test")
    a, dm = dimensionless_system(p, dp, ss, mode)
    return log_negativity(solve_lyapunov(a, dm))
