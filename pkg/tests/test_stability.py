import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from nexusloop.errors import NumericalInconsistencyError, SingularSystemError, UnstableSystemError
from nexusloop.loop import loop_point
from nexusloop.model import HBAR, Branch, DrivePoint, derive_params, steady_states
from nexusloop.stability import (
    DMode, characteristic_polynomial, covariance, diffusion_matrix, dimensionless_system, drift_matrix,
    hurwitz_generic, log_negativity, nondimensionalize, routh_hurwitz, scaling_matrix, solve_lyapunov,
)
from nexusloop.validate import tmsv

OMEGA = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)


def state(p, d, branch):
    return next(s for s in steady_states(p, d) if s.branch is branch)


@pytest.fixture(scope="module")
def start_states(params, spec):
    d = loop_point(spec, 0.0)
    return d, {s.branch: s for s in steady_states(params, d)}


# ---------------------------------------------------------------- drift

def test_drift_structure(params, derived, spec):
    for th in np.linspace(0, 2 * math.pi, 9):
        d = loop_point(spec, th)
        for s in steady_states(params, d):
            a = drift_matrix(params, derived, d, s).a
            assert a[0, 3] == a[1, 3] == a[2, 0] == a[2, 1] == a[2, 2] == 0.0
            assert a[2, 3] == 1.0 / params.m
            assert np.trace(a) == pytest.approx(-s.kappa_eff - derived.gamma, rel=1e-13)


def test_drift_undriven_block_diagonal(params, derived):
    d = DrivePoint(0.0, 2e4)
    s = steady_states(params, d)[0]
    dm = drift_matrix(params, derived, d, s)
    assert dm.u1 == dm.u2 == dm.v1 == dm.v2 == 0.0
    assert not dm.a[:2, 2:].any() and not dm.a[2:, :2].any()


def test_drift_uncoupled(params):
    p = replace(params, g_omega=0.0, g_kappa=0.0)
    d = DrivePoint(2e-5, 3e4)
    s = steady_states(p, d)[0]
    dm = drift_matrix(p, derive_params(p), d, s)
    assert dm.u1 == dm.u2 == dm.v1 == dm.v2 == 0.0


def test_lower_start_state_hurwitz(params, derived, start_states):
    d, states = start_states
    a = drift_matrix(params, derived, d, states[Branch.LOWER]).a
    assert np.linalg.eigvals(a).real.max() < 0


@pytest.mark.xfail(strict=True, reason="upper start state sits past a Hopf boundary: max Re(eig) = +715 1/s")
def test_upper_start_state_hurwitz(params, derived, start_states):
    d, states = start_states
    a = drift_matrix(params, derived, d, states[Branch.UPPER]).a
    assert np.linalg.eigvals(a).real.max() < 0


def test_upper_start_state_static_stable(start_states):
    _, states = start_states
    assert states[Branch.UPPER].static_stable and states[Branch.LOWER].static_stable


# ---------------------------------------------------------------- diffusion

def test_diffusion_zero_temperature_uncoupled(params):
    p = replace(params, g_kappa=0.0, temperature=0.0)
    dp = derive_params(p)
    s = steady_states(p, DrivePoint(1e-5, 2e4))[0]
    d = diffusion_matrix(p, dp, s).d
    np.testing.assert_array_equal(d, np.diag([p.kappa / 2, p.kappa / 2, 0.0, HBAR * p.m * p.omega_m * dp.gamma]))


def test_diffusion_paper_formula(params, derived, start_states):
    _, states = start_states
    s = states[Branch.UPPER]
    expected = np.diag([
        s.kappa_eff / 2, s.kappa_eff / 2, 0.0,
        HBAR * params.m * params.omega_m * derived.gamma * (2 * derived.n_bar + 1)
        + HBAR**2 * params.g_kappa**2 * abs(s.c_s) ** 2 / (4 * params.kappa),
    ])
    np.testing.assert_allclose(diffusion_matrix(params, derived, s, DMode.PAPER).d, expected, rtol=1e-14)


def test_diffusion_exact_equals_paper_without_dissipative_coupling(params):
    p = replace(params, g_kappa=0.0)
    dp = derive_params(p)
    for s in steady_states(p, DrivePoint(3e-5, 1e4)):
        np.testing.assert_array_equal(diffusion_matrix(p, dp, s, DMode.EXACT).d, diffusion_matrix(p, dp, s, DMode.PAPER).d)


def test_diffusion_exact_structure(params, derived, start_states):
    _, states = start_states
    for s in (states[Branch.UPPER], states[Branch.LOWER]):
        de = diffusion_matrix(params, derived, s, DMode.EXACT).d
        dpaper = diffusion_matrix(params, derived, s, DMode.PAPER).d
        np.testing.assert_array_equal(de, de.T)
        np.testing.assert_allclose(np.diag(de), np.diag(dpaper), rtol=1e-12)
        off = de - np.diag(np.diag(de))
        mask = np.zeros((4, 4), bool)
        mask[0, 3] = mask[3, 0] = mask[1, 3] = mask[3, 1] = True
        assert not off[~mask].any() and off[mask].any()
        _, dd = nondimensionalize(np.eye(4), de, derived)
        assert np.linalg.eigvalsh(dd).min() >= -1e-12 * np.abs(dd).max()


# ---------------------------------------------------------------- Routh-Hurwitz

def test_rh_decoupled_stable(params, derived):
    s = steady_states(params, DrivePoint(0.0, 3e4))[0]
    s1, s2, s3, stable = routh_hurwitz(params, derived, s)
    assert stable and s1 > 0 and s2 > 0 and s3 > 0


def test_rh_middle_unstable(params, derived, start_states):
    d, states = start_states
    mid = states[Branch.MIDDLE]
    assert not routh_hurwitz(params, derived, mid)[3]
    assert not hurwitz_generic(drift_matrix(params, derived, d, mid).a)


def test_rh_matches_steady_state_flag(params, derived, spec):
    for th in np.linspace(0, 2 * math.pi, 33):
        for s in steady_states(params, loop_point(spec, th)):
            assert routh_hurwitz(params, derived, s)[3] == s.stable


# ---------------------------------------------------------------- generic Hurwitz

def test_hurwitz_generic_trivial():
    assert hurwitz_generic(-np.eye(4))
    for eps in (1e-9, 1e-3, 1.0):
        assert not hurwitz_generic(np.diag([-1.0, -1.0, -1.0, eps]))


def test_characteristic_polynomial_matches_numpy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.normal(size=(4, 4)) * rng.uniform(0.1, 10)
        np.testing.assert_allclose(characteristic_polynomial(a), np.poly(a), rtol=1e-9, atol=1e-9 * np.abs(a).max() ** 4)


@given(st.integers(0, 2**32 - 1))
def test_hurwitz_generic_matches_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4)) - rng.uniform(0, 2) * np.eye(4)
    re = np.linalg.eigvals(a).real.max()
    if abs(re) > 1e-6:
        assert hurwitz_generic(a) == (re < 0)


def test_hurwitz_generic_on_physical_scales(params, derived, spec):
    # wildly different row scales (SI mechanics next to dimensionless optics)
    for th in np.linspace(0, 2 * math.pi, 65):
        d = loop_point(spec, th)
        for s in steady_states(params, d):
            a = drift_matrix(params, derived, d, s).a
            re = np.linalg.eigvals(a).real.max()
            if abs(re) > 1e-6 * derived.gamma:
                assert hurwitz_generic(a) == (re < 0)


# ---------------------------------------------------------------- scaling

def test_nondimensionalize_round_trip(params, derived, start_states):
    d, states = start_states
    s = states[Branch.LOWER]
    a = drift_matrix(params, derived, d, s).a
    dm = diffusion_matrix(params, derived, s).d
    a2, d2 = nondimensionalize(a, dm, derived)
    sm = scaling_matrix(derived)
    si = np.linalg.inv(sm)
    np.testing.assert_allclose(si @ a2 @ sm, a, rtol=1e-14, atol=0)
    np.testing.assert_allclose(si @ d2 @ si, dm, rtol=1e-14, atol=0)


def test_vacuum_limit(params):
    p = replace(params, temperature=0.0)
    dp = derive_params(p)
    s = steady_states(p, DrivePoint(0.0, 2e4))[0]
    v = solve_lyapunov(*dimensionless_system(p, dp, s))
    np.testing.assert_allclose(v, 0.5 * np.eye(4), atol=1e-12)


def test_thermal_mechanics_limit(params, derived):
    s = steady_states(params, DrivePoint(0.0, 2e4))[0]
    v = solve_lyapunov(*dimensionless_system(params, derived, s))
    np.testing.assert_allclose(np.diag(v), [0.5, 0.5, derived.n_bar + 0.5, derived.n_bar + 0.5], rtol=1e-10)


def _kron_cond(a):
    n = a.shape[0]
    return np.linalg.cond(np.kron(np.eye(n), a) + np.kron(a, np.eye(n)))


def test_scaling_improves_conditioning(params, derived, start_states):
    d, states = start_states
    s = states[Branch.LOWER]
    a = drift_matrix(params, derived, d, s).a
    a2, _ = nondimensionalize(a, diffusion_matrix(params, derived, s).d, derived)
    assert _kron_cond(a2) < 1e-6 * _kron_cond(a)


# ---------------------------------------------------------------- Lyapunov

def test_lyapunov_scalar_balance():
    np.testing.assert_allclose(solve_lyapunov(-0.5 * np.eye(4), np.eye(4)), np.eye(4), atol=1e-15)


def test_lyapunov_diagonal_pair():
    v = solve_lyapunov(np.diag([-1.0, -2.0, -3.0, -4.0]), np.diag([2.0, 4.0, 6.0, 8.0]))
    np.testing.assert_allclose(v, np.eye(4), atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_lyapunov_matches_bartels_stewart(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4))
    a -= (np.linalg.eigvals(a).real.max() + rng.uniform(0.1, 2)) * np.eye(4)
    m = rng.normal(size=(4, 4))
    d = m @ m.T
    v = solve_lyapunov(a, d)
    np.testing.assert_array_equal(v, v.T)
    assert np.linalg.norm(a @ v + v @ a.T + d) < 1e-10 * np.linalg.norm(d)
    np.testing.assert_allclose(v, scipy.linalg.solve_continuous_lyapunov(a, -d), rtol=1e-8, atol=1e-10 * np.abs(v).max())


def test_lyapunov_rejects_unstable():
    with pytest.raises(UnstableSystemError):
        solve_lyapunov(np.diag([-1.0, -1.0, -1.0, 0.5]), np.eye(4))


def test_lyapunov_rejects_marginal():
    with pytest.raises(SingularSystemError):
        solve_lyapunov(np.diag([-1.0, -1.0, -1.0, 0.0]), np.eye(4))


def test_lyapunov_residual_on_loop(params, derived, spec):
    for th in np.linspace(0, 2 * math.pi, 33):
        for s in steady_states(params, loop_point(spec, th)):
            if s.stable and not s.marginal:
                a, d = dimensionless_system(params, derived, s)
                v = solve_lyapunov(a, d)
                assert np.linalg.norm(a @ v + v @ a.T + d) < 1e-10 * np.linalg.norm(d)


def test_covariance_refuses_unstable(params, derived, start_states):
    _, states = start_states
    with pytest.raises(UnstableSystemError):
        covariance(params, derived, states[Branch.MIDDLE])


# ---------------------------------------------------------------- log negativity

def test_vacuum_not_entangled():
    r = log_negativity(0.5 * np.eye(4))
    assert r.e_n == 0.0
    assert r.eta_minus == pytest.approx(0.5, abs=1e-15) and r.nu_minus == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.3])
def test_tmsv_analytic(r):
    res = log_negativity(tmsv(r))
    assert res.eta_minus == pytest.approx(math.exp(-2 * r) / 2, rel=1e-9)
    assert res.e_n == pytest.approx(2 * r, abs=1e-9)
    assert res.nu_minus == pytest.approx(0.5, abs=1e-9)


def test_tmsv_fixture_is_independent():
    c, s = math.cosh(1.0) / 2, math.sinh(1.0) / 2
    expected = np.array([[c, 0, s, 0], [0, c, 0, -s], [s, 0, c, 0], [0, -s, 0, c]])
    np.testing.assert_allclose(tmsv(0.5), expected, rtol=1e-15)


def test_mode_swap_symmetry():
    rng = np.random.default_rng(2)
    perm = np.array([2, 3, 0, 1])
    for _ in range(20):
        m = rng.normal(size=(4, 4))
        v = m @ m.T + 0.6 * np.eye(4)
        a, b = log_negativity(v), log_negativity(v[np.ix_(perm, perm)])
        assert a.e_n == pytest.approx(b.e_n, abs=1e-12)
        assert a.nu_minus == pytest.approx(b.nu_minus, rel=1e-12)


def test_inconsistent_covariance_raises():
    v = np.array([[-0.14, -0.31, -0.1, 1.04], [-0.31, 0.86, 0.13, 0.28],
                  [-0.1, 0.13, -0.88, -1.1], [1.04, 0.28, -1.1, 0.14]])
    with pytest.raises(NumericalInconsistencyError):
        log_negativity(v)


@given(st.integers(0, 2**32 - 1))
def test_consistent_noise_gives_physical_state(seed):
    # D >= |i/2 (A Omega + Omega A^T)| guarantees V + i Omega / 2 >= 0
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4))
    a -= (np.linalg.eigvals(a).real.max() + rng.uniform(0.1, 2)) * np.eye(4)
    h = 0.5j * (a @ OMEGA + OMEGA @ a.T)
    w, u = np.linalg.eigh(h)
    d = (u @ np.diag(np.abs(w)) @ u.conj().T).real
    d = 0.5 * (d + d.T)
    v = solve_lyapunov(a, d)
    assert log_negativity(v).nu_minus >= 0.5 - 1e-9


def test_zero_coupling_null(params):
    p = replace(params, g_omega=0.0, g_kappa=0.0)
    dp = derive_params(p)
    for pw in (0.0, 1e-5, 4e-5):
        s = steady_states(p, DrivePoint(pw, 3e4))[0]
        res = covariance(p, dp, s)
        assert not res.v[:2, 2:].any()
        assert res.e_n == 0.0


def test_lower_branch_not_entangled(params, derived, start_states):
    _, states = start_states
    assert covariance(params, derived, states[Branch.LOWER]).e_n == 0.0


def test_lower_branch_physical(params, derived, spec):
    for th in np.linspace(0, 2 * math.pi, 33):
        for s in steady_states(params, loop_point(spec, th)):
            if s.branch in (Branch.LOWER, Branch.MONO) and s.stable:
                for mode in DMode:
                    assert covariance(params, derived, s, mode).nu_minus >= 0.5 - 1e-9


def test_thermal_masking_monotone(params, spec):
    from nexusloop.validate import thermal_sweep
    for mode in DMode:
        vals = [e for _, e in thermal_sweep(params, spec, np.linspace(0, 5, 11), mode)]
        assert all(e is not None for e in vals)
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        assert vals[0] > 0
