"""Pure-Python reference implementations of the hot loops.

Interfaces mirror the compiled module exactly; see :mod:`nexusloop.kernels`.
"""
import math

import numpy as np

# Layout of the mean-field parameter vector.
(P_M, P_OMEGA, P_GAMMA, P_KAPPA, P_GK, P_GW, P_HBAR, P_HBAR_WD,
 P_P0, P_A, P_D0, P_B, P_TH0, P_TH_START, P_TH_RATE) = range(15)
N_PARAMS = 15

STATUS_OK, STATUS_UNPHYSICAL, STATUS_DIVERGED = 0, 1, 2
C_LIMIT = 1e15


def _rhs(t, cr, ci, q, pm, par):
    theta = par[P_TH_START] + par[P_TH_RATE] * t + par[P_TH0]
    power = par[P_P0] + par[P_A] * math.cos(theta)
    if power < 0.0:
        power = 0.0
    eps = math.sqrt(power / par[P_HBAR_WD])
    delta = par[P_D0] + par[P_B] * math.sin(theta)
    kq = par[P_KAPPA] + par[P_GK] * q
    if kq <= 0.0:
        return None
    de = delta + par[P_GW] * q
    dcr = -0.5 * kq * cr + de * ci + math.sqrt(kq) * eps
    dci = -0.5 * kq * ci - de * cr
    dq = pm / par[P_M]
    dp = (-par[P_M] * par[P_OMEGA] ** 2 * q
          - par[P_HBAR] * par[P_GW] * (cr * cr + ci * ci)
          - par[P_HBAR] * par[P_GK] * eps * ci / math.sqrt(par[P_KAPPA])
          - par[P_GAMMA] * pm)
    return dcr, dci, dq, dp


def rk4_integrate(y0, params, t0, dt, n_steps, record_every):
    """Classical RK4 for the mean-field equations.

    Returns ``(y, trace, status, steps_done)`` where ``trace`` rows are
    ``(t, Re c, Im c, q, p)`` taken every ``record_every`` steps, starting
    with the initial state.
    """
    par = [float(x) for x in params]
    cr, ci, q, pm = (float(x) for x in y0)
    n_rec = n_steps // record_every + 1
    trace = np.empty((n_rec, 5))
    trace[0] = (t0, cr, ci, q, pm)
    rec = 1
    h2 = 0.5 * dt
    for k in range(n_steps):
        t = t0 + k * dt
        k1 = _rhs(t, cr, ci, q, pm, par)
        if k1 is None:
            return np.array([cr, ci, q, pm]), trace[:rec], STATUS_UNPHYSICAL, k
        k2 = _rhs(t + h2, cr + h2 * k1[0], ci + h2 * k1[1], q + h2 * k1[2], pm + h2 * k1[3], par)
        if k2 is None:
            return np.array([cr, ci, q, pm]), trace[:rec], STATUS_UNPHYSICAL, k
        k3 = _rhs(t + h2, cr + h2 * k2[0], ci + h2 * k2[1], q + h2 * k2[2], pm + h2 * k2[3], par)
        if k3 is None:
            return np.array([cr, ci, q, pm]), trace[:rec], STATUS_UNPHYSICAL, k
        k4 = _rhs(t + dt, cr + dt * k3[0], ci + dt * k3[1], q + dt * k3[2], pm + dt * k3[3], par)
        if k4 is None:
            return np.array([cr, ci, q, pm]), trace[:rec], STATUS_UNPHYSICAL, k
        s = dt / 6.0
        cr += s * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        ci += s * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        q += s * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        pm += s * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        if not (math.isfinite(cr) and math.isfinite(ci) and math.isfinite(q) and math.isfinite(pm)) \
                or abs(cr) > C_LIMIT or abs(ci) > C_LIMIT:
            return np.array([cr, ci, q, pm]), trace[:rec], STATUS_DIVERGED, k + 1
        if (k + 1) % record_every == 0:
            trace[rec] = (t0 + (k + 1) * dt, cr, ci, q, pm)
            rec += 1
    return np.array([cr, ci, q, pm]), trace[:rec], STATUS_OK, n_steps


def mc_chunk(E, G, U, Z, sample_every, phase, accumulate, acc):
    """Advance ``u <- E u + G z`` for every trajectory over one chunk of noise.

    ``U`` (n_traj, 4) is updated in place.  When ``accumulate`` is true the
    outer product ``u u^T`` is added to ``acc[j]`` after each step whose
    global index (``phase`` + local index + 1) is a multiple of
    ``sample_every``.  Returns the number of samples added per trajectory.
    """
    n_steps = Z.shape[0]
    et, gt = E.T, G.T
    added = 0
    for s in range(n_steps):
        U[:] = U @ et + Z[s] @ gt
        if accumulate and (phase + s + 1) % sample_every == 0:
            acc += U[:, :, None] * U[:, None, :]
            added += 1
    return added
