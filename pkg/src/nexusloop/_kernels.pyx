# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mean-field RK4 and linear-SDE propagation; same interface as ``_kernels_py``."""
from libc.math cimport cos, sin, sqrt, isfinite, fabs

import numpy as np

cdef double C_LIMIT = 1e15

cdef enum:
    P_M, P_OMEGA, P_GAMMA, P_KAPPA, P_GK, P_GW, P_HBAR, P_HBAR_WD, P_P0, P_A, P_D0, P_B, P_TH0, P_TH_START, P_TH_RATE


cdef inline int _rhs(double t, double cr, double ci, double q, double pm,
                     const double* par, double* out) noexcept nogil:
    cdef double theta = par[P_TH_START] + par[P_TH_RATE] * t + par[P_TH0]
    cdef double power = par[P_P0] + par[P_A] * cos(theta)
    if power < 0.0:
        power = 0.0
    cdef double eps = sqrt(power / par[P_HBAR_WD])
    cdef double delta = par[P_D0] + par[P_B] * sin(theta)
    cdef double kq = par[P_KAPPA] + par[P_GK] * q
    if kq <= 0.0:
        return 1
    cdef double de = delta + par[P_GW] * q
    out[0] = -0.5 * kq * cr + de * ci + sqrt(kq) * eps
    out[1] = -0.5 * kq * ci - de * cr
    out[2] = pm / par[P_M]
    out[3] = (-par[P_M] * par[P_OMEGA] * par[P_OMEGA] * q
              - par[P_HBAR] * par[P_GW] * (cr * cr + ci * ci)
              - par[P_HBAR] * par[P_GK] * eps * ci / sqrt(par[P_KAPPA])
              - par[P_GAMMA] * pm)
    return 0


def rk4_integrate(y0, params, double t0, double dt, long n_steps, long record_every):
    cdef double[::1] par = np.ascontiguousarray(params, dtype=np.float64)
    cdef double y[4]
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double tmp[4]
    cdef long n_rec = n_steps // record_every + 1
    trace_arr = np.empty((n_rec, 5))
    cdef double[:, ::1] trace = trace_arr
    cdef long k, rec = 1, done = n_steps
    cdef int i, status = 0
    cdef double t, h2 = 0.5 * dt, s = dt / 6.0
    for i in range(4):
        y[i] = float(y0[i])
    trace[0, 0] = t0
    for i in range(4):
        trace[0, i + 1] = y[i]
    with nogil:
        for k in range(n_steps):
            t = t0 + k * dt
            if _rhs(t, y[0], y[1], y[2], y[3], &par[0], k1):
                status = 1; done = k; break
            for i in range(4):
                tmp[i] = y[i] + h2 * k1[i]
            if _rhs(t + h2, tmp[0], tmp[1], tmp[2], tmp[3], &par[0], k2):
                status = 1; done = k; break
            for i in range(4):
                tmp[i] = y[i] + h2 * k2[i]
            if _rhs(t + h2, tmp[0], tmp[1], tmp[2], tmp[3], &par[0], k3):
                status = 1; done = k; break
            for i in range(4):
                tmp[i] = y[i] + dt * k3[i]
            if _rhs(t + dt, tmp[0], tmp[1], tmp[2], tmp[3], &par[0], k4):
                status = 1; done = k; break
            for i in range(4):
                y[i] = y[i] + s * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not (isfinite(y[0]) and isfinite(y[1]) and isfinite(y[2]) and isfinite(y[3])) \
                    or fabs(y[0]) > C_LIMIT or fabs(y[1]) > C_LIMIT:
                status = 2; done = k + 1; break
            if (k + 1) % record_every == 0:
                trace[rec, 0] = t0 + (k + 1) * dt
                for i in range(4):
                    trace[rec, i + 1] = y[i]
                rec += 1
    return np.array([y[0], y[1], y[2], y[3]]), trace_arr[:rec], status, done


def mc_chunk(E, G, U, Z, long sample_every, long phase, bint accumulate, acc):
    cdef double[:, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, ::1] u = U
    cdef const double[:, :, ::1] z = Z
    cdef double[:, :, ::1] a = acc
    cdef long n_steps = z.shape[0], n_traj = z.shape[1], nk = z.shape[2]
    cdef long s, j, r, c, added = 0
    cdef double v[4]
    cdef double w
    cdef bint take
    with nogil:
        for s in range(n_steps):
            take = accumulate and (phase + s + 1) % sample_every == 0
            for j in range(n_traj):
                for r in range(4):
                    w = 0.0
                    for c in range(4):
                        w = w + e[r, c] * u[j, c]
                    for c in range(nk):
                        w = w + g[r, c] * z[s, j, c]
                    v[r] = w
                for r in range(4):
                    u[j, r] = v[r]
                if take:
                    for r in range(4):
                        for c in range(4):
                            a[j, r, c] += v[r] * v[c]
            if take:
                added += 1
    return added
