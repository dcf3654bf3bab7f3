# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused RK4 stage kernels for the stochastic Gross-Pitaevskii drift.

Complex arrays are C-contiguous complex128 of shape (batch, cells) and are
processed through interleaved float64 views. ``kin`` holds the kinetic
contribution -i/hbar * H psi_s computed spectrally by the caller.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()


cdef inline double[:, ::1] _dview(arr):
    return arr.view(np.float64)


def rk4_stage(psi0, const double[:, ::1] n0, psi_s, const double[:, ::1] n_s,
              kin, const double[::1] pump, acc_psi, double[:, ::1] acc_n,
              psi_out, double[:, ::1] n_out,
              double weight, double step, bint init,
              double R, double gamma_c, double gamma_r,
              double g_c, double g_r, double hbar, double renorm):
    """Evaluate the drift at (psi_s, n_s), accumulate ``weight`` times it and
    write the next stage input ``psi0 + step * drift``.

    ``psi_out``/``n_out`` may alias ``psi_s``/``n_s``.
    """
    cdef double[:, ::1] p0 = _dview(psi0)
    cdef double[:, ::1] ps = _dview(psi_s)
    cdef double[:, ::1] kn = _dview(kin)
    cdef double[:, ::1] ac = _dview(acc_psi)
    cdef double[:, ::1] po = _dview(psi_out)
    cdef Py_ssize_t nb = n0.shape[0], m = n0.shape[1]
    cdef Py_ssize_t b, j
    cdef double pr, pi, ns, dens, gain, ph, dr, di, dn
    cdef double inv_hbar = 1.0 / hbar
    with nogil:
        for b in range(nb):
            for j in range(m):
                pr = ps[b, 2 * j]
                pi = ps[b, 2 * j + 1]
                ns = n_s[b, j]
                dens = pr * pr + pi * pi - renorm
                gain = 0.5 * (R * ns - gamma_c)
                ph = (g_r * ns + g_c * dens) * inv_hbar
                dr = kn[b, 2 * j] + gain * pr + ph * pi
                di = kn[b, 2 * j + 1] + gain * pi - ph * pr
                dn = pump[j] - (gamma_r + R * dens) * ns
                if init:
                    ac[b, 2 * j] = weight * dr
                    ac[b, 2 * j + 1] = weight * di
                    acc_n[b, j] = weight * dn
                else:
                    ac[b, 2 * j] += weight * dr
                    ac[b, 2 * j + 1] += weight * di
                    acc_n[b, j] += weight * dn
                po[b, 2 * j] = p0[b, 2 * j] + step * dr
                po[b, 2 * j + 1] = p0[b, 2 * j + 1] + step * di
                n_out[b, j] = n0[b, j] + step * dn


def rk4_finish(psi0, double[:, ::1] n0, psi_s, const double[:, ::1] n_s,
               kin, const double[::1] pump, acc_psi, const double[:, ::1] acc_n,
               const double[:, :, ::1] xi,
               double dt, double noise_factor,
               double R, double gamma_c, double gamma_r,
               double g_c, double g_r, double hbar, double renorm):
    """Last RK4 stage, combination, additive Wiener increment and reservoir clipping.

    Overwrites ``psi0``/``n0`` with the state at t + dt. The noise standard
    deviation per real component is sqrt((R n0 + gamma_c) * noise_factor) with
    ``n0`` frozen at the start of the step; ``xi`` has shape (batch, 2, cells).
    Returns (clipped cell counts, non-finite flags) per batch member.
    """
    cdef double[:, ::1] p0 = _dview(psi0)
    cdef double[:, ::1] ps = _dview(psi_s)
    cdef double[:, ::1] kn = _dview(kin)
    cdef double[:, ::1] ac = _dview(acc_psi)
    cdef Py_ssize_t nb = n0.shape[0], m = n0.shape[1]
    cdef Py_ssize_t b, j
    cdef double pr, pi, ns, dens, gain, ph, dr, di, dn, sig, nn, qr, qi
    cdef double inv_hbar = 1.0 / hbar
    cdef double sixth = dt / 6.0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] clipped = np.zeros(nb, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] bad = np.zeros(nb, dtype=np.uint8)
    cdef long long c
    cdef int flag
    with nogil:
        for b in range(nb):
            c = 0
            flag = 0
            for j in range(m):
                pr = ps[b, 2 * j]
                pi = ps[b, 2 * j + 1]
                ns = n_s[b, j]
                dens = pr * pr + pi * pi - renorm
                gain = 0.5 * (R * ns - gamma_c)
                ph = (g_r * ns + g_c * dens) * inv_hbar
                dr = kn[b, 2 * j] + gain * pr + ph * pi
                di = kn[b, 2 * j + 1] + gain * pi - ph * pr
                dn = pump[j] - (gamma_r + R * dens) * ns
                sig = sqrt((R * n0[b, j] + gamma_c) * noise_factor)
                qr = p0[b, 2 * j] + sixth * (ac[b, 2 * j] + dr) + sig * xi[b, 0, j]
                qi = p0[b, 2 * j + 1] + sixth * (ac[b, 2 * j + 1] + di) + sig * xi[b, 1, j]
                nn = n0[b, j] + sixth * (acc_n[b, j] + dn)
                if nn < 0.0:
                    nn = 0.0
                    c += 1
                if not (isfinite(qr) and isfinite(qi) and isfinite(nn)):
                    flag = 1
                p0[b, 2 * j] = qr
                p0[b, 2 * j + 1] = qi
                n0[b, j] = nn
            clipped[b] = c
            bad[b] = flag
    return clipped, bad.astype(bool)
