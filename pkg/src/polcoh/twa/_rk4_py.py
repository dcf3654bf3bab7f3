"""Pure-numpy implementation of the RK4 stage kernels (same contract as ``_rk4``)."""

import numpy as np


def _drift(psi_s, n_s, kin, pump, R, gamma_c, gamma_r, g_c, g_r, hbar, renorm):
    dens = psi_s.real**2 + psi_s.imag**2 - renorm
    rate = 0.5 * (R * n_s - gamma_c) - 1j * ((g_r * n_s + g_c * dens) / hbar)
    dpsi = kin + rate * psi_s
    dn = pump - (gamma_r + R * dens) * n_s
    return dpsi, dn


def rk4_stage(psi0, n0, psi_s, n_s, kin, pump, acc_psi, acc_n, psi_out, n_out,
              weight, step, init, R, gamma_c, gamma_r, g_c, g_r, hbar, renorm):
    dpsi, dn = _drift(psi_s, n_s, kin, pump, R, gamma_c, gamma_r, g_c, g_r, hbar, renorm)
    if init:
        np.multiply(dpsi, weight, out=acc_psi)
        np.multiply(dn, weight, out=acc_n)
    else:
        acc_psi += weight * dpsi
        acc_n += weight * dn
    np.add(psi0, step * dpsi, out=psi_out)
    np.add(n0, step * dn, out=n_out)


def rk4_finish(psi0, n0, psi_s, n_s, kin, pump, acc_psi, acc_n, xi, dt, noise_factor,
               R, gamma_c, gamma_r, g_c, g_r, hbar, renorm):
    dpsi, dn = _drift(psi_s, n_s, kin, pump, R, gamma_c, gamma_r, g_c, g_r, hbar, renorm)
    sig = np.sqrt((R * n0 + gamma_c) * noise_factor)
    sixth = dt / 6.0
    psi_new = psi0 + sixth * (acc_psi + dpsi) + sig * (xi[:, 0, :] + 1j * xi[:, 1, :])
    n_new = n0 + sixth * (acc_n + dn)
    neg = n_new < 0.0
    clipped = neg.sum(axis=1).astype(np.int64)
    n_new[neg] = 0.0
    bad = ~(np.isfinite(psi_new).all(axis=1) & np.isfinite(n_new).all(axis=1))
    psi0[...] = psi_new
    n0[...] = n_new
    return clipped, bad
