# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused kernels; same contract as ``_kernels_py``.

Complex arithmetic is spelled out on real and imaginary parts: C99
complex multiply/divide go through library calls that handle inf/nan
and dominate the loop otherwise.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p

cnp.import_array()


def output_channel(const double complex[:, ::1] y,
                   const double complex[:, ::1] p_bar,
                   const double[:, ::1] v_p_bar,
                   const double[:, ::1] v_hx,
                   const double complex[:, ::1] s_prev,
                   double sigma_n2, double var_min, double var_max,
                   out=None):
    cdef Py_ssize_t M = y.shape[0], K = y.shape[1], i, k
    if out is None:
        out = (np.empty((M, K), dtype=np.complex128),
               np.empty((M, K), dtype=np.float64),
               np.empty((M, K), dtype=np.complex128),
               np.empty((M, K), dtype=np.float64),
               np.empty((M, K), dtype=np.complex128),
               np.empty((M, K), dtype=np.float64))
    p_hat_a, v_p_a, z_hat_a, v_z_a, s_hat_a, v_s_a = out
    # s_hat may alias s_prev: each element is read before it is written
    cdef double complex[:, ::1] p_hat = p_hat_a, z_hat = z_hat_a, s_hat = s_hat_a
    cdef double[:, ::1] v_p = v_p_a, v_z = v_z_a, v_s = v_s_a
    cdef double vp, vpb, inv, inv_vp, ph_re, ph_im, zh_re, zh_im
    with nogil:
        for i in range(M):
            for k in range(K):
                vpb = v_p_bar[i, k]
                vp = vpb + v_hx[i, k]
                if vp < var_min:
                    vp = var_min
                elif vp > var_max:
                    vp = var_max
                ph_re = p_bar[i, k].real - s_prev[i, k].real * vpb
                ph_im = p_bar[i, k].imag - s_prev[i, k].imag * vpb
                inv = 1.0 / (vp + sigma_n2)
                zh_re = (y[i, k].real * vp + ph_re * sigma_n2) * inv
                zh_im = (y[i, k].imag * vp + ph_im * sigma_n2) * inv
                inv_vp = 1.0 / vp
                p_hat[i, k].real = ph_re
                p_hat[i, k].imag = ph_im
                v_p[i, k] = vp
                z_hat[i, k].real = zh_re
                z_hat[i, k].imag = zh_im
                v_z[i, k] = vp * sigma_n2 * inv
                v_s[i, k] = inv
                s_hat[i, k].real = (zh_re - ph_re) * inv_vp
                s_hat[i, k].imag = (zh_im - ph_im) * inv_vp
    return out


cdef _per_user(value, Py_ssize_t N):
    arr = np.ascontiguousarray(value, dtype=np.float64).reshape(-1)
    if arr.shape[0] == N:
        return arr.copy()
    return np.array(np.broadcast_to(arr, (N,)))


def bg_denoise(const double complex[:, ::1] q_hat,
               const double[:, ::1] v_q,
               lam, gam, double var_max):
    cdef Py_ssize_t M = q_hat.shape[0], N = q_hat.shape[1], i, n
    cdef double[::1] lam_v = _per_user(lam, N)
    cdef double[::1] gam_v = _per_user(gam, N)
    h_a = np.empty((M, N), dtype=np.complex128)
    vh_a = np.empty((M, N), dtype=np.float64)
    al_a = np.empty((M, N), dtype=np.float64)
    cdef double complex[:, ::1] h = h_a
    cdef double[:, ::1] vh = vh_a, al = al_a
    cdef double lamn, gamn, prior_lr, vq, tot, a2, lr, alpha, gain, w, mm, vv
    cdef double q_re, q_im
    with nogil:
        for n in range(N):
            lamn = lam_v[n]
            gamn = gam_v[n]
            if 0.0 < lamn < 1.0:
                prior_lr = log1p(-lamn) - log(lamn)
            for i in range(M):
                vq = v_q[i, n]
                q_re = q_hat[i, n].real
                q_im = q_hat[i, n].imag
                tot = gamn + vq
                if lamn >= 1.0:
                    alpha = 1.0
                elif lamn <= 0.0:
                    alpha = 0.0
                else:
                    a2 = q_re * q_re + q_im * q_im
                    lr = prior_lr + log(tot / vq) - a2 * gamn / (vq * tot)
                    if lr > 700.0:
                        alpha = 0.0
                    else:
                        alpha = 1.0 / (1.0 + exp(lr))
                gain = gamn / tot
                w = vq * gain
                mm = (q_re * q_re + q_im * q_im) * gain * gain
                vv = alpha * w + alpha * (1.0 - alpha) * mm
                if vv < 0.0:
                    vv = 0.0
                elif vv > var_max:
                    vv = var_max
                h[i, n].real = alpha * gain * q_re
                h[i, n].imag = alpha * gain * q_im
                vh[i, n] = vv
                al[i, n] = alpha
    return h_a, vh_a, al_a
