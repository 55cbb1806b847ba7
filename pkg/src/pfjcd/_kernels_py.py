"""Pure-numpy reference versions of the fused per-iteration kernels.

Both functions must stay numerically equivalent to ``_ckernels.pyx``.
"""

import numpy as np


def output_channel(y, p_bar, v_p_bar, v_hx, s_prev, sigma_n2, var_min, var_max, out=None):
    """AWGN output step of one BiGAMP iteration.

    Returns ``(p_hat, v_p, z_hat, v_z, s_hat, v_s)``, written into ``out``
    when given (``s_hat`` may share memory with ``s_prev``).  ``v_hx`` is
    the ``sum_n v^h v^x`` term, so ``v_p = v_p_bar + v_hx`` (clamped).
    """
    if out is None:
        out = tuple(np.empty(y.shape, dtype=t) for t in (complex, float) * 3)
    p_hat, v_p, z_hat, v_z, s_hat, v_s = out
    np.add(v_p_bar, v_hx, out=v_p)
    np.clip(v_p, var_min, var_max, out=v_p)
    np.multiply(s_prev, v_p_bar, out=p_hat)
    np.subtract(p_bar, p_hat, out=p_hat)
    # 1/v_p - v_z/v_p^2 simplifies to 1/(v_p + sigma_n2)
    np.add(v_p, sigma_n2, out=v_s)
    np.reciprocal(v_s, out=v_s)
    np.multiply(y, v_p, out=z_hat)
    z_hat += p_hat * sigma_n2
    z_hat *= v_s
    np.multiply(v_p, sigma_n2, out=v_z)
    v_z *= v_s
    np.subtract(z_hat, p_hat, out=s_hat)
    s_hat /= v_p
    return out


def bg_denoise(q_hat, v_q, lam, gam, var_max):
    """Bernoulli-Gaussian posterior mean/variance, column ``n`` using ``lam[n], gam[n]``.

    Returns ``(h_hat, v_h, alpha)`` where ``alpha`` is the slab responsibility.
    """
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (q_hat.shape[1],))
    gam = np.broadcast_to(np.asarray(gam, dtype=float), (q_hat.shape[1],))
    a2 = q_hat.real**2 + q_hat.imag**2
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        prior_lr = np.log1p(-lam) - np.log(lam)
        tot = gam + v_q
        lr = prior_lr + np.log(tot / v_q) - a2 * gam / (v_q * tot)
        alpha = 1.0 / (1.0 + np.exp(lr))
    alpha = np.where(lam >= 1.0, 1.0, np.where(lam <= 0.0, 0.0, alpha))
    alpha = np.nan_to_num(alpha, nan=0.0)
    gain = gam / tot
    m = q_hat * gain
    w = v_q * gain
    h_hat = alpha * m
    v_h = alpha * w + alpha * (1.0 - alpha) * (m.real**2 + m.imag**2)
    v_h = np.clip(v_h, 0.0, var_max)
    return h_hat, v_h, alpha
