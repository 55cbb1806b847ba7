"""Large-system MSE predictions for joint channel and data estimation.

The bilinear problem is mapped to a pair of scalar AWGN channels
``y = sqrt(qt) * s + w`` (``w ~ CN(0, 1)``), one for a data symbol with a
Gaussian prior and one for a channel entry with a Bernoulli-Gaussian
prior.  The order parameters coupling the two channels are found by a
damped fixed-point iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import expit

from .errors import NonPhysical, NotConverged, QuadratureUnstable

QUAD_RTOL = 1e-6
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
QUAD_TAIL = 60.0


def scalar_mse_gaussian(qt, sigma_x2=1.0):
    """MMSE of a ``CN(0, sigma_x2)`` symbol seen through ``sqrt(qt) x + w``."""
    qt = np.asarray(qt, dtype=float)
    if np.any(qt < 0):
        raise ValueError("qt must be nonnegative")
    with np.errstate(divide="ignore"):
        out = np.where(np.isinf(qt), 0.0, sigma_x2 / (1.0 + qt * sigma_x2))
    return float(out) if out.ndim == 0 else out


def bg_posterior_mean(y, qt, lam, sigma_h2):
    """Spike-and-slab posterior mean of ``h`` given ``y = sqrt(qt) h + w``.

    The slab responsibility uses the circular-complex evidences
    ``CN(y; 0, 1)`` (spike) and ``CN(y; 0, 1 + qt sigma_h2)`` (slab).
    """
    y = np.asarray(y, dtype=complex)
    if lam <= 0.0:
        return np.zeros_like(y)
    s = 1.0 + qt * sigma_h2
    gain = np.sqrt(qt) * sigma_h2 / s
    if lam >= 1.0:
        return gain * y
    a2 = y.real**2 + y.imag**2
    # log of lam C2 / ((1 - lam) C1)
    log_odds = np.log(lam / (1.0 - lam)) - np.log(s) + a2 * (1.0 - 1.0 / s)
    return expit(log_odds) * gain * y


def _slab_probability(t, qt, lam, sigma_h2):
    """Posterior slab probability as a function of ``t = |y|^2``."""
    s = 1.0 + qt * sigma_h2
    return expit(np.log(lam / (1.0 - lam)) - np.log(s) + t * (1.0 - 1.0 / s))


def _crossover(qt, lam, sigma_h2):
    """``|y|^2`` at which spike and slab are equally likely (0 if never)."""
    s = 1.0 + qt * sigma_h2
    if s == 1.0:
        return 0.0
    return max((np.log(s) + np.log((1.0 - lam) / lam)) / (1.0 - 1.0 / s), 0.0)


def _radial_expectation(f, scale, t_star):
    """``E f(t)`` for ``t ~ Exp(scale)``, split at the crossover and the bulk.

    Returns ``(value, abs_error_estimate)``.
    """
    upper = QUAD_TAIL * scale
    # the responsibility saturates within a few units of the crossover
    marks = (t_star, t_star + QUAD_TAIL, scale)
    inner = sorted({x for x in marks if 0.0 < x < upper})
    edges = [0.0, *inner, upper, np.inf]

    def density(t):
        return f(t) * np.exp(-t / scale) / scale

    total = err = 0.0
    with warnings.catch_warnings():
        # roundoff notices on negligible pieces; the summed estimate is checked
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, e = integrate.quad(
                density, lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT
            )
            total += v
            err += e
    return total, err


def scalar_mse_bg(qt, lam, sigma_h2):
    """MMSE ``E|h_hat - h|^2`` of a Bernoulli-Gaussian entry behind ``sqrt(qt) h + w``.

    The posterior mean depends on ``y`` only through ``t = |y|^2``, which is
    exponential under either prior component (mean 1 under the spike,
    ``1 + qt sigma_h2`` under the slab).  Each component's squared error is
    integrated over ``t`` by adaptive Gauss-Kronrod quadrature; a relative
    error estimate above ``QUAD_RTOL`` raises :class:`QuadratureUnstable`.
    """
    if qt < 0:
        raise ValueError("qt must be nonnegative")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam == 0.0 or sigma_h2 == 0.0 or np.isinf(qt):
        return 0.0
    s = 1.0 + qt * sigma_h2
    post_var = sigma_h2 / s
    if lam == 1.0:
        return post_var
    gain2 = qt * sigma_h2**2 / s**2
    t_star = _crossover(qt, lam, sigma_h2)

    def spike_err(t):
        # h = 0: the error is the posterior mean itself
        return _slab_probability(t, qt, lam, sigma_h2) ** 2 * gain2 * t

    def slab_err(t):
        # responsibility shortfall on top of the slab posterior spread
        return (1.0 - _slab_probability(t, qt, lam, sigma_h2)) ** 2 * gain2 * t

    spike, e0 = _radial_expectation(spike_err, 1.0, t_star)
    slab, e1 = _radial_expectation(slab_err, s, t_star)
    value = (1.0 - lam) * spike + lam * (slab + post_var)
    err = (1.0 - lam) * e0 + lam * e1
    if err > QUAD_RTOL * value:
        raise QuadratureUnstable(f"error estimate {err:.3g} for mse {value:.3g}")
    return float(min(max(value, 0.0), lam * sigma_h2))


@dataclass(frozen=True)
class ReplicaParams:
    """Large-system ratios and prior parameters.

    ``alpha = M/N``, ``beta_d = K_d/N``, ``beta_p = K_p/N``.  The channel
    prior is Bernoulli-Gaussian with activity ``lam`` and slab variance
    ``sigma_h2``.
    """

    alpha: float
    beta_d: float
    beta_p: float
    N: int
    sigma_n2: float
    sigma_x2: float = 1.0
    lam: float = 1.0
    sigma_h2: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta_d", "beta_p", "sigma_x2", "sigma_h2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.sigma_n2 < 0:
            raise ValueError("sigma_n2 must be nonnegative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def c_H(self):
        return self.lam * self.sigma_h2

    @property
    def c_X(self):
        return self.sigma_x2

    @property
    def M(self):
        return self.alpha * self.N

    @property
    def K_d(self):
        return self.beta_d * self.N

    @property
    def K_p(self):
        return self.beta_p * self.N

    @classmethod
    def for_scenario(cls, M, N, K_p, K_d, L, snr_db, sigma_x2=1.0):
        """Parameters matching the simulated S-V channel.

        With unit-power path gains the angular channel has ``E|h|^2 = L``
        per entry, modelled as activity ``L/M`` with slab variance ``M``;
        ``sigma_n2`` is the expected value of the SNR calibration.
        """
        sigma_n2 = sigma_x2 * N * L / 10.0 ** (snr_db / 10.0)
        return cls(
            alpha=M / N,
            beta_d=K_d / N,
            beta_p=K_p / N,
            N=N,
            sigma_n2=sigma_n2,
            sigma_x2=sigma_x2,
            lam=L / M,
            sigma_h2=float(M),
        )


@dataclass(frozen=True)
class ReplicaSolution:
    q_H: float
    q_Xd: float
    q_Xp: float
    qt_H: float
    qt_Xd: float
    qt_Xp: float
    mse_H: float
    mse_Xd: float
    chi_p: float
    chi_d: float
    converged: bool
    iterations: int

    @property
    def nmse_h(self):
        """Norm-ratio NMSE implied by ``mse_H`` (per-entry power ``q_H + mse_H``)."""
        return float(np.sqrt(self.mse_H / (self.q_H + self.mse_H)))

    @property
    def nmse_xd(self):
        return float(np.sqrt(self.mse_Xd / (self.q_Xd + self.mse_Xd)))


def _order_parameters(p, mse_H, mse_Xd):
    q_H = p.c_H - mse_H
    q_Xd = p.c_X - mse_Xd
    q_Xp = p.c_X
    base = p.sigma_n2 / p.N + p.c_X * p.c_H
    with np.errstate(divide="ignore"):
        chi_p = float(np.float64(1.0) / (base - q_Xp * q_H))
        chi_d = float(np.float64(1.0) / (base - q_Xd * q_H))
    qt_H = p.beta_d * q_Xd * chi_d + p.beta_p * q_Xp * chi_p
    qt_Xd = p.alpha * q_H * chi_d
    qt_Xp = p.alpha * q_H * chi_p
    return q_H, q_Xd, q_Xp, chi_p, chi_d, qt_H, qt_Xd, qt_Xp


def _solution(p, mse_H, mse_Xd, converged, iterations):
    q_H, q_Xd, q_Xp, chi_p, chi_d, qt_H, qt_Xd, qt_Xp = _order_parameters(p, mse_H, mse_Xd)
    return ReplicaSolution(
        q_H=q_H, q_Xd=q_Xd, q_Xp=q_Xp,
        qt_H=qt_H, qt_Xd=qt_Xd, qt_Xp=qt_Xp,
        mse_H=mse_H, mse_Xd=mse_Xd,
        chi_p=chi_p, chi_d=chi_d,
        converged=converged, iterations=iterations,
    )


def solve_fixed_point(
    params, damping=0.5, tol=1e-10, max_iter=1000, init=None, raise_on_fail=False
):
    """Damped fixed-point iteration of the coupled order-parameter equations.

    Starts from the prior variances (``mse_H = c_H``, ``mse_Xd = sigma_x2``)
    unless ``init=(mse_H, mse_Xd)`` is given.  The returned ``q`` values are
    recomputed from the final MSEs, so the consistency relations
    ``q = c - mse`` hold exactly.  Without convergence the last iterate is
    returned with ``converged=False``, or :class:`NotConverged` is raised
    when ``raise_on_fail`` is set.
    """
    p = params
    if init is None:
        mse_H, mse_Xd = p.c_H, p.c_X
    else:
        mse_H, mse_Xd = (float(v) for v in init)
        if not (0.0 <= mse_H <= p.c_H and 0.0 <= mse_Xd <= p.c_X):
            raise ValueError("init must lie within the prior variances")
    if p.sigma_n2 == 0.0:
        return _solution(p, 0.0, 0.0, True, 0)

    for it in range(1, max_iter + 1):
        _, _, _, _, _, qt_H, qt_Xd, _ = _order_parameters(p, mse_H, mse_Xd)
        new_H = scalar_mse_bg(qt_H, p.lam, p.sigma_h2)
        new_Xd = scalar_mse_gaussian(qt_Xd, p.sigma_x2)
        next_H = damping * new_H + (1.0 - damping) * mse_H
        next_Xd = damping * new_Xd + (1.0 - damping) * mse_Xd
        change = max(
            abs(next_H - mse_H) / max(abs(next_H), 1e-300),
            abs(next_Xd - mse_Xd) / max(abs(next_Xd), 1e-300),
        )
        mse_H, mse_Xd = next_H, next_Xd
        if change < tol:
            return _solution(p, mse_H, mse_Xd, True, it)
    if raise_on_fail:
        raise NotConverged(f"no fixed point after {max_iter} iterations")
    return _solution(p, mse_H, mse_Xd, False, max_iter)


def proposition1_approx(params, tol=1e-12, max_iter=1000):
    """High-dimension closed-form approximation, solved from ``(0, 0)``.

    ``mse_Xd = sigma_n2 / (AE_H - M mse_H)`` and
    ``mse_H = sigma_n2 / (AE_Xd - K_d mse_Xd + AE_Xp)`` with per-user
    energies ``AE_H = M lam sigma_h2``, ``AE_Xd = K_d sigma_x2`` and
    ``AE_Xp = K_p sigma_x2``.  Returns ``(mse_Xd, mse_H)``.
    """
    p = params
    ae_h = p.M * p.c_H
    ae_xd = p.K_d * p.sigma_x2
    ae_xp = p.K_p * p.sigma_x2
    mse_Xd = mse_H = 0.0
    for _ in range(max_iter):
        den_x = ae_h - p.M * mse_H
        den_h = ae_xd - p.K_d * mse_Xd + ae_xp
        if den_x <= 0 or den_h <= 0:
            raise NonPhysical("nonpositive effective energy")
        new_Xd = p.sigma_n2 / den_x
        new_H = p.sigma_n2 / den_h
        if not (0.0 <= new_Xd <= p.sigma_x2 and 0.0 <= new_H <= p.c_H):
            raise NonPhysical(f"iterate left the prior bounds: ({new_Xd}, {new_H})")
        done = abs(new_Xd - mse_Xd) <= tol * new_Xd and abs(new_H - mse_H) <= tol * new_H
        mse_Xd, mse_H = new_Xd, new_H
        if done:
            return mse_Xd, mse_H
    raise NotConverged(f"no fixed point after {max_iter} iterations")


def complexity_counts(M, N, K_d, M_r):
    """Per-iteration ``(mults_orig, adds_orig, mults_jcd, adds_jcd)``.

    The JCD counts are per user for a subproblem of ``M_r`` angular rows.
    """
    for name, v in (("M", M), ("N", N), ("K_d", K_d), ("M_r", M_r)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer")
    mults_orig = 10 * M * N * K_d + 9 * M * K_d + 7 * N * K_d + 16 * M * N + N
    adds_orig = 10 * M * N * K_d + 6 * M * K_d + 4 * N * K_d + 8 * M * N
    mults_jcd = 19 * M_r * K_d + 16 * M_r + 7 * K_d + 1
    adds_jcd = 16 * M_r * K_d + 8 * M_r + 4 * K_d
    return mults_orig, adds_orig, mults_jcd, adds_jcd


def analytic_speedup(M, N, K_d, M_r):
    """``mults_orig / (N * mults_jcd)``: one full problem against ``N`` single-user ones."""
    mo, _, mj, _ = complexity_counts(M, N, K_d, M_r)
    return mo / (N * mj)
