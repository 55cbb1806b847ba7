"""EM-BiGAMP for ``Y = H X + N`` with pinned pilot columns.

``X`` columns flagged as pilots are known exactly; the remaining (data)
columns carry a CN(0, sigma_x2) Gaussian-codebook prior.  Each column of
``H`` has a Bernoulli-Gaussian prior whose sparsity ``lambda_n`` and slab
variance ``gamma_n`` are re-estimated by EM inside the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NumericalDivergence

VAR_MIN = 1e-12
VAR_MAX = 1e12
GAMMA_FLOOR = 1e-12
LAMBDA_INIT = 0.05
DEFAULT_DELTA = 1e-4
DEFAULT_T_MAX = 200
DEFAULT_DAMPING = 0.5


@dataclass
class Priors:
    """Prior description for one (sub)problem.

    ``pilot_values`` is an ``N x K`` array; only the pilot-masked columns
    are read.
    """

    lam: np.ndarray
    gamma: np.ndarray
    sigma_x2: float
    sigma_n2: float
    pilot_mask: np.ndarray
    pilot_values: np.ndarray

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.pilot_mask = np.asarray(self.pilot_mask, dtype=bool)
        self.pilot_values = np.asarray(self.pilot_values, dtype=complex)
        N, K = self.pilot_values.shape
        if self.lam.shape == (1,):
            self.lam = np.full(N, self.lam[0])
        if self.gamma.shape == (1,):
            self.gamma = np.full(N, self.gamma[0])
        if self.lam.shape != (N,) or self.gamma.shape != (N,):
            raise DimensionMismatch("lam and gamma need one entry per user")
        if self.pilot_mask.shape != (K,):
            raise DimensionMismatch("pilot_mask needs one flag per column")
        if np.any((self.lam < 0) | (self.lam > 1)):
            raise ValueError("lambda must lie in [0, 1]")
        if np.any(self.gamma < 0):
            raise ValueError("gamma must be nonnegative")

    @property
    def N(self):
        return self.pilot_values.shape[0]

    @property
    def K(self):
        return self.pilot_values.shape[1]


def make_priors(Y, X_p, K_d, sigma_n2, sigma_x2=1.0, lam=LAMBDA_INIT):
    """Priors for a frame laid out as ``[pilots | data]``.

    ``gamma`` starts from moment matching on ``Y``:
    ``E|y|^2 = N * lam * gamma * sigma_x2 + sigma_n2``.
    """
    X_p = np.atleast_2d(X_p)
    N, K_p = X_p.shape
    K = K_p + K_d
    Y = np.asarray(Y)
    if Y.shape[1] != K:
        raise DimensionMismatch(f"Y has {Y.shape[1]} columns, expected {K}")
    mask = np.zeros(K, dtype=bool)
    mask[:K_p] = True
    values = np.zeros((N, K), dtype=complex)
    values[:, :K_p] = X_p
    power = float(np.vdot(Y, Y).real) / Y.size
    gamma0 = max(power - sigma_n2, GAMMA_FLOOR) / (N * lam * sigma_x2)
    return Priors(
        lam=np.full(N, lam),
        gamma=np.full(N, gamma0),
        sigma_x2=sigma_x2,
        sigma_n2=sigma_n2,
        pilot_mask=mask,
        pilot_values=values,
    )


@dataclass
class Workspace:
    """Preallocated ``M x K`` buffers reused across iterations.

    Allocating and freeing several large arrays per iteration lets the C
    allocator hand the pages back to the OS each time; the resulting page
    faults cost more than the arithmetic at desk scale.
    """

    p_bar: np.ndarray
    v_p_bar: np.ndarray
    v_hx: np.ndarray
    tmp: np.ndarray
    z_spare: np.ndarray
    diff: np.ndarray

    @classmethod
    def allocate(cls, M, K):
        return cls(
            p_bar=np.empty((M, K), dtype=complex),
            v_p_bar=np.empty((M, K)),
            v_hx=np.empty((M, K)),
            tmp=np.empty((M, K)),
            z_spare=np.zeros((M, K), dtype=complex),
            diff=np.empty((M, K), dtype=complex),
        )


@dataclass
class BigampState:
    x_hat: np.ndarray
    v_x: np.ndarray
    h_hat: np.ndarray
    v_h: np.ndarray
    s_hat: np.ndarray
    v_s: np.ndarray
    z_hat: np.ndarray
    v_z: np.ndarray
    lambda_t: np.ndarray
    gamma_t: np.ndarray
    pilot_mask: np.ndarray
    p_bar: np.ndarray | None = None
    v_p_bar: np.ndarray | None = None
    p_hat: np.ndarray | None = None
    v_p: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    v_r: np.ndarray | None = None
    q_hat: np.ndarray | None = None
    v_q: np.ndarray | None = None
    alpha: np.ndarray | None = None
    ws: Workspace | None = None
    t: int = 1

    @property
    def data(self):
        return data_index(self.pilot_mask)


@dataclass
class BigampEstimate:
    h_hat: np.ndarray
    x_d_hat: np.ndarray
    lambda_final: np.ndarray
    gamma_final: np.ndarray
    iterations: int
    residual_trace: list = field(default_factory=list)
    v_h: np.ndarray | None = None
    v_x_d: np.ndarray | None = None
    converged: bool = False


def data_index(pilot_mask):
    """Index of the data columns: a slice when they are contiguous, so
    column selections stay views."""
    idx = np.flatnonzero(~np.asarray(pilot_mask))
    if idx.size == 0:
        return slice(0, 0)
    if idx[-1] - idx[0] + 1 == idx.size:
        return slice(int(idx[0]), int(idx[-1]) + 1)
    return idx


def init_state(priors, M, v_h0=1.0):
    """Initial messages for an ``M``-row problem."""
    N, K = priors.N, priors.K
    mask = priors.pilot_mask
    x_hat = np.zeros((N, K), dtype=complex)
    v_x = np.ones((N, K))
    x_hat[:, mask] = priors.pilot_values[:, mask]
    v_x[:, mask] = 0.0
    return BigampState(
        x_hat=x_hat,
        v_x=v_x,
        h_hat=np.zeros((M, N), dtype=complex),
        v_h=np.broadcast_to(np.asarray(v_h0, dtype=float), (M, N)).copy(),
        s_hat=np.zeros((M, K), dtype=complex),
        v_s=np.zeros((M, K)),
        z_hat=np.zeros((M, K), dtype=complex),
        v_z=np.zeros((M, K)),
        p_hat=np.empty((M, K), dtype=complex),
        v_p=np.empty((M, K)),
        ws=Workspace.allocate(M, K),
        lambda_t=priors.lam.copy(),
        gamma_t=priors.gamma.copy(),
        pilot_mask=mask.copy(),
    )


def _abs2(a):
    return a.real**2 + a.imag**2


def _safe_inverse(total):
    """``1 / total`` clamped to ``[VAR_MIN, VAR_MAX]``."""
    return 1.0 / np.clip(total, 1.0 / VAR_MAX, 1.0 / VAR_MIN)


def output_step(state, Y, sigma_n2, backend=None):
    """Plain/corrected output moments and the AWGN posterior of ``z``.

    Writes into the state's buffers; the previous ``z_hat`` is kept in
    ``state.ws.z_spare``.
    """
    kern = kernels.get(backend)
    ws = state.ws
    h, x = state.h_hat, state.x_hat
    np.matmul(h, x, out=ws.p_bar)
    np.matmul(_abs2(h), state.v_x, out=ws.v_p_bar)
    ws.v_p_bar += np.matmul(state.v_h, _abs2(x), out=ws.tmp)
    np.matmul(state.v_h, state.v_x, out=ws.v_hx)
    z_prev = state.z_hat
    out = (state.p_hat, state.v_p, ws.z_spare, state.v_z, state.s_hat, state.v_s)
    kern.output_channel(
        Y, ws.p_bar, ws.v_p_bar, ws.v_hx, state.s_hat,
        float(sigma_n2), VAR_MIN, VAR_MAX, out=out,
    )
    state.z_hat, ws.z_spare = ws.z_spare, z_prev
    if not (np.isfinite(state.v_p.sum()) and np.isfinite(state.z_hat.sum())):
        raise NumericalDivergence("non-finite output moments", state.t)
    state.p_bar, state.v_p_bar = ws.p_bar, ws.v_p_bar
    return state


def input_step(state):
    """Pseudo-channel moments for data symbols (``r``) and channel entries (``q``)."""
    data = state.data
    h, x = state.h_hat, state.x_hat
    s_hat, v_s = state.s_hat, state.v_s
    abs_h2 = _abs2(h)

    s_d, vs_d = s_hat[:, data], v_s[:, data]
    v_r = _safe_inverse(abs_h2.T @ vs_d)
    r_hat = x[:, data] * (1.0 - v_r * (state.v_h.T @ vs_d)) + v_r * (h.conj().T @ s_d)

    v_q = _safe_inverse(v_s @ _abs2(x).T)
    q_hat = h * (1.0 - v_q * (v_s @ state.v_x.T)) + v_q * (s_hat @ x.conj().T)

    if not (np.isfinite(r_hat.sum()) and np.isfinite(q_hat.sum())):
        raise NumericalDivergence("non-finite input moments", state.t)
    state.r_hat, state.v_r = r_hat, v_r
    state.q_hat, state.v_q = np.ascontiguousarray(q_hat), np.ascontiguousarray(v_q)
    return state


def denoise_x(r_hat, v_r, sigma_x2):
    """Gaussian-codebook posterior for data symbols."""
    gain = sigma_x2 / (v_r + sigma_x2)
    return r_hat * gain, v_r * gain


def denoise_h(q_hat, v_q, lam, gamma, backend=None):
    """Bernoulli-Gaussian posterior; returns ``(h_hat, v_h, alpha)``."""
    kern = kernels.get(backend)
    return kern.bg_denoise(
        np.ascontiguousarray(q_hat, dtype=complex),
        np.ascontiguousarray(v_q, dtype=float),
        np.asarray(lam, dtype=float),
        np.asarray(gamma, dtype=float),
        VAR_MAX,
    )


def em_update(alpha, h_hat, v_h, gamma_prev):
    """EM re-estimation of per-user sparsity and slab variance.

    A user whose responsibilities are all zero keeps its previous ``gamma``.
    """
    M_r = alpha.shape[0]
    lam = alpha.mean(axis=0)
    energy = (v_h + _abs2(h_hat)).sum(axis=0)
    gamma = np.array(gamma_prev, dtype=float, copy=True)
    ok = lam > 0
    gamma[ok] = energy[ok] / (lam[ok] * M_r)
    return np.clip(lam, 0.0, 1.0), np.maximum(gamma, GAMMA_FLOOR)


def _blend(new, old, rho):
    return rho * new + (1.0 - rho) * old


def iterate(state, Y, priors, damping=1.0, backend=None):
    """One full iteration; returns the relative change of ``z_hat``.

    With ``damping < 1`` the posterior moments of ``H`` and ``X_d`` are
    blended with their previous values.  The residual ``s_hat`` is left
    undamped: it feeds the next Onsager correction, and blending it moves
    the iteration off its fixed point.
    """
    output_step(state, Y, priors.sigma_n2, backend)
    damped = damping < 1.0 and state.t > 1
    input_step(state)

    data = state.data
    x_d, v_xd = denoise_x(state.r_hat, state.v_r, priors.sigma_x2)
    h_new, v_h, alpha = denoise_h(
        state.q_hat, state.v_q, state.lambda_t, state.gamma_t, backend
    )
    state.lambda_t, state.gamma_t = em_update(alpha, h_new, v_h, state.gamma_t)
    if damped:
        x_d = _blend(x_d, state.x_hat[:, data], damping)
        v_xd = _blend(v_xd, state.v_x[:, data], damping)
        h_new = _blend(h_new, state.h_hat, damping)
        v_h = _blend(v_h, state.v_h, damping)
    state.x_hat = state.x_hat.copy()
    state.v_x = state.v_x.copy()
    state.x_hat[:, data] = x_d
    state.v_x[:, data] = v_xd
    state.h_hat, state.v_h, state.alpha = h_new, v_h, alpha

    if not (np.isfinite(state.h_hat.sum()) and np.isfinite(state.x_hat.sum())):
        raise NumericalDivergence("non-finite estimates", state.t)
    d = np.subtract(state.z_hat, state.ws.z_spare, out=state.ws.diff)
    z_norm = np.sqrt(np.vdot(state.z_hat, state.z_hat).real)
    diff = np.sqrt(np.vdot(d, d).real)
    state.t += 1
    if z_norm == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / z_norm


def initial_v_h(priors, Y):
    """Per-row starting variance of ``H`` from the observed row energy.

    Row ``m`` of ``Y`` has ``E|y|^2 = sigma_x2 * sum_n E|h_mn|^2 + sigma_n2``;
    spreading the excess evenly over users keeps the first residual
    ``s_hat`` on the scale of each row, so the first Onsager correction
    does not overshoot on rows that carry strong paths.
    """
    N = priors.N
    row_power = (Y.real**2 + Y.imag**2).mean(axis=1)
    v = np.maximum(row_power - priors.sigma_n2, GAMMA_FLOOR) / (N * priors.sigma_x2)
    return np.repeat(v[:, None], N, axis=1)


def run(
    Y,
    priors,
    delta=DEFAULT_DELTA,
    T_max=DEFAULT_T_MAX,
    damping=DEFAULT_DAMPING,
    backend=None,
    callback=None,
):
    """Iterate until ``||Z_t - Z_{t-1}|| <= delta ||Z_t||`` or ``T_max`` iterations.

    ``damping=1`` is the undamped recursion; it diverges on many
    realizations at low SNR, hence the default of 0.5.  ``callback(state)`` is invoked
    after every iteration.
    """
    Y = np.ascontiguousarray(Y, dtype=complex)
    if Y.ndim != 2 or Y.shape[1] != priors.K:
        raise DimensionMismatch(f"Y {Y.shape} does not match K={priors.K}")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    state = init_state(priors, Y.shape[0], v_h0=initial_v_h(priors, Y))
    trace = []
    converged = False
    while state.t <= T_max:
        res = iterate(state, Y, priors, damping, backend)
        trace.append(float(res))
        if callback is not None:
            callback(state)
        if res <= delta:
            converged = True
            break
    data = data_index(priors.pilot_mask)
    return BigampEstimate(
        h_hat=state.h_hat,
        x_d_hat=state.x_hat[:, data],
        lambda_final=state.lambda_t,
        gamma_final=state.gamma_t,
        iterations=len(trace),
        residual_trace=trace,
        v_h=state.v_h,
        v_x_d=state.v_x[:, data],
        converged=converged,
    )
