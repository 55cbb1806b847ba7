"""mmWave uplink channel, frames and observations.

The ULA steering vector has element ``m`` equal to ``exp(-j*pi*m*sin(theta))``.
The angular transform ``U`` is the unitary ``M``-point DFT; column ``k`` is
the steering vector at spatial frequency ``k/M`` (``sin(theta) = 2k/M``,
aliased for ``k > M/2``).  The equivalent channel seen after the DFT
combiner is ``H = U^H G``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, ResampleExhausted

RESAMPLE_CAP = 1000


@dataclass(frozen=True)
class Scenario:
    """Experiment dimensions, SNR, frame split and algorithm knobs."""

    M: int
    N: int
    K_p: int
    K_d: int
    L: tuple = (3,)
    snr_db: float = 10.0
    sigma_x2: float = 1.0
    M_track: int = 4
    M_s: int = 4
    epsilon_fa: float = 1e-5
    delta: float = 1e-4
    T_max: int = 200
    seed: int = 0
    damping: float = 0.5
    path_snr_floor_db: float | None = 3.0

    def __post_init__(self):
        L = (self.L,) if np.isscalar(self.L) else tuple(int(v) for v in self.L)
        if len(L) == 1:
            L = L * self.N
        object.__setattr__(self, "L", L)
        for name in ("M", "N", "K_p", "K_d", "M_track", "T_max"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(L) != self.N or min(L) < 1:
            raise ConfigError("L needs one positive path count per user")
        if self.K_p < self.N:
            raise ConfigError("K_p >= N is required for full-row-rank pilots")
        if self.M_track < max(L):
            raise ConfigError("M_track must be >= max(L)")
        if self.M_s < 0 or (self.M_s + 1) * self.M_track * self.N > self.M:
            raise ConfigError("(M_s + 1) * M_track * N must not exceed M")
        if self.sigma_x2 <= 0:
            raise ConfigError("sigma_x2 must be positive")
        if not 0 < self.epsilon_fa < 1:
            raise ConfigError("epsilon_fa must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")

    @property
    def K(self):
        return self.K_p + self.K_d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ChannelRealization:
    """Per-user paths plus the spatial (``G``) and angular (``H``) matrices.

    ``paths[n]`` is a list of ``(theta, beta)`` tuples.
    """

    paths: list
    G: np.ndarray
    H: np.ndarray
    sigma_n2: float = field(default=np.nan)


@dataclass(frozen=True)
class FrameData:
    X_p: np.ndarray
    X_d: np.ndarray
    Y: np.ndarray
    sigma_n2: float

    @property
    def X(self):
        return np.concatenate([self.X_p, self.X_d], axis=1)

    @property
    def K_p(self):
        return self.X_p.shape[1]

    @property
    def Y_p(self):
        return self.Y[:, : self.K_p]

    @property
    def Y_d(self):
        return self.Y[:, self.K_p :]


def steering_vector(theta, M):
    m = np.arange(M)
    return np.exp(-1j * np.pi * m * np.sin(theta))


def dft_matrix(M):
    """Unitary DFT ``U``; ``U[:, k] = steering_vector(arcsin(2k/M)) / sqrt(M)``."""
    m = np.arange(M)
    # integer phase index keeps large-M entries exact
    phase = np.outer(m, m) % M
    return np.exp(-2j * np.pi * phase / M) / np.sqrt(M)


def to_angular(G):
    """``U^H G`` computed with an FFT along the antenna axis."""
    M = G.shape[0]
    return np.fft.ifft(G, axis=0) * np.sqrt(M)


def from_angular(H):
    M = H.shape[0]
    return np.fft.fft(H, axis=0) / np.sqrt(M)


def grid_angle(k, M):
    """AoA whose spatial frequency falls exactly on angular bin ``k``.

    Only bins ``0..M//2`` are reachable with ``theta`` in ``[0, pi)``.
    """
    s = 2.0 * k / M
    if not 0 <= s <= 1:
        raise ValueError(f"bin {k} is not reachable for M={M}")
    return float(np.arcsin(s))


def complex_normal(rng, shape, var=1.0):
    """i.i.d. CN(0, var) samples, variance split evenly over real/imag."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noise_variance(H, snr_db, sigma_x2):
    """Per-element noise variance giving the target SNR in expectation.

    Uses ``E||HX||^2 = sigma_x2 * ||H||_F^2 * K`` and ``E||N||^2 = M K sigma_n2``.
    """
    M = H.shape[0]
    energy = float(np.vdot(H, H).real)
    return sigma_x2 * energy / (M * 10.0 ** (snr_db / 10.0))


def _user_column(M, thetas, betas):
    m = np.arange(M)[:, None]
    return np.exp(-1j * np.pi * m * np.sin(thetas)[None, :]) @ betas


def _strongest_path_snr_db(betas, M, sigma_x2, sigma_n2):
    # post-combining SNR of a path: array gain M on the angular bin
    peak = np.max(np.abs(betas) ** 2)
    if sigma_n2 <= 0:
        return np.inf
    return 10.0 * np.log10(M * peak * sigma_x2 / sigma_n2)


def sample_channel(scenario, rng):
    """Draw an S-V channel realization.

    Users whose strongest path falls below ``scenario.path_snr_floor_db`` are
    redrawn (rejection sampling, at most ``RESAMPLE_CAP`` draws per user).
    """
    M, N = scenario.M, scenario.N
    thetas = [None] * N
    betas = [None] * N
    G = np.empty((M, N), dtype=complex)

    def draw(n):
        L = scenario.L[n]
        thetas[n] = rng.uniform(0.0, np.pi, size=L)
        betas[n] = complex_normal(rng, L)
        G[:, n] = _user_column(M, thetas[n], betas[n])

    for n in range(N):
        draw(n)
    attempts = np.ones(N, dtype=int)
    floor = scenario.path_snr_floor_db
    while floor is not None:
        sigma_n2 = noise_variance(G, scenario.snr_db, scenario.sigma_x2)
        weak = [
            n
            for n in range(N)
            if _strongest_path_snr_db(betas[n], M, scenario.sigma_x2, sigma_n2) < floor
        ]
        if not weak:
            break
        for n in weak:
            if attempts[n] >= RESAMPLE_CAP:
                raise ResampleExhausted(
                    f"user {n} below {floor} dB after {RESAMPLE_CAP} draws"
                )
            attempts[n] += 1
            draw(n)

    H = to_angular(G)
    paths = [list(zip(thetas[n].tolist(), betas[n].tolist())) for n in range(N)]
    return ChannelRealization(
        paths=paths,
        G=G,
        H=H,
        sigma_n2=noise_variance(H, scenario.snr_db, scenario.sigma_x2),
    )


def pilot_matrix(N, K_p, sigma_x2=1.0):
    """First ``N`` rows of the ``K_p``-point DFT, scaled to element power ``sigma_x2``.

    ``X_p X_p^H = K_p * sigma_x2 * I``.
    """
    if K_p < N:
        raise ConfigError("K_p >= N is required")
    n = np.arange(N)[:, None]
    k = np.arange(K_p)[None, :]
    return np.sqrt(sigma_x2) * np.exp(-2j * np.pi * ((n * k) % K_p) / K_p)


def sample_frames(scenario, rng):
    X_p = pilot_matrix(scenario.N, scenario.K_p, scenario.sigma_x2)
    X_d = complex_normal(rng, (scenario.N, scenario.K_d), scenario.sigma_x2)
    return X_p, X_d


def observe(H, X, sigma_n2, rng):
    """``Y = H X + N`` with ``N`` i.i.d. CN(0, sigma_n2)."""
    H = np.asarray(H)
    X = np.asarray(X)
    if H.ndim != 2 or X.ndim != 2 or H.shape[1] != X.shape[0]:
        raise DimensionMismatch(f"H {H.shape} and X {X.shape} do not chain")
    Z = H @ X
    if sigma_n2 <= 0:
        return Z
    return Z + complex_normal(rng, Z.shape, sigma_n2)


def simulate(scenario, rng=None):
    """One complete realization: channel, frames and the angular-domain observation."""
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    chan = sample_channel(scenario, rng)
    X_p, X_d = sample_frames(scenario, rng)
    Y = observe(chan.H, np.concatenate([X_p, X_d], axis=1), chan.sigma_n2, rng)
    return chan, FrameData(X_p=X_p, X_d=X_d, Y=Y, sigma_n2=chan.sigma_n2)
