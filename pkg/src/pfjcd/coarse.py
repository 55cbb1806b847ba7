"""Stage 1: coarse angular-domain estimation and multi-user decoupling.

Pipeline: LS estimate from the pilot block, spectral-subtraction
denoising against a Neyman-Pearson threshold, top-``M_track`` path
tracking per user, circular angular windows, and BFS over the user
interference graph to split users into independent groups.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .channel import dft_matrix
from .errors import DimensionMismatch, InvalidWindow, SingularPilotGram

GRAM_COND_MAX = 1e12


@dataclass(frozen=True)
class DenoisedProfile:
    h_ls: np.ndarray
    h_tilde: np.ndarray
    eta_np: float


@dataclass(frozen=True)
class DecouplingPlan:
    """Angular windows, interference graph and the resulting user groups.

    ``windows[r, j]`` holds the ``M_s + 1`` angular indices searched for the
    ``r``-th strongest path of user ``j``.  ``groups[g]`` is a sorted tuple
    of user indices and ``group_rows[g]`` the sorted, deduplicated angular
    rows retained for that group.
    """

    M: int
    windows: np.ndarray
    graph: np.ndarray
    groups: tuple
    group_rows: tuple

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def retained_rows(self):
        if not self.group_rows:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(self.group_rows))

    def combiner(self, g):
        """Reduced analog combiner: rows ``group_rows[g]`` of ``U^H``."""
        U = dft_matrix(self.M)
        return U.conj().T[self.group_rows[g]]

    @property
    def combiners(self):
        U_H = dft_matrix(self.M).conj().T
        return [U_H[rows] for rows in self.group_rows]


def ls_estimate(Y_p, X_p):
    """``Y_p X_p^H (X_p X_p^H)^{-1}``."""
    Y_p = np.atleast_2d(np.asarray(Y_p, dtype=complex))
    X_p = np.atleast_2d(np.asarray(X_p, dtype=complex))
    if Y_p.shape[1] != X_p.shape[1]:
        raise DimensionMismatch(f"Y_p {Y_p.shape} and X_p {X_p.shape}")
    gram = X_p @ X_p.conj().T
    if np.linalg.cond(gram) > GRAM_COND_MAX:
        raise SingularPilotGram("pilot Gram matrix is numerically singular")
    # solve against the Hermitian Gram instead of forming its inverse
    return np.linalg.solve(gram, X_p @ Y_p.conj().T).conj().T


def rayleigh_cdf(x):
    return 1.0 - np.exp(-0.5 * np.square(x))


def rayleigh_icdf(p):
    return np.sqrt(-2.0 * np.log1p(-np.asarray(p, dtype=float)))


def effective_noise_variance(sigma_n2, K_p, sigma_x2):
    """Per-element noise variance of the LS estimate for ``X_p X_p^H = K_p sigma_x2 I``."""
    return sigma_n2 / (K_p * sigma_x2)


def np_threshold(sigma_n2, epsilon_fa, K_p, sigma_x2=1.0, variant="rayleigh"):
    """Detection threshold on ``|H_LS|^2``.

    ``variant="rayleigh"`` evaluates ``icdf(1 - eps) * Var|n|^2 + E|n|^2`` with
    the Rayleigh inverse CDF, where ``|n|^2`` is exponential with mean
    ``s = sigma_eff^2`` (so ``Var = s^2``).  ``variant="exponential"`` returns
    the exact ``1 - eps`` quantile ``-s ln(eps)`` of ``|n|^2`` instead.
    """
    if not 0 < epsilon_fa < 1:
        raise ValueError("epsilon_fa must lie in (0, 1)")
    s = effective_noise_variance(sigma_n2, K_p, sigma_x2)
    if variant == "rayleigh":
        return float(rayleigh_icdf(1.0 - epsilon_fa) * s**2 + s)
    if variant == "exponential":
        return float(-s * np.log(epsilon_fa))
    raise ValueError(f"unknown threshold variant {variant!r}")


def denoise(h_ls, eta_np):
    """Spectral subtraction: ``|h|^2 - eta`` above the threshold, 0 at or below."""
    if eta_np < 0:
        raise ValueError("eta_np must be nonnegative")
    power = np.abs(h_ls) ** 2
    h_tilde = np.where(power > eta_np, power - eta_np, 0.0)
    return DenoisedProfile(h_ls=np.asarray(h_ls), h_tilde=h_tilde, eta_np=float(eta_np))


def track_paths(h_tilde, M_track):
    """Row index of the ``r``-th largest entry per column, shape ``(M_track, N)``.

    Ties go to the lowest index.
    """
    if M_track < 1:
        raise ValueError("M_track must be >= 1")
    h_tilde = np.asarray(h_tilde)
    if h_tilde.ndim == 1:
        h_tilde = h_tilde[:, None]
    order = np.argsort(-h_tilde, axis=0, kind="stable")
    return order[:M_track]


def build_windows(q, M_s, M):
    """Circular windows ``{(q + d) mod M : |d| <= M_s/2}``; last axis has size ``M_s + 1``."""
    if M_s % 2:
        raise InvalidWindow(f"M_s must be even, got {M_s}")
    if M_s + 1 > M:
        raise InvalidWindow(f"window of {M_s + 1} exceeds M={M}")
    offsets = np.arange(-(M_s // 2), M_s // 2 + 1)
    return (np.asarray(q)[..., None] + offsets) % M


def interference_graph(user_rows):
    N = len(user_rows)
    graph = np.zeros((N, N), dtype=bool)
    for a in range(N):
        for b in range(a + 1, N):
            if not user_rows[a].isdisjoint(user_rows[b]):
                graph[a, b] = graph[b, a] = True
    return graph


def connected_groups(graph):
    """Connected components by BFS, seeded in ascending user order."""
    N = graph.shape[0]
    seen = np.zeros(N, dtype=bool)
    groups = []
    for start in range(N):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        members = []
        while queue:
            u = queue.popleft()
            members.append(u)
            for v in np.flatnonzero(graph[u]):
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        groups.append(tuple(sorted(members)))
    return groups


def decouple(windows, M):
    """Group users whose window unions overlap (directly or transitively)."""
    windows = np.asarray(windows)
    if windows.ndim != 3:
        raise DimensionMismatch("windows must have shape (M_track, N, M_s + 1)")
    N = windows.shape[1]
    user_rows = [set(windows[:, n, :].ravel().tolist()) for n in range(N)]
    graph = interference_graph(user_rows)
    groups = connected_groups(graph)
    group_rows = tuple(
        np.array(sorted(set().union(*(user_rows[n] for n in g))), dtype=int)
        for g in groups
    )
    return DecouplingPlan(
        M=M, windows=windows, graph=graph, groups=tuple(groups), group_rows=group_rows
    )


def single_group_plan(M, N):
    """Degenerate plan: one group with every user and every angular row."""
    rows = np.arange(M)
    windows = np.broadcast_to(rows, (1, N, M)).copy()
    graph = ~np.eye(N, dtype=bool)
    return DecouplingPlan(
        M=M, windows=windows, graph=graph, groups=(tuple(range(N)),), group_rows=(rows,)
    )


def decompose(Y, plan, spatial=False):
    """Per-group observations ``[(Y_g, users_g), ...]``.

    ``Y`` is the angular-domain observation (row selection), or the raw
    antenna-domain signal when ``spatial=True`` (reduced combiner applied).
    """
    Y = np.asarray(Y)
    if Y.shape[0] != plan.M:
        raise DimensionMismatch(f"Y has {Y.shape[0]} rows, plan expects {plan.M}")
    if spatial:
        return [(F @ Y, users) for F, users in zip(plan.combiners, plan.groups)]
    return [(Y[rows], users) for rows, users in zip(plan.group_rows, plan.groups)]


def coarse_stage(Y_p, X_p, sigma_n2, scenario, variant="rayleigh"):
    """Run all of Stage 1; returns ``(profile, q, plan)``."""
    h_ls = ls_estimate(Y_p, X_p)
    eta = np_threshold(sigma_n2, scenario.epsilon_fa, X_p.shape[1], scenario.sigma_x2, variant)
    profile = denoise(h_ls, eta)
    q = track_paths(profile.h_tilde, scenario.M_track)
    windows = build_windows(q, scenario.M_s, h_ls.shape[0])
    return profile, q, decouple(windows, h_ls.shape[0])
