"""End-to-end estimators: the two-stage pilot-assisted JCD method and its baselines.

All entry points take a :class:`~pfjcd.channel.FrameData` whose ``Y`` is the
angular-domain observation (full DFT combiner) and a
:class:`~pfjcd.channel.Scenario` carrying the algorithm knobs.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bigamp, coarse
from .errors import EmptyPlan, GroupSolveError, PfjcdError


@dataclass
class JcdResult:
    """Output of the two-stage method.

    ``h_hat_part`` is zero outside the rows each group retained for its own
    users; ``retained_mask`` marks exactly the entries that were estimated.
    """

    h_hat_part: np.ndarray
    x_d_hat: np.ndarray
    plan: coarse.DecouplingPlan
    per_group: list
    timings: dict = field(default_factory=dict)

    @property
    def retained_mask(self):
        mask = np.zeros(self.h_hat_part.shape, dtype=bool)
        for rows, users in zip(self.plan.group_rows, self.plan.groups):
            mask[np.ix_(rows, users)] = True
        return mask

    @property
    def iterations(self):
        return max((est.iterations for est in self.per_group), default=0)


def _solve(Y, X_p, K_d, frames, scenario, backend):
    priors = bigamp.make_priors(Y, X_p, K_d, frames.sigma_n2, scenario.sigma_x2)
    return bigamp.run(
        Y,
        priors,
        delta=scenario.delta,
        T_max=scenario.T_max,
        damping=scenario.damping,
        backend=backend,
    )


def run_original_df(frames, scenario, backend=None):
    """Full-size EM-BiGAMP on the complete angular observation."""
    return _solve(frames.Y, frames.X_p, frames.Y.shape[1] - frames.K_p, frames, scenario, backend)


def run_pf_assisted_jcd(frames, scenario, plan=None, workers=1, backend=None, variant="rayleigh"):
    """Stage 1 on the pilot block, then one EM-BiGAMP per decoupled group.

    ``plan`` overrides Stage 1.  Groups run on up to ``workers`` threads;
    the merge is ordered by group index so the result does not depend on
    scheduling.
    """
    t0 = time.perf_counter()
    if plan is None:
        _, _, plan = coarse.coarse_stage(
            frames.Y_p, frames.X_p, frames.sigma_n2, scenario, variant
        )
    if plan.n_groups == 0 or plan.retained_rows.size == 0:
        raise EmptyPlan("stage 1 produced no angular windows")
    t1 = time.perf_counter()

    K_d = frames.Y.shape[1] - frames.K_p
    subproblems = coarse.decompose(frames.Y, plan)

    def solve(g):
        Y_g, users = subproblems[g]
        start = time.perf_counter()
        try:
            est = _solve(Y_g, frames.X_p[list(users)], K_d, frames, scenario, backend)
        except PfjcdError as exc:
            raise GroupSolveError(g, exc) from exc
        return est, (time.perf_counter() - start) * 1e3

    if workers is None or workers <= 1 or plan.n_groups == 1:
        outcomes = [solve(g) for g in range(plan.n_groups)]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, plan.n_groups)) as pool:
            outcomes = list(pool.map(solve, range(plan.n_groups)))
    t2 = time.perf_counter()

    M, N = frames.Y.shape[0], frames.X_p.shape[0]
    h_hat = np.zeros((M, N), dtype=complex)
    x_d_hat = np.zeros((N, K_d), dtype=complex)
    for (rows, users), (est, _) in zip(zip(plan.group_rows, plan.groups), outcomes):
        h_hat[np.ix_(rows, users)] = est.h_hat
        x_d_hat[list(users)] = est.x_d_hat
    return JcdResult(
        h_hat_part=h_hat,
        x_d_hat=x_d_hat,
        plan=plan,
        per_group=[est for est, _ in outcomes],
        timings={
            "stage1_ms": (t1 - t0) * 1e3,
            "stage2_ms": (t2 - t1) * 1e3,
            "group_ms": [ms for _, ms in outcomes],
        },
    )


def run_ls_baseline(frames, scenario=None):
    return coarse.ls_estimate(frames.Y_p, frames.X_p)


def run_pilot_amp_baseline(frames, scenario, backend=None):
    """BiGAMP on the pilot block alone (every column known); returns ``H`` only."""
    Y_p = frames.Y_p
    priors = bigamp.make_priors(Y_p, frames.X_p, 0, frames.sigma_n2, scenario.sigma_x2)
    est = bigamp.run(
        Y_p,
        priors,
        delta=scenario.delta,
        T_max=scenario.T_max,
        damping=scenario.damping,
        backend=backend,
    )
    return est.h_hat


def equalize_lmmse(h_est, Y_d, sigma_n2, sigma_x2=1.0):
    """Linear MMSE symbol estimate treating ``h_est`` as the true channel."""
    N = h_est.shape[1]
    A = h_est.conj().T @ h_est + (sigma_n2 / sigma_x2) * np.eye(N)
    return np.linalg.solve(A, h_est.conj().T @ Y_d)
