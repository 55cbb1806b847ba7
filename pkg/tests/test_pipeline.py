import numpy as np
import pytest

from pfjcd import coarse, pipeline
from pfjcd.channel import Scenario, simulate
from pfjcd.errors import EmptyPlan, GroupSolveError


@pytest.fixture(scope="module")
def cell():
    s = Scenario(M=128, N=4, K_p=8, K_d=40, snr_db=10.0, seed=21)
    ch, f = simulate(s)
    return s, ch, f


def _split_plan(M, N):
    # user n owns rows [n*M/N, (n+1)*M/N); users 0/1 merged through a shared row
    width = M // N
    sets = [set(range(n * width, (n + 1) * width)) for n in range(N)]
    sets[1].add(0)
    size = max(len(s) for s in sets)
    w = np.empty((size, N, 1), dtype=int)
    for n, s in enumerate(sets):
        vals = sorted(s) + [min(s)] * (size - len(s))
        w[:, n, 0] = vals
    return coarse.decouple(w, M)


class TestReduction:
    def test_single_group_equals_original(self, cell):
        s, _, f = cell
        full = pipeline.run_original_df(f, s)
        jcd = pipeline.run_pf_assisted_jcd(f, s, plan=coarse.single_group_plan(s.M, s.N))
        assert np.array_equal(jcd.h_hat_part, full.h_hat)
        assert np.array_equal(jcd.x_d_hat, full.x_d_hat)
        assert jcd.iterations == full.iterations

    def test_parallel_equals_sequential(self, cell):
        s, _, f = cell
        plan = _split_plan(s.M, s.N)
        assert plan.n_groups == 3
        a = pipeline.run_pf_assisted_jcd(f, s, plan=plan, workers=1)
        b = pipeline.run_pf_assisted_jcd(f, s, plan=plan, workers=3)
        assert np.array_equal(a.h_hat_part, b.h_hat_part)
        assert np.array_equal(a.x_d_hat, b.x_d_hat)
        assert [e.residual_trace for e in a.per_group] == [e.residual_trace for e in b.per_group]

    def test_retained_mask(self, cell):
        s, _, f = cell
        plan = _split_plan(s.M, s.N)
        res = pipeline.run_pf_assisted_jcd(f, s, plan=plan)
        assert np.all(res.h_hat_part[~res.retained_mask] == 0)
        assert res.retained_mask[:, 0].sum() == len(plan.group_rows[0])


class TestStageOne:
    def test_default_plan(self, cell):
        s, ch, f = cell
        res = pipeline.run_pf_assisted_jcd(f, s)
        assert set(res.timings) == {"stage1_ms", "stage2_ms", "group_ms"}
        assert res.plan.retained_rows.size <= s.N * s.M_track * (s.M_s + 1)
        err = np.linalg.norm(res.x_d_hat - f.X_d) / np.linalg.norm(f.X_d)
        assert err < 0.3

    def test_empty_plan(self, cell):
        s, _, f = cell
        plan = coarse.DecouplingPlan(M=s.M, windows=np.zeros((1, 4, 1), int), graph=np.zeros((4, 4), bool), groups=(), group_rows=())
        with pytest.raises(EmptyPlan):
            pipeline.run_pf_assisted_jcd(f, s, plan=plan)

    def test_group_errors_are_tagged(self, cell, monkeypatch):
        s, _, f = cell
        from pfjcd import bigamp
        from pfjcd.errors import NumericalDivergence

        def boom(*a, **k):
            raise NumericalDivergence("forced", 3)

        monkeypatch.setattr(bigamp, "run", boom)
        with pytest.raises(GroupSolveError) as info:
            pipeline.run_pf_assisted_jcd(f, s, plan=_split_plan(s.M, s.N))
        assert info.value.group == 0
        assert isinstance(info.value.cause, NumericalDivergence)


class TestBaselines:
    def test_ls_shape(self, cell):
        s, ch, f = cell
        assert pipeline.run_ls_baseline(f, s).shape == ch.H.shape

    def test_pilot_amp_beats_ls(self, cell):
        s, ch, f = cell
        ls = np.linalg.norm(pipeline.run_ls_baseline(f, s) - ch.H)
        amp = np.linalg.norm(pipeline.run_pilot_amp_baseline(f, s) - ch.H)
        assert amp < ls

    def test_lmmse_with_true_channel(self):
        rng = np.random.default_rng(0)
        H = rng.standard_normal((16, 2)) + 1j * rng.standard_normal((16, 2))
        X = rng.standard_normal((2, 30)) + 1j * rng.standard_normal((2, 30))
        np.testing.assert_allclose(pipeline.equalize_lmmse(H, H @ X, 1e-12), X, atol=1e-8)
