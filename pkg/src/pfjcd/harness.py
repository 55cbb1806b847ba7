"""Monte-Carlo sweeps, NMSE metrics, timing summaries and CSV output.

Every (snr, trial) cell draws one channel/frame/noise realization from a
seed derived from the master seed, and all methods in that cell consume
the same realization.  Output rows are sorted by (method, snr, trial), so
the CSV does not depend on how cells were scheduled.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import pipeline, replica
from .channel import Scenario, simulate
from .errors import ConfigError, PfjcdError, ZeroReference

SIM_METHODS = ("ls", "pilot_amp", "original_df", "pf_jcd")
PRED_METHODS = ("replica_pred", "prop1_pred")
METHODS = SIM_METHODS + PRED_METHODS

CSV_FIELDS = (
    "seed",
    "method",
    "snr_db",
    "trial",
    "nmse_xd",
    "nmse_h_full",
    "nmse_h_part",
    "iterations",
    "wall_ms_total",
    "wall_ms_stage1",
    "wall_ms_stage2",
    "group_count",
    "retained_rows",
    "status",
)

ANALYTIC_SETTING = {"M": 1000, "N": 20, "K_d": 80, "M_r": 20}
# trial index used for untimed warm-up cells, well clear of real trials
WARMUP_TRIAL = 10**9


def nmse(est, truth):
    """``||est - truth|| / ||truth||`` (Frobenius norms, not squared)."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    ref = np.linalg.norm(truth)
    if ref == 0:
        raise ZeroReference("reference has zero norm")
    return float(np.linalg.norm(est - truth) / ref)


def nmse_db(value):
    """``10 log10`` of an NMSE value."""
    return 10.0 * math.log10(value)


@dataclass
class TrialRecord:
    seed: int | None
    method: str
    snr_db: float
    trial: int | None = None
    nmse_xd: float | None = None
    nmse_h_full: float | None = None
    nmse_h_part: float | None = None
    iterations: int | None = None
    wall_ms_total: float | None = None
    wall_ms_stage1: float | None = None
    wall_ms_stage2: float | None = None
    group_count: int | None = None
    retained_rows: int | None = None
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"

    def row(self):
        return [_fmt(getattr(self, name)) for name in CSV_FIELDS]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_csv(records, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in records:
        writer.writerow(rec.row())


def records_to_csv(records):
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class SweepConfig:
    """A scenario template plus the sweep axes."""

    scenario: Scenario
    snr_db: tuple = (10.0,)
    trials: int = 1
    seed: int = 0
    methods: tuple = SIM_METHODS
    workers: int = 1
    variant: str = "rayleigh"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_SCENARIO_TYPES = {
    "M": int,
    "N": int,
    "K_p": int,
    "K_d": int,
    "sigma_x2": float,
    "M_track": int,
    "M_s": int,
    "epsilon_fa": float,
    "delta": float,
    "T_max": int,
    "damping": float,
}


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_config(text):
    """Parse flat ``key = value`` lines (``#`` starts a comment).

    Scenario fields map onto :class:`~pfjcd.channel.Scenario`; ``snr_db``
    and ``methods`` take comma-separated lists; ``L`` takes one value or one
    per user; ``path_snr_floor_db = none`` disables the floor.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value

    scen = {}
    sweep = {}
    try:
        for key, value in values.items():
            if key in _SCENARIO_TYPES:
                scen[key] = _SCENARIO_TYPES[key](value)
            elif key == "L":
                scen["L"] = tuple(int(v) for v in _split(value))
            elif key == "path_snr_floor_db":
                scen[key] = None if value.lower() == "none" else float(value)
            elif key == "snr_db":
                sweep["snr_db"] = tuple(float(v) for v in _split(value))
            elif key in ("trials", "seed", "workers"):
                sweep[key] = int(value)
            elif key == "methods":
                sweep["methods"] = tuple(_split(value))
            elif key == "variant":
                sweep["variant"] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from None

    missing = [k for k in ("M", "N", "K_p", "K_d") if k not in scen]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    snrs = sweep.get("snr_db", (10.0,))
    if not snrs:
        raise ConfigError("snr_db needs at least one value")
    scen["snr_db"] = snrs[0]
    scenario = Scenario(**scen)
    cfg = SweepConfig(scenario=scenario, **sweep)
    validate(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def validate(cfg):
    unknown = [m for m in cfg.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods: {', '.join(unknown)}")
    if len(set(cfg.methods)) != len(cfg.methods):
        raise ConfigError("methods must not repeat")
    if cfg.trials < 0:
        raise ConfigError("trials must be >= 0")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be >= 0")
    if cfg.variant not in ("rayleigh", "exponential"):
        raise ConfigError(f"unknown threshold variant {cfg.variant!r}")


# ---------------------------------------------------------------- trials


def _snr_key(snr_db):
    # exact for any SNR given to at most millidecibel precision
    return int(round((float(snr_db) + 1000.0) * 1000.0))


def cell_seed(master_seed, snr_db, trial):
    """Realization seed for one (snr, trial) cell, independent of the method."""
    ss = np.random.SeedSequence([int(master_seed), _snr_key(snr_db), int(trial)])
    return int(ss.generate_state(1)[0])


def _h_part_truth(H, mask):
    return np.where(mask, H, 0.0)


def _run_method(method, chan, frames, scenario, variant, timings):
    rec = TrialRecord(seed=scenario.seed, method=method, snr_db=scenario.snr_db)
    t0 = time.perf_counter()
    if method == "ls":
        h = pipeline.run_ls_baseline(frames, scenario)
        rec.nmse_h_full = nmse(h, chan.H)
    elif method == "pilot_amp":
        h = pipeline.run_pilot_amp_baseline(frames, scenario)
        rec.nmse_h_full = nmse(h, chan.H)
        # pilot-only equalization proxy: LMMSE with the pilot-phase estimate
        x = pipeline.equalize_lmmse(h, frames.Y_d, frames.sigma_n2, scenario.sigma_x2)
        rec.nmse_xd = nmse(x, frames.X_d)
    elif method == "original_df":
        est = pipeline.run_original_df(frames, scenario)
        rec.nmse_xd = nmse(est.x_d_hat, frames.X_d)
        rec.nmse_h_full = nmse(est.h_hat, chan.H)
        rec.iterations = est.iterations
    elif method == "pf_jcd":
        res = pipeline.run_pf_assisted_jcd(frames, scenario, variant=variant)
        rec.nmse_xd = nmse(res.x_d_hat, frames.X_d)
        rec.nmse_h_full = nmse(res.h_hat_part, chan.H)
        mask = res.retained_mask
        rec.nmse_h_part = nmse(res.h_hat_part, _h_part_truth(chan.H, mask))
        rec.iterations = res.iterations
        rec.group_count = res.plan.n_groups
        rec.retained_rows = int(res.plan.retained_rows.size)
        if timings:
            rec.wall_ms_stage1 = res.timings["stage1_ms"]
            rec.wall_ms_stage2 = res.timings["stage2_ms"]
    else:
        raise ConfigError(f"not a simulated method: {method!r}")
    if timings:
        rec.wall_ms_total = (time.perf_counter() - t0) * 1e3
    return rec


def run_cell(scenario, methods, snr_db, trial, master_seed, variant="rayleigh", timings=False):
    """All simulated methods on one shared realization."""
    seed = cell_seed(master_seed, snr_db, trial)
    scen = scenario.replace(snr_db=float(snr_db), seed=seed)
    out = []
    try:
        chan, frames = simulate(scen)
    except PfjcdError as exc:
        return [
            TrialRecord(seed=seed, method=m, snr_db=scen.snr_db, trial=trial,
                        status=type(exc).__name__)
            for m in methods
        ]
    for method in methods:
        try:
            rec = _run_method(method, chan, frames, scen, variant, timings)
        except PfjcdError as exc:
            rec = TrialRecord(seed=seed, method=method, snr_db=scen.snr_db,
                              status=type(exc).__name__)
        rec.trial = trial
        out.append(rec)
    return out


def _run_cell_args(args):
    return run_cell(*args)


def predict(scenario, snr_db, methods=PRED_METHODS):
    """Replica-based predictions for the scenario dimensions at one SNR."""
    L = float(np.mean(scenario.L))
    params = replica.ReplicaParams.for_scenario(
        scenario.M, scenario.N, scenario.K_p, scenario.K_d, L, snr_db, scenario.sigma_x2
    )
    rows = []
    for method in methods:
        rec = TrialRecord(seed=None, method=method, snr_db=float(snr_db))
        try:
            if method == "replica_pred":
                sol = replica.solve_fixed_point(params)
                rec.nmse_xd, rec.nmse_h_full = sol.nmse_xd, sol.nmse_h
                rec.iterations = sol.iterations
                if not sol.converged:
                    rec.status = "NotConverged"
            elif method == "prop1_pred":
                mse_xd, mse_h = replica.proposition1_approx(params)
                rec.nmse_xd = math.sqrt(mse_xd / params.c_X)
                rec.nmse_h_full = math.sqrt(mse_h / params.c_H)
            else:
                raise ConfigError(f"not a prediction method: {method!r}")
        except PfjcdError as exc:
            rec.status = type(exc).__name__
        rows.append(rec)
    return rows


def run_sweep(cfg, timings=False, workers=None):
    """Run every (method, snr, trial); returns records in canonical order."""
    workers = cfg.workers if workers is None else workers
    sim = [m for m in cfg.methods if m in SIM_METHODS]
    pred = [m for m in cfg.methods if m in PRED_METHODS]
    jobs = [
        (cfg.scenario, sim, snr, trial, cfg.seed, cfg.variant, timings)
        for snr in cfg.snr_db
        for trial in range(cfg.trials)
    ]
    cells = []
    if sim and jobs:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                cells = list(pool.map(_run_cell_args, jobs))
        else:
            cells = [_run_cell_args(job) for job in jobs]
    records = [rec for cell in cells for rec in cell]
    if pred:
        # predictions are deterministic, so one solve per SNR is repeated per trial
        for snr in cfg.snr_db:
            rows = predict(cfg.scenario, snr, pred) if cfg.trials > 0 else []
            for trial in range(cfg.trials):
                for rec in rows:
                    records.append(dataclasses.replace(rec, trial=trial))
    return sort_records(records, cfg.methods, cfg.snr_db)


def sort_records(records, methods, snrs):
    m_rank = {m: i for i, m in enumerate(methods)}
    s_rank = {float(s): i for i, s in enumerate(snrs)}
    return sorted(
        records,
        key=lambda r: (m_rank[r.method], s_rank[float(r.snr_db)], r.trial),
    )


# ---------------------------------------------------------------- timing


@dataclass
class TimingSummary:
    median_ms: dict
    speedup: dict = field(default_factory=dict)
    analytic: dict = field(default_factory=dict)

    def lines(self):
        out = [f"median_ms[{m}] = {v:.3f}" for m, v in self.median_ms.items()]
        out += [f"speedup[{k}] = {v:.3f}" for k, v in self.speedup.items()]
        out += [f"analytic[{k}] = {v:.3f}" for k, v in self.analytic.items()]
        return out


def timing_report(records, reference="original_df", setting=None, desk=None):
    """Median wall-clock per method and speedups against ``reference``.

    ``analytic`` holds the per-iteration operation-count ratios for the
    ``setting`` dimensions (default ``M=1000, N=20, K_d=80, M_r=20``) and,
    when ``desk=(M, N, K_d, M_r)`` is given, for the measured setting too.
    ``complexity`` compares against ``N`` sequential single-user solves;
    ``parallel`` against one of them.
    """
    by_method = {}
    for rec in records:
        if rec.ok and rec.wall_ms_total is not None:
            by_method.setdefault(rec.method, []).append(rec.wall_ms_total)
    medians = {m: float(median(v)) for m, v in by_method.items()}
    speedup = {}
    if len(medians) > 1 and reference in medians:
        for m, v in medians.items():
            if m != reference and v > 0:
                speedup[f"{reference}/{m}"] = medians[reference] / v
    analytic = {}
    for tag, dims in (("paper", setting or ANALYTIC_SETTING), ("desk", desk)):
        if dims is None:
            continue
        if not isinstance(dims, dict):
            dims = dict(zip(("M", "N", "K_d", "M_r"), dims))
        mo, _, mj, _ = replica.complexity_counts(**dims)
        analytic[f"{tag}_complexity"] = mo / (dims["N"] * mj)
        analytic[f"{tag}_parallel"] = mo / mj
    return TimingSummary(median_ms=medians, speedup=speedup, analytic=analytic)


def bench(cfg, trials=None, snr_db=None, warmup=1):
    """Timed runs of ``original_df`` and ``pf_jcd`` on shared realizations.

    The first ``warmup`` cells are run but not recorded.  Runs sequentially
    in-process so timings are not disturbed by other workers.
    """
    trials = cfg.trials if trials is None else trials
    snr = cfg.snr_db[-1] if snr_db is None else snr_db
    methods = [m for m in ("original_df", "pf_jcd") if m in cfg.methods] or ["original_df", "pf_jcd"]
    for w in range(warmup):
        run_cell(cfg.scenario, methods, snr, WARMUP_TRIAL + w, cfg.seed, cfg.variant, timings=True)
    records = []
    for trial in range(trials):
        records.extend(
            run_cell(cfg.scenario, methods, snr, trial, cfg.seed, cfg.variant, timings=True)
        )
    rows = [r.retained_rows for r in records if r.method == "pf_jcd" and r.ok]
    desk = None
    if rows:
        s = cfg.scenario
        desk = (s.M, s.N, s.K_d, max(1, int(round(median(rows)))))
    return records, timing_report(records, desk=desk)
