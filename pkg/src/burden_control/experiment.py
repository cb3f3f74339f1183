"""Seeded replication runs, per-step CSV output and aggregate summaries."""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .controllers import ControllerConfig, Kind, RandomController, VISettings, make_controller, oracle_policy
from .estimator import SubproblemFitter, SubproblemGrid
from .metrics import MetricsSeries, mean_across, series_from_arrays
from .model import Action, PatientParams
from .simulator import run_trajectory
from .vi import PolicyTable, classify_policy, value_iteration

log = logging.getLogger(__name__)

STEP_COLUMNS = ("replication", "day", "action", "adhered", "reward", "latent_state",
                "oracle_action", "is_optimal", "controller_believed_state",
                "mle_tuple_index", "posterior_weight_on_true_tuple")
COMPARABILITY_DAY = 200
COMPARABILITY_SPREAD = 0.15


def derive_streams(master_seed: int, label: str, replication: int):
    """Independent patient and controller generators for one (label, replication)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(label.encode()), replication))
    patient_seq, controller_seq = seq.spawn(2)
    return np.random.default_rng(patient_seq), np.random.default_rng(controller_seq)


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", name).strip("_")


@dataclass
class ReplicationResult:
    controller: str
    replication: int
    actions: np.ndarray
    adhered: np.ndarray
    rewards: np.ndarray
    latent_states: np.ndarray
    believed_states: np.ndarray
    mle_index: np.ndarray
    weight_on_true: np.ndarray
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    oracle: PolicyTable
    runs: dict[str, list[ReplicationResult]]
    metrics: dict[str, list[MetricsSeries]]
    failures: list[dict]
    summary: dict = field(default_factory=dict)


_ORACLES: dict = {}


def _oracle(params: PatientParams, vi: VISettings) -> PolicyTable:
    key = (params, vi)
    if key not in _ORACLES:
        _ORACLES[key] = oracle_policy(params, vi)
    return _ORACLES[key]


def run_replication(params: PatientParams, ctrl: ControllerConfig, horizon: int,
                    master_seed: int, replication: int,
                    true_index: int | None = None) -> ReplicationResult:
    patient_rng, controller_rng = derive_streams(master_seed, ctrl.name, replication)
    empty = ReplicationResult(ctrl.name, replication, *([np.array([])] * 7))
    try:
        controller = make_controller(ctrl, controller_rng, true_params=params)
        traj = run_trajectory(params, controller, horizon, patient_rng, diagnostics=True)
    except Exception as exc:  # recorded and skipped by the caller
        empty.error = f"{type(exc).__name__}: {exc}"
        return empty
    believed = np.full(horizon, np.nan)
    mle = np.full(horizon, -1, dtype=np.int64)
    w_true = np.full(horizon, np.nan)
    for t, snap in enumerate(traj.diagnostics):
        if snap.get("believed_state") is not None:
            believed[t] = snap["believed_state"]
        if snap.get("mle_index") is not None:
            mle[t] = snap["mle_index"]
        if true_index is not None and snap.get("weights") is not None:
            w_true[t] = snap["weights"][true_index]
    return ReplicationResult(
        ctrl.name, replication,
        actions=np.array([int(a) for a in traj.actions], dtype=np.int8),
        adhered=np.array(traj.decisions, dtype=np.int8),
        rewards=traj.rewards, latent_states=traj.latent_states,
        believed_states=believed, mle_index=mle, weight_on_true=w_true,
    )


def _task(args) -> ReplicationResult:
    config, ci, rep, true_index = args
    return run_replication(config.patient, config.controllers[ci], config.max_horizon,
                           config.master_seed, rep, true_index)


def true_tuple_index(params: PatientParams, grid: SubproblemGrid) -> int | None:
    return grid.index_of((params.lambda_low, params.lambda_high, params.b))


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def write_steps(path: Path, runs: list[ReplicationResult], series: list[MetricsSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for run, s in zip(runs, series):
            for t in range(len(run.actions)):
                mi = int(run.mle_index[t])
                w.writerow([
                    run.replication, t, Action(int(run.actions[t])).name, int(run.adhered[t]),
                    _fmt(run.rewards[t]), _fmt(run.latent_states[t]),
                    Action(int(s.oracle_actions[t])).name, int(s.is_optimal[t]),
                    _fmt(run.believed_states[t]), "" if mi < 0 else mi,
                    _fmt(run.weight_on_true[t]),
                ])


def write_means(path: Path, means: dict[str, np.ndarray]) -> None:
    keys = list(means)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day"] + keys)
        for t in range(len(means[keys[0]])):
            w.writerow([t + 1] + [_fmt(means[k][t]) for k in keys])


def _stat(values) -> dict:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "se": se}


def comparability(metrics: dict[str, list[MetricsSeries]], names: list[str],
                  day: int = COMPARABILITY_DAY, threshold: float = COMPARABILITY_SPREAD) -> dict | None:
    """Per-replication spread of the moving-average optimal fraction at ``day``."""
    if len(names) < 2:
        return None
    by_rep = []
    for name in names:
        by_rep.append({i: s for i, s in enumerate(metrics[name]) if s is not None})
    common = sorted(set.intersection(*(set(d) for d in by_rep)))
    if not common or any(len(d[common[0]]) < day for d in by_rep):
        return None
    spreads = []
    for r in common:
        vals = [d[r].moving_avg_optimal_fraction[day - 1] for d in by_rep]
        spreads.append(float(max(vals) - min(vals)))
    within = float(np.mean(np.array(spreads) <= threshold))
    return {"day": day, "controllers": names, "threshold": threshold,
            "fraction_within": within, "median_spread": float(np.median(spreads)),
            "spreads": spreads}


def summarize(config: ExperimentConfig, metrics: dict[str, list[MetricsSeries]],
              failures: list[dict]) -> dict:
    per = {}
    for ctrl in config.controllers:
        good = [s for s in metrics[ctrl.name] if s is not None]
        entry = {"kind": ctrl.kind.value, "completed": len(good),
                 "failed": [f["replication"] for f in failures if f["controller"] == ctrl.name],
                 "days": {}}
        if good:
            for h in sorted(set(config.horizons)):
                entry["days"][str(h)] = {
                    key: _stat([s.at_day(h)[key] for s in good])
                    for key in ("cumulative_avg_reward", "cumulative_optimal_fraction",
                                "moving_avg_optimal_fraction")}
        per[ctrl.name] = entry
    adaptive = [c.name for c in config.controllers if c.kind in (Kind.MLE_BETA, Kind.THOMPSON)]
    return {"name": config.name, "patient": config.as_dict()["patient"],
            "replications": config.replications, "horizons": list(config.horizons),
            "master_seed": config.master_seed, "controllers": per,
            "comparability": comparability(metrics, adaptive), "failures": len(failures)}


def run_experiment(config: ExperimentConfig, jobs: int = 1, out_dir=None,
                   write: bool = True) -> ExperimentResult:
    """Run every (controller, replication) pair at the longest horizon.

    Shorter horizons are read off as prefixes: seeds do not depend on the
    horizon and controllers are causal, so a shorter run is identical to the
    first days of a longer one.
    """
    oracle = _oracle(config.patient, config.vi)
    true_index = true_tuple_index(config.patient, config.subproblem_grid)
    tasks = [(config, ci, rep, true_index)
             for ci in range(len(config.controllers)) for rep in range(config.replications)]
    if jobs > 1 and len(tasks) > 1:
        with multiprocessing.get_context("fork").Pool(jobs) as pool:
            results = list(pool.imap(_task, tasks, chunksize=1))
    else:
        results = [_task(t) for t in tasks]

    runs: dict[str, list[ReplicationResult]] = {c.name: [] for c in config.controllers}
    metrics: dict[str, list[MetricsSeries | None]] = {c.name: [] for c in config.controllers}
    failures = []
    for res in results:
        runs[res.controller].append(res)
        if res.ok:
            metrics[res.controller].append(
                series_from_arrays(res.rewards, res.actions, res.latent_states, oracle))
        else:
            log.error("%s replication %d failed: %s", res.controller, res.replication, res.error)
            failures.append({"controller": res.controller, "replication": res.replication,
                             "error": res.error})
            metrics[res.controller].append(None)
    summary = summarize(config, metrics, failures)
    result = ExperimentResult(config, oracle, runs, metrics, failures, summary)
    if write:
        write_outputs(result, Path(out_dir or config.output_dir))
    return result


def write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(result.config.as_dict(), fh, indent=2)
    for name, runs in result.runs.items():
        pairs = [(r, s) for r, s in zip(runs, result.metrics[name]) if s is not None]
        write_steps(out / f"steps_{slug(name)}.csv", [p[0] for p in pairs], [p[1] for p in pairs])
        if pairs:
            write_means(out / f"means_{slug(name)}.csv", mean_across([p[1] for p in pairs]))
    summary = dict(result.summary)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)


def read_steps(path) -> dict[int, dict[str, np.ndarray]]:
    """Per-replication arrays from a per-step CSV."""
    cols: dict[int, dict[str, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep = cols.setdefault(int(row["replication"]), {"action": [], "reward": [], "latent_state": []})
            rep["action"].append(int(Action.parse(row["action"])))
            rep["reward"].append(float(row["reward"]))
            rep["latent_state"].append(float(row["latent_state"]))
    return {r: {k: np.array(v) for k, v in c.items()} for r, c in sorted(cols.items())}


def recompute_metrics(run_dir, out_name: str = "metrics") -> list[Path]:
    """Rebuild per-replication metric series from stored per-step CSVs."""
    from .config import experiment_from_dict

    run_dir = Path(run_dir)
    with open(run_dir / "config.json") as fh:
        config = experiment_from_dict(json.load(fh))
    oracle = _oracle(config.patient, config.vi)
    written = []
    for ctrl in config.controllers:
        src = run_dir / f"steps_{slug(ctrl.name)}.csv"
        if not src.exists():
            raise FileNotFoundError(src)
        dst = run_dir / f"{out_name}_{slug(ctrl.name)}.csv"
        with open(dst, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "day", "cumulative_avg_reward",
                        "cumulative_optimal_fraction", "moving_avg_optimal_fraction"])
            for rep, arr in read_steps(src).items():
                s = series_from_arrays(arr["reward"], arr["action"], arr["latent_state"], oracle)
                for t in range(len(s)):
                    w.writerow([rep, t + 1, _fmt(s.cumulative_avg_reward[t]),
                                _fmt(s.cumulative_optimal_fraction[t]),
                                _fmt(s.moving_avg_optimal_fraction[t])])
        written.append(dst)
    return written


def emit_policy_sweep(base: PatientParams, parameter: str, values, vi: VISettings | None = None,
                      path=None) -> list[dict]:
    """Solve one model per sweep value; rows carry the node-wise policy and its structure."""
    vi = vi or VISettings()
    if parameter not in ("c_low", "lambda_low", "lambda_high", "b", "gamma_low", "gamma_high", "alpha"):
        raise ValueError(f"cannot sweep parameter {parameter!r}")
    rows = []
    for v in values:
        params = base.with_(**{parameter: float(v)})
        if parameter == "b":
            params = params.with_(x0=min(params.x0, params.x_bar))
        _, pol = value_iteration(params, vi.grid(params.b))
        st = classify_policy(pol)
        thresholds = ";".join(repr(t) for t in st.thresholds)
        for x, a in zip(pol.grid.nodes, pol.actions):
            rows.append({"parameter": parameter, "value": float(v), "x": float(x),
                         "action": Action(int(a)).name, "classification": st.classification.value,
                         "thresholds": thresholds})
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
    return rows


@dataclass
class ConsistencyResult:
    checkpoints: tuple[int, ...]
    mle_index: np.ndarray      # (replications, checkpoints)
    weight_on_true: np.ndarray
    c_low_hat: np.ndarray
    true_index: int | None


def consistency_study(params: PatientParams, grid: SubproblemGrid, checkpoints,
                      replications: int, master_seed: int,
                      label: str = "consistency") -> ConsistencyResult:
    """Refit under the Random policy at each checkpoint length."""
    checkpoints = tuple(sorted(int(n) for n in checkpoints))
    ti = true_tuple_index(params, grid)
    shape = (replications, len(checkpoints))
    mle = np.zeros(shape, dtype=np.int64)
    w_true = np.full(shape, np.nan)
    c_hat = np.zeros(shape)
    for rep in range(replications):
        patient_rng, controller_rng = derive_streams(master_seed, label, rep)
        traj = run_trajectory(params, RandomController(controller_rng), checkpoints[-1], patient_rng)
        fitter = SubproblemFitter(grid)
        k = 0
        for t, rec in enumerate(traj.records):
            fitter.append(rec.action, rec.adhered)
            if t + 1 == checkpoints[k]:
                fit = fitter.fit()
                i = fit.best_index
                mle[rep, k], c_hat[rep, k] = i, fit.c_low[i]
                if ti is not None:
                    w_true[rep, k] = fit.weights[ti]
                k += 1
                if k == len(checkpoints):
                    break
    return ConsistencyResult(checkpoints, mle, w_true, c_hat, ti)
