"""
Experiment orchestration.

A job is one Stage-0 pipeline (family, flow or not, alpha, IPM, seed): fit the
covariate propensity, train the representation, assemble nuisances, score the
plug-in baseline, then fit and score every Stage-2 cell. Jobs run under
joblib and return their rows; the parent process is the only writer.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from orlearners.balance import IpmKind
from orlearners.data import OracleDataset
from orlearners.errors import OrlError
from orlearners.evaluation import MetricReport, delta_vs_baseline, expansion_ratio, oracle_metric
from orlearners.harness.config import ExperimentConfig, config_hash
from orlearners.harness.results import NO_CELL, NO_IPM, PLUGIN, JobKey, ResultRecord, ResultStore
from orlearners.harness.tuning import TuningStage, search_grid, tune
from orlearners.logging_config import get_logger
from orlearners.models.base import Family, RepLearnerSpec
from orlearners.nuisance import NetworkHyper, NuisancePolicy, assemble_nuisances, fit_propensity, needs_fresh_outcome
from orlearners.ortho import OrthogonalLossSpec, Quantity, fit_target, plugin_predictions
from orlearners.services.registry import get_learner
from orlearners.stage0 import train_representation

logger = get_logger(__name__)

CURVES_FILE = "curves.csv"
CURVE_HEADER = ["family", "invertible", "ipm", "learner", "quantity", "alpha", "mean", "se"]


def metric_kind(quantity: Quantity, baseline: bool = False) -> str:
    kind = "rpehe" if quantity == Quantity.CATE else "rmse"
    return f"baseline_{kind}" if baseline else kind


@dataclass
class JobOutcome:
    key: JobKey
    records: list[ResultRecord]
    run: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Hyperparameters:
    rep: RepLearnerSpec
    propensity: NetworkHyper
    outcome: NetworkHyper
    tuned: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Job grid
# ---------------------------------------------------------------------------

def setting1_jobs(config: ExperimentConfig) -> list[JobKey]:
    """Unbalanced learners only: alpha = 0 and no IPM."""
    digest = config_hash(config)
    return [
        JobKey(digest, family.value, invertible, 0.0, NO_IPM, seed)
        for family in config.families
        for invertible in config.invertible
        for seed in config.seeds
    ]


def setting2_jobs(config: ExperimentConfig) -> list[JobKey]:
    """
    The alpha sweep. alpha = 0 is shared by all IPMs and keyed with ipm
    'none'; families without a balance term only get that job.
    """
    digest = config_hash(config)
    jobs = []
    for family in config.families:
        balanced = get_learner(family).uses_balance
        for invertible in config.invertible:
            for seed in config.seeds:
                jobs.append(JobKey(digest, family.value, invertible, 0.0, NO_IPM, seed))
                if not balanced:
                    continue
                for ipm in config.ipms:
                    for alpha in sorted(set(config.alphas)):
                        if alpha > 0.0:
                            jobs.append(JobKey(digest, family.value, invertible, float(alpha), ipm.value, seed))
    return jobs


# ---------------------------------------------------------------------------
# One job
# ---------------------------------------------------------------------------

def _hyperparameters(config: ExperimentConfig, key: JobKey, train: OracleDataset) -> Hyperparameters:
    ipm = IpmKind.MMD if key.ipm == NO_IPM else IpmKind(key.ipm)
    rep = config.rep_spec(key.family, key.invertible, key.alpha, ipm)
    propensity = config.nuisance_hyper()
    outcome = config.nuisance_hyper()
    if not config.tuning_enabled:
        return Hyperparameters(rep, propensity, outcome)

    d_phi = rep.resolve_rep_dim(train.d_x)
    common = dict(data=train, seed=key.seed, n_draws=config.tuning_draws, folds=config.tuning_folds)
    tuned = {}

    grid = search_grid(TuningStage.PROPENSITY, train.d_x, d_phi, config.tuning_multiplier)
    result = tune(TuningStage.PROPENSITY, grid, base_hyper=propensity, **common)
    propensity = propensity.model_copy(update=result.best)
    tuned["propensity"] = result.best

    fitted = fit_propensity(train, propensity, key.seed) if rep.family == Family.BWCFR else None
    grid = search_grid(TuningStage.REP, train.d_x, d_phi, config.tuning_multiplier, rep.family)
    result = tune(TuningStage.REP, grid, base_rep=rep, propensity=fitted, **common)
    rep = rep.model_copy(update=result.best)
    tuned["rep"] = result.best

    if config.nuisance_policy == NuisancePolicy.FRESH_OUTCOME_NET or (
        config.nuisance_policy == NuisancePolicy.AUTO and needs_fresh_outcome(rep)
    ):
        grid = search_grid(TuningStage.OUTCOME, train.d_x, d_phi, config.tuning_multiplier)
        result = tune(TuningStage.OUTCOME, grid, base_hyper=outcome, **common)
        outcome = outcome.model_copy(update=result.best)
        tuned["outcome"] = result.best
    return Hyperparameters(rep, propensity, outcome, tuned)


def _record(key: JobKey, kind: str, **fields) -> ResultRecord:
    return ResultRecord(
        config_hash=key.config_hash,
        family=key.family,
        invertible=key.invertible,
        metric_kind=kind,
        alpha=key.alpha,
        ipm=key.ipm,
        seed=key.seed,
        **fields,
    )


def _failure_rows(key: JobKey, target_specs: list[OrthogonalLossSpec]) -> list[ResultRecord]:
    rows = [_record(key, "failure", loss=PLUGIN, quantity=q.value) for q in Quantity]
    rows += [
        _record(key, "failure", selector=spec.selector.value, loss=spec.loss.value, quantity=spec.quantity.value)
        for spec in target_specs
    ]
    return rows


def run_job(config: ExperimentConfig, key: JobKey, expansion: bool = False) -> JobOutcome:
    """
    Run one pipeline and return its rows. Never raises for pipeline errors:
    a failed Stage 0/1 turns every cell of the job into a failure row, a
    failed Stage-2 cell only that cell.
    """
    torch.set_num_threads(1)
    started = time.perf_counter()
    target_specs = config.target_specs()
    run: dict = {"errors": []}

    try:
        train, test = config.load_oracle_data(key.seed)
        hyper = _hyperparameters(config, key, train)
        propensity = fit_propensity(train, hyper.propensity, key.seed)
        tr = train_representation(
            hyper.rep, train, key.seed, propensity if hyper.rep.family == Family.BWCFR else None
        )
        nuisances = assemble_nuisances(
            tr, train, config.nuisance_policy, hyper.propensity, hyper.outcome, key.seed, propensity=propensity
        )
    except (OrlError, ValueError, RuntimeError) as e:
        logger.error(f"Job {key} failed before Stage 2: {e}", exc_info=True)
        run["errors"].append({"stage": "pipeline", "error": f"{type(e).__name__}: {e}"})
        run["wall_time"] = time.perf_counter() - started
        return JobOutcome(key, _failure_rows(key, target_specs), run)

    run["stage0"] = tr.history.model_dump()
    run["nuisance_provenance"] = nuisances.provenance.value
    run["tuned"] = hyper.tuned

    baselines: dict[Quantity, MetricReport] = {}
    records = []
    for quantity in Quantity:
        value = oracle_metric(test, quantity, plugin_predictions(tr, test.X, quantity))
        baselines[quantity] = MetricReport(quantity=quantity, value=value, n_eval=test.n, method=tr.spec.name, seed=key.seed)
        records.append(_record(key, metric_kind(quantity, baseline=True), loss=PLUGIN, quantity=quantity.value, value=value))

    run["stage2"] = {}
    for spec in target_specs:
        cell = dict(selector=spec.selector.value, loss=spec.loss.value, quantity=spec.quantity.value)
        try:
            target = fit_target(spec, tr, nuisances, train, key.seed)
            report = MetricReport(
                quantity=spec.quantity,
                value=oracle_metric(test, spec.quantity, target.predict(test.X)),
                n_eval=test.n,
                method=f"{tr.spec.name}+{spec.loss.value}/{spec.selector.value}",
                seed=key.seed,
            )
        except (OrlError, ValueError, RuntimeError) as e:
            logger.error(f"Job {key}: {spec.loss.value}/{spec.selector.value} failed: {e}", exc_info=True)
            run["errors"].append({"stage": f"{spec.loss.value}/{spec.selector.value}", "error": f"{type(e).__name__}: {e}"})
            records.append(_record(key, "failure", **cell))
            continue
        baseline = baselines[spec.quantity]
        records.append(_record(
            key, metric_kind(spec.quantity), **cell,
            value=report.value, baseline_value=baseline.value, delta=delta_vs_baseline(report, baseline),
        ))
        run["stage2"][f"{spec.loss.value}/{spec.selector.value}"] = target.history[-1]

    if expansion:
        try:
            stats = expansion_ratio(tr, test.X, seed=key.seed)
            records.append(_record(key, "expansion", value=stats.median))
            run["expansion"] = {"median": stats.median, "q1": stats.q1, "q3": stats.q3, "n_pairs": stats.n_pairs}
        except OrlError as e:
            logger.warning(f"Job {key}: expansion ratio unavailable: {e}")
            run["errors"].append({"stage": "expansion", "error": str(e)})

    run["wall_time"] = time.perf_counter() - started
    logger.info(f"Finished {tr.spec.name} alpha={key.alpha} ipm={key.ipm} seed={key.seed} in {run['wall_time']:.1f}s")
    return JobOutcome(key, records, run)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def results_path(config: ExperimentConfig, out_dir: str | Path) -> Path:
    return Path(out_dir) / config.results_file


def _run_jobs(config: ExperimentConfig, jobs: list[JobKey], store: ResultStore, n_jobs: int, expansion: bool) -> None:
    done = store.completed_jobs(config_hash(config))
    pending = [key for key in jobs if key not in done]
    if len(pending) < len(jobs):
        logger.info(f"Skipping {len(jobs) - len(pending)} completed jobs")
    logger.info(f"Running {len(pending)} jobs with {n_jobs} worker(s)")

    outcomes = Parallel(n_jobs=n_jobs, return_as="generator")(
        delayed(run_job)(config, key, expansion) for key in pending
    )
    for outcome in outcomes:
        store.put_job(outcome.key, outcome.records, outcome.run)
        store.save()


def run_setting1(config: ExperimentConfig, out_dir: str | Path, n_jobs: int = 1) -> ResultStore:
    """Compare Stage-2 selectors and losses on top of unbalanced representations."""
    store = ResultStore(results_path(config, out_dir))
    _run_jobs(config, setting1_jobs(config), store, n_jobs, expansion=False)
    store.save()
    return store


def run_setting2(config: ExperimentConfig, out_dir: str | Path, n_jobs: int = 1) -> ResultStore:
    """
    Sweep the balancing strength, then add ratio rows (metric over the
    alpha = 0 plug-in metric) and write the ratio curves.
    """
    store = ResultStore(results_path(config, out_dir))
    _run_jobs(config, setting2_jobs(config), store, n_jobs, expansion=True)
    digest = config_hash(config)
    ratios = alpha_ratios(store.records, digest)
    store.replace_kind("ratio", ratios, digest)
    store.save()
    write_curves(ratio_curves(ratios, [ipm.value for ipm in config.ipms]), Path(out_dir) / CURVES_FILE)
    return store


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def alpha_ratios(records: list[ResultRecord], digest: str) -> list[ResultRecord]:
    """
    value / (plug-in value of the same family, flow choice, seed and quantity
    at alpha = 0). The alpha = 0 plug-in ratio is exactly 1.
    """
    records = [r for r in records if r.config_hash == digest]
    normaliser = {
        (r.family, r.invertible, r.seed, r.quantity): r.value
        for r in records
        if r.alpha == 0.0 and r.metric_kind.startswith("baseline_") and r.value is not None
    }
    ratios = []
    for r in records:
        if r.metric_kind not in ("baseline_rmse", "baseline_rpehe", "rmse", "rpehe") or r.value is None:
            continue
        denominator = normaliser.get((r.family, r.invertible, r.seed, r.quantity))
        if not denominator:
            continue
        ratios.append(r.model_copy(update={
            "metric_kind": "ratio",
            "value": r.value / denominator,
            "baseline_value": denominator,
            "delta": None,
        }))
    return ratios


def ratio_curves(ratios: list[ResultRecord], ipms: list[str]) -> pd.DataFrame:
    """Mean and standard error over seeds per (method, alpha); alpha = 0 joins every IPM's curve."""
    rows = []
    for r in ratios:
        learner = PLUGIN if r.loss == PLUGIN else f"{r.loss}/{r.selector}"
        for ipm in (ipms if r.ipm == NO_IPM else [r.ipm]):
            rows.append((r.family, r.invertible, ipm, learner, r.quantity, r.alpha, r.value))
    frame = pd.DataFrame(rows, columns=CURVE_HEADER[:-2] + ["value"])
    if frame.empty:
        return pd.DataFrame(columns=CURVE_HEADER)
    grouped = frame.groupby(CURVE_HEADER[:-2], sort=True)["value"]
    curves = grouped.agg(["mean", "std", "count"]).reset_index()
    curves["se"] = (curves["std"] / np.sqrt(curves["count"])).fillna(0.0)
    return curves[CURVE_HEADER]


def write_curves(curves: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    curves.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Wrote {len(curves)} curve points to {path}")
    return path


def summarize_deltas(store: ResultStore, digest: str | None = None) -> pd.DataFrame:
    """Mean ± std of value and delta over seeds for every Stage-2 cell and baseline."""
    frame = store.frame(digest)
    frame = frame[frame["metric_kind"].isin(["rmse", "rpehe", "baseline_rmse", "baseline_rpehe"])]
    if frame.empty:
        return pd.DataFrame()
    by = ["family", "invertible", "alpha", "ipm", "metric_kind", "selector", "loss", "quantity"]
    frame = frame.astype({"value": float, "delta": float})
    summary = frame.groupby(by, sort=True).agg(
        value_mean=("value", "mean"),
        value_std=("value", "std"),
        delta_mean=("delta", "mean"),
        delta_std=("delta", "std"),
        seeds=("seed", "nunique"),
    ).reset_index()
    summary["display"] = [
        "-" if np.isnan(m) else f"{m:+.3f} ± {0.0 if np.isnan(s) else s:.3f}"
        for m, s in zip(summary["delta_mean"], summary["delta_std"])
    ]
    return summary
