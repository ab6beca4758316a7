import logging

import pandas as pd
import pytest

from orlearners.balance import IpmKind
from orlearners.data import DgpSpec, generate, save_csv
from orlearners.errors import ConfigurationError, DataValidationError, EmptyGrid
from orlearners.harness import experiments
from orlearners.harness.config import ExperimentConfig, config_hash, load_config
from orlearners.harness.experiments import (
    CURVE_HEADER,
    CURVES_FILE,
    alpha_ratios,
    ratio_curves,
    run_job,
    run_setting1,
    run_setting2,
    setting1_jobs,
    setting2_jobs,
    summarize_deltas,
)
from orlearners.harness.results import HEADER, JobKey, ResultRecord, ResultStore, _format
from orlearners.harness.tuning import TuningStage, search_grid, tune
from orlearners.models.base import Family
from orlearners.nuisance import NetworkHyper

TINY_TOML = """
schema_version = 1
n_train = 64
n_test = 32
seeds = [0, 1]
families = ["tarnet"]
epochs = 2
nuisance_epochs = 2
target_epochs = 2
selectors = ["Phi"]
losses = ["DRK", "R"]
wm_iterations = 20
"""


def write_config(tmp_path, text=TINY_TOML, name="config.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_load_config(tmp_path):
    config = load_config(write_config(tmp_path))
    assert config.n_train == 64
    assert config.families == [Family.TARNET]
    assert [spec.loss.value for spec in config.target_specs()] == ["DRK", "R"]


def test_missing_config_is_named(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigurationError, match="nope.toml"):
        load_config(missing)


@pytest.mark.parametrize(
    "text",
    [
        "n_train = 10\n",
        "schema_version = 2\n",
        "schema_version = 1\nwidth = 3\n",
        'schema_version = 1\nlosses = ["DRFS"]\n',
        "schema_version = 1\nseeds = [1, 1]\n",
        "schema_version = 1\nn_train = [\n",
    ],
)
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigurationError):
        load_config(write_config(tmp_path, text))


def test_config_hash_ignores_order_output_and_seeds(tmp_path):
    first = load_config(write_config(tmp_path, "schema_version = 1\nepochs = 3\nn_train = 40\n", "a.toml"))
    second = load_config(write_config(tmp_path, 'n_train = 40\nschema_version = 1\nepochs = 3\nout_dir = "x"\nseeds = [4]\n', "b.toml"))
    third = load_config(write_config(tmp_path, "schema_version = 1\nepochs = 4\nn_train = 40\n", "c.toml"))
    assert config_hash(first) == config_hash(second)
    assert config_hash(first) != config_hash(third)
    assert len(config_hash(first)) == 16


def test_csv_source_split(tmp_path):
    path = save_csv(generate(DgpSpec(n=50, seed=0)), tmp_path / "d.csv")
    config = ExperimentConfig(csv_path=path, n_test=10)
    train, test = config.load_oracle_data(seed=3)
    assert (train.n, test.n) == (40, 10)
    again, _ = config.load_oracle_data(seed=3)
    assert (again.X == train.X).all()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(csv_path=path, n_test=50).load_data(0)


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------

def test_search_grid_widths():
    grid = search_grid(TuningStage.PROPENSITY, d_x=2, d_phi=2)
    assert grid["hidden"] == [4, 6, 8]
    assert grid["batch_size"] == [32, 64, 128]
    rep = search_grid("rep", d_x=3, d_phi=2, family=Family.CFR_ISW)
    assert rep["rep_hidden"] == [6, 9, 12]
    assert {"propensity_learning_rate", "propensity_hidden"} <= set(rep)
    assert "weight_hidden" in search_grid("rep", 2, 2, family="rcfr")


def test_single_point_grid(caplog, kallus_small):
    grid = {"learning_rate": [0.01], "batch_size": [32], "weight_decay": [0.0], "hidden": [4]}
    with caplog.at_level(logging.WARNING, logger="orlearners.harness.tuning"):
        result = tune("outcome", grid, kallus_small, seed=0, base_hyper=NetworkHyper(epochs=2), n_draws=5, folds=2)
    assert result.best == {"learning_rate": 0.01, "batch_size": 32, "weight_decay": 0.0, "hidden": 4}
    assert len(result.scores) == 1
    assert "using all" in caplog.text


def test_tuning_prefers_a_learning_model(kallus_small):
    grid = {"learning_rate": [0.0, 0.01], "hidden": [8]}
    result = tune(TuningStage.OUTCOME, grid, kallus_small, seed=1, base_hyper=NetworkHyper(epochs=40), folds=2)
    assert result.best["learning_rate"] == 0.01
    assert result.best_score == min(result.scores)


def test_tuning_is_deterministic(kallus_small, make_spec):
    grid = search_grid("rep", 2, 2)
    first = tune("rep", grid, kallus_small, seed=2, base_rep=make_spec(epochs=1), n_draws=2, folds=2)
    second = tune("rep", grid, kallus_small, seed=2, base_rep=make_spec(epochs=1), n_draws=2, folds=2)
    assert first == second


def test_tuning_errors(kallus_small):
    with pytest.raises(EmptyGrid):
        tune("outcome", {"hidden": []}, kallus_small, seed=0)
    with pytest.raises(EmptyGrid):
        tune("outcome", {}, kallus_small, seed=0)
    with pytest.raises(ConfigurationError):
        tune("rep", {"rep_hidden": [4]}, kallus_small, seed=0)
    with pytest.raises(ConfigurationError):
        tune("outcome", {"hidden": [4]}, kallus_small.subset([0, 1, 2]), seed=0, folds=5)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

def _rec(seed=0, kind="rpehe", alpha=0.0, ipm="none", selector="Phi", loss="DRK", quantity="cate", value=1.0, **extra):
    return ResultRecord(
        config_hash="abc", family="cfr", invertible=False, metric_kind=kind, alpha=alpha, ipm=ipm,
        selector=selector, loss=loss, seed=seed, quantity=quantity, value=value, **extra,
    )


def test_format_values():
    assert _format(None) == ""
    assert _format(True) == "true"
    assert _format(0.1) == "0.1"
    assert _format(1e-20) == "1e-20"
    assert _format(3) == "3"


def test_record_row_round_trip():
    record = _rec(value=0.30000000000000004, baseline_value=0.5, delta=-0.19999999999999996)
    row = dict(zip(HEADER, record.to_row()))
    assert row["invertible"] == "false"
    assert ResultRecord.from_row(row) == record
    with pytest.raises(DataValidationError):
        ResultRecord.from_row({**row, "seed": "x"})


def test_store_saves_sorted_rows(tmp_path):
    key0, key1 = _rec(seed=0).job_key, _rec(seed=1).job_key
    first = ResultStore(tmp_path / "a.csv")
    first.put_job(key1, [_rec(seed=1)], {"wall_time": 1.0})
    first.put_job(key0, [_rec(seed=0, loss="R"), _rec(seed=0, kind="baseline_rpehe", selector="-", loss="plugin")])
    first.save()
    second = ResultStore(tmp_path / "b.csv")
    second.put_job(key0, [_rec(seed=0, kind="baseline_rpehe", selector="-", loss="plugin"), _rec(seed=0, loss="R")])
    second.put_job(key1, [_rec(seed=1)], {"wall_time": 1.0})
    second.save()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    reloaded = ResultStore(tmp_path / "a.csv")
    assert reloaded.records == first.records
    assert reloaded.records[0].metric_kind == "baseline_rpehe"
    assert reloaded.run_info(key1)["wall_time"] == 1.0


def test_completed_jobs_exclude_failures(tmp_path):
    store = ResultStore(tmp_path / "r.csv")
    store.put_job(_rec(seed=0).job_key, [_rec(seed=0)])
    store.put_job(_rec(seed=1).job_key, [_rec(seed=1), _rec(seed=1, kind="failure", loss="R", value=None)])
    assert store.completed_jobs() == {_rec(seed=0).job_key}
    assert store.completed_jobs("other") == set()


def test_put_job_rejects_foreign_rows(tmp_path):
    store = ResultStore(tmp_path / "r.csv")
    with pytest.raises(DataValidationError):
        store.put_job(_rec(seed=0).job_key, [_rec(seed=1)])


def test_store_rejects_other_csv(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataValidationError):
        ResultStore(path)


# ---------------------------------------------------------------------------
# Job grids and post-processing
# ---------------------------------------------------------------------------

def test_job_counts():
    config = ExperimentConfig(seeds=[0, 1], families=[Family.TARNET, Family.CFR], invertible=[False, True])
    assert len(setting1_jobs(config)) == 2 * 2 * 2
    # TARNet: alpha = 0 only; CFR: alpha = 0 plus 5 alphas per IPM
    assert len(setting2_jobs(config)) == 2 * 2 * (1 + 1 + 2 * 5)
    shared = [key for key in setting2_jobs(config) if key.alpha == 0.0]
    assert {key.ipm for key in shared} == {"none"}
    assert all(key.alpha == 0.0 and key.ipm == "none" for key in setting1_jobs(config))


def test_alpha_ratios():
    records = [
        _rec(kind="baseline_rpehe", selector="-", loss="plugin", value=2.0),
        _rec(kind="rpehe", value=1.0),
        _rec(kind="baseline_rpehe", selector="-", loss="plugin", alpha=0.5, ipm="mmd", value=3.0),
        _rec(kind="rpehe", alpha=0.5, ipm="mmd", value=1.5),
        _rec(kind="expansion", selector="-", loss="-", quantity="-", alpha=0.5, ipm="mmd", value=0.3),
        _rec(kind="failure", alpha=0.5, ipm="mmd", loss="R", value=None),
    ]
    ratios = {(r.alpha, r.loss): r.value for r in alpha_ratios(records, "abc")}
    assert ratios == {(0.0, "plugin"): 1.0, (0.0, "DRK"): 0.5, (0.5, "plugin"): 1.5, (0.5, "DRK"): 0.75}
    assert alpha_ratios(records, "other") == []


def test_ratio_curves_share_alpha_zero():
    ratios = [
        _rec(kind="ratio", selector="-", loss="plugin", value=1.0, seed=0),
        _rec(kind="ratio", selector="-", loss="plugin", value=1.0, seed=1),
        _rec(kind="ratio", selector="-", loss="plugin", alpha=0.5, ipm="wm", value=1.2, seed=0),
        _rec(kind="ratio", selector="-", loss="plugin", alpha=0.5, ipm="wm", value=1.4, seed=1),
    ]
    curves = ratio_curves(ratios, ["mmd", "wm"])
    assert list(curves.columns) == CURVE_HEADER
    assert set(zip(curves["ipm"], curves["alpha"])) == {("mmd", 0.0), ("wm", 0.0), ("wm", 0.5)}
    point = curves[(curves["ipm"] == "wm") & (curves["alpha"] == 0.5)].iloc[0]
    assert point["mean"] == pytest.approx(1.3)
    assert point["se"] == pytest.approx(0.1)
    assert ratio_curves([], ["mmd"]).empty


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def test_setting1_rows(tmp_path, tiny_config):
    store = run_setting1(tiny_config, tmp_path)
    frame = pd.read_csv(tmp_path / "results.csv", dtype=str, keep_default_na=False)
    assert list(frame.columns) == HEADER
    # per seed: three plug-in baselines and two Stage-2 cells
    assert len(frame) == 2 * (3 + 2)
    assert set(frame["metric_kind"]) == {"baseline_rmse", "baseline_rpehe", "rpehe"}
    assert set(frame.loc[frame["loss"] == "plugin", "selector"]) == {"-"}
    assert set(frame["ipm"]) == {"none"}
    cells = frame[frame["metric_kind"] == "rpehe"]
    assert (cells["delta"].astype(float) == cells["value"].astype(float) - cells["baseline_value"].astype(float)).all()
    assert len(store.completed_jobs()) == 2
    assert not summarize_deltas(store).empty


def test_rerun_skips_completed_jobs(tmp_path, tiny_config, monkeypatch):
    run_setting1(tiny_config, tmp_path)
    before = (tmp_path / "results.csv").read_bytes()

    def refuse(*args, **kwargs):
        raise AssertionError("completed jobs must not run again")

    monkeypatch.setattr(experiments, "run_job", refuse)
    run_setting1(tiny_config, tmp_path)
    assert (tmp_path / "results.csv").read_bytes() == before


def test_pipeline_failure_marks_every_cell(tmp_path, tiny_config, monkeypatch):
    def diverge(*args, **kwargs):
        raise RuntimeError("diverged")

    monkeypatch.setattr(experiments, "train_representation", diverge)
    key = setting1_jobs(tiny_config)[0]
    outcome = run_job(tiny_config, key)
    assert len(outcome.records) == 3 + 2
    assert all(record.is_failure for record in outcome.records)
    assert "diverged" in outcome.run["errors"][0]["error"]

    store = run_setting1(tiny_config, tmp_path)
    assert store.completed_jobs() == set()
    monkeypatch.undo()
    store = run_setting1(tiny_config, tmp_path)
    assert len(store.completed_jobs()) == 2
    assert not any(record.is_failure for record in store.records)


def test_single_cell_failure(tiny_config, monkeypatch):
    real_fit = experiments.fit_target

    def flaky(spec, *args, **kwargs):
        if spec.loss.value == "R":
            raise ValueError("cell broke")
        return real_fit(spec, *args, **kwargs)

    monkeypatch.setattr(experiments, "fit_target", flaky)
    outcome = run_job(tiny_config, setting1_jobs(tiny_config)[0])
    failures = [record for record in outcome.records if record.is_failure]
    assert [(f.loss, f.selector) for f in failures] == [("R", "Phi")]
    assert len(outcome.records) == 5


def test_setting2_writes_ratio_curves(tmp_path, tiny_config):
    config = tiny_config.model_copy(update={"families": [Family.CFR], "alphas": [0.0, 0.5], "ipms": [IpmKind.MMD], "seeds": [0]})
    store = run_setting2(config, tmp_path)
    kinds = [record.metric_kind for record in store.records]
    assert kinds.count("expansion") == 2
    assert kinds.count("ratio") == 2 * (3 + 2)

    curves = pd.read_csv(tmp_path / CURVES_FILE)
    assert list(curves.columns) == CURVE_HEADER
    baseline = curves[(curves["learner"] == "plugin") & (curves["alpha"] == 0.0)]
    assert len(baseline) == 3
    assert (baseline["mean"] == 1.0).all()


@pytest.mark.slow
def test_parallel_run_matches_serial(tmp_path, tiny_config):
    run_setting1(tiny_config, tmp_path / "serial", n_jobs=1)
    run_setting1(tiny_config, tmp_path / "parallel", n_jobs=2)
    serial = (tmp_path / "serial" / "results.csv").read_bytes()
    assert serial == (tmp_path / "parallel" / "results.csv").read_bytes()


def test_job_key_is_hashable():
    key = JobKey("h", "cfr", False, 0.1, "mmd", 3)
    assert key.as_dict()["alpha"] == 0.1
    assert {key: 1}[JobKey("h", "cfr", False, 0.1, "mmd", 3)] == 1


# ---------------------------------------------------------------------------
# Full-size runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def setting1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("setting1")
    config = ExperimentConfig(
        n_train=500,
        seeds=list(range(15)),
        families=[Family.TARNET],
        selectors=["Phi", "RawX"],
        losses=["DRK0", "DRK", "R", "IVW"],
    )
    return config, out, run_setting1(config, out / "serial", n_jobs=1)


@pytest.mark.slow
def test_orthogonal_learners_improve_on_plugin(setting1_run):
    _, _, store = setting1_run
    summary = summarize_deltas(store)
    cells = summary[(summary["selector"] == "Phi") & (summary["quantity"] == "cate")].set_index("loss")
    for loss in ("DRK", "R", "IVW"):
        assert cells.loc[loss, "seeds"] == 15
        assert cells.loc[loss, "delta_mean"] <= 0.0


@pytest.mark.slow
def test_raw_covariates_lose_to_representation(setting1_run):
    _, _, store = setting1_run
    frame = store.frame()
    frame = frame[(frame["loss"] == "DRK0") & (frame["metric_kind"] == "rmse")].astype({"delta": float})
    deltas = frame.pivot(index="seed", columns="selector", values="delta")
    assert len(deltas) == 15
    assert (deltas["RawX"] > deltas["Phi"]).sum() >= 10


@pytest.mark.slow
def test_four_workers_write_identical_results(setting1_run):
    config, out, _ = setting1_run
    run_setting1(config, out / "parallel", n_jobs=4)
    assert (out / "parallel" / "results.csv").read_bytes() == (out / "serial" / "results.csv").read_bytes()


@pytest.mark.slow
def test_orthogonal_ratio_at_strongest_balancing(tmp_path):
    config = ExperimentConfig(
        n_train=500,
        seeds=list(range(10)),
        families=[Family.CFR],
        invertible=[True],
        selectors=["Phi"],
        losses=["DRK"],
    )
    store = run_setting2(config, tmp_path)
    strongest = max(config.alphas)
    ratios = {
        (r.ipm, r.seed, r.loss): r.value
        for r in store.records
        if r.metric_kind == "ratio" and r.quantity == "cate" and r.alpha == strongest
    }
    for ipm in ("mmd", "wm"):
        wins = sum(ratios[(ipm, seed, "DRK")] <= ratios[(ipm, seed, "plugin")] for seed in config.seeds)
        assert wins >= 7
