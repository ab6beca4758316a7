"""
Command-line entry point.

Usage:
    python -m orlearners.main gen-data --config c.toml --out d.csv
    python -m orlearners.main setting1 --config c.toml --jobs 4
    python -m orlearners.main serve

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
import argparse
import json
import sys
from pathlib import Path

import torch

from orlearners.balance import IpmKind
from orlearners.config import get_settings
from orlearners.data import generate, save_csv
from orlearners.evaluation import confounding_summary, grid_transform_export, ricb_probe
from orlearners.harness.config import ExperimentConfig, config_hash, load_config
from orlearners.harness.experiments import results_path, run_setting1, run_setting2, summarize_deltas
from orlearners.harness.results import ResultStore
from orlearners.harness.tuning import TuningStage, search_grid, tune
from orlearners.logging_config import get_logger, setup_logging
from orlearners.models.base import Family
from orlearners.nuisance import assemble_nuisances, fit_propensity
from orlearners.ortho import fit_target
from orlearners.services.target_store import TargetStore
from orlearners.stage0 import TrainedRepresentation, train_representation

logger = get_logger(__name__)

DEFAULT_OUT_DIR = Path("results")


class SchemaArgumentParser(argparse.ArgumentParser):
    """Usage errors print the config schema and exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\nConfig file schema:\n")
        sys.stderr.write(json.dumps(ExperimentConfig.model_json_schema(), indent=2) + "\n")
        sys.exit(1)


def resolve_out_dir(flag: Path | None, config: ExperimentConfig) -> Path:
    """--out > ORL_OUT_DIR > config out_dir > ./results"""
    return flag or get_settings().out_dir or config.out_dir or DEFAULT_OUT_DIR


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = config.model_copy(update={"seeds": [args.seed]})
    return config


def _seed(args, config: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else config.seeds[0]


def _write_json(payload: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _single_rep_spec(args, config: ExperimentConfig):
    family = args.family or config.families[0].value
    invertible = args.invertible if args.invertible is not None else config.invertible[0]
    alpha = args.alpha if args.alpha is not None else 0.0
    ipm = args.ipm or config.ipms[0].value
    return config.rep_spec(family, invertible, alpha, ipm)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    config = _config(args)
    seed = _seed(args, config)
    spec = config.dgp_spec(seed)
    if args.split == "test":
        spec = spec.model_copy(update={"n": config.n_test})
    out = args.out or resolve_out_dir(None, config) / f"{config.dgp.value}_{args.split}_s{seed}.csv"
    data = generate(spec, args.split)
    save_csv(data, out)
    logger.info(f"Wrote {data.n} {args.split} rows to {out}")
    return 0


def cmd_train(args) -> int:
    """Train one pipeline and save one servable bundle per Stage-2 cell."""
    config = _config(args)
    seed = _seed(args, config)
    out_dir = resolve_out_dir(args.out, config)
    train, _ = config.load_data(seed)
    spec = _single_rep_spec(args, config)

    propensity = fit_propensity(train, config.nuisance_hyper(), seed)
    tr = train_representation(spec, train, seed, propensity if spec.family == Family.BWCFR else None)
    tr.save(out_dir / "representations" / f"{spec.name}_a{spec.alpha:g}_s{seed}")
    nuisances = assemble_nuisances(
        tr, train, config.nuisance_policy, config.nuisance_hyper(), config.nuisance_hyper(), seed, propensity=propensity
    )

    store = TargetStore(out_dir / "models")
    for target_spec in config.target_specs():
        name = store.save(fit_target(target_spec, tr, nuisances, train, seed))
        print(name)
    logger.info(f"Saved {len(config.target_specs())} bundles to {store.root}")
    return 0


def cmd_tune(args) -> int:
    config = _config(args)
    seed = _seed(args, config)
    train, _ = config.load_data(seed)
    spec = _single_rep_spec(args, config)
    d_phi = spec.resolve_rep_dim(train.d_x)
    grid = search_grid(args.stage, train.d_x, d_phi, config.tuning_multiplier, spec.family)

    propensity = None
    if args.stage == TuningStage.REP.value and spec.family == Family.BWCFR:
        propensity = fit_propensity(train, config.nuisance_hyper(), seed)
    result = tune(
        args.stage, grid, train, seed,
        base_rep=spec, base_hyper=config.nuisance_hyper(),
        n_draws=config.tuning_draws, folds=config.tuning_folds, propensity=propensity,
    )
    path = _write_json(
        {"stage": args.stage, "family": spec.family.value, "seed": seed, "best": result.best, "cv_loss": result.best_score},
        resolve_out_dir(args.out, config) / f"tuning_{args.stage}_{spec.family.value}_s{seed}.json",
    )
    print(json.dumps(result.best, sort_keys=True))
    logger.info(f"Wrote tuning result to {path}")
    return 0


def cmd_setting1(args) -> int:
    config = _config(args)
    store = run_setting1(config, resolve_out_dir(args.out, config), args.jobs)
    logger.info(f"Setting 1 results: {store.path}")
    return 0


def cmd_setting2(args) -> int:
    config = _config(args)
    store = run_setting2(config, resolve_out_dir(args.out, config), args.jobs)
    logger.info(f"Setting 2 results: {store.path}")
    return 0


def cmd_probe_ricb(args) -> int:
    config = _config(args)
    seed = _seed(args, config)
    if config.csv_path is not None:
        data, _ = config.load_oracle_data(seed)
        report = confounding_summary(data)
    else:
        report = ricb_probe(config.dgp_spec(seed).model_copy(update={"n": args.n}))
    path = _write_json(report.model_dump(), resolve_out_dir(args.out, config) / f"ricb_s{seed}.json")
    print(report.model_dump_json(indent=2))
    logger.info(f"Wrote confounding probe to {path}")
    return 0


def cmd_export_grid(args) -> int:
    config = _config(args)
    seed = _seed(args, config)
    if args.representation:
        tr = TrainedRepresentation.load(args.representation)
    else:
        train, _ = config.load_data(seed)
        spec = _single_rep_spec(args, config)
        propensity = fit_propensity(train, config.nuisance_hyper(), seed) if spec.family == Family.BWCFR else None
        tr = train_representation(spec, train, seed, propensity)
    bounds = [(-args.bound, args.bound)] * tr.d_x
    path = resolve_out_dir(args.out, config) / f"grid_{tr.spec.name}_a{tr.spec.alpha:g}_s{tr.seed}.csv"
    grid_transform_export(tr, bounds, args.resolution, path)
    return 0


def cmd_report(args) -> int:
    config = _config(args)
    out_dir = resolve_out_dir(args.out, config)
    store = ResultStore(results_path(config, out_dir))
    digest = None if args.all else config_hash(config)
    summary = summarize_deltas(store, digest)
    if summary.empty:
        logger.warning(f"No results in {store.path}")
        return 0
    path = out_dir / "summary.csv"
    summary.to_csv(path, index=False, float_format="%.6g")
    print(summary[["family", "invertible", "alpha", "ipm", "selector", "loss", "quantity", "display"]].to_string(index=False))
    logger.info(f"Wrote summary to {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from orlearners.api import create_app

    settings = get_settings()
    uvicorn.run(create_app(), host=settings.host, port=settings.port, log_level=settings.log_level.lower())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment config (TOML, schema_version = 1)")
    common.add_argument("--seed", type=int, help="Run a single seed instead of the config's seed list")
    common.add_argument("--out", type=Path, help="Output directory (gen-data: output CSV path)")
    common.add_argument("--jobs", type=int, default=get_settings().jobs, help="Parallel jobs (default: ORL_JOBS or 1)")
    common.add_argument("--log-level", type=str, help="Logging level (default: ORL_LOG_LEVEL or INFO)")

    learner = argparse.ArgumentParser(add_help=False)
    learner.add_argument("--family", choices=[f.value for f in Family], help="Learner family (default: first in config)")
    learner.add_argument("--invertible", action=argparse.BooleanOptionalAction, default=None, help="Use a coupling flow")
    learner.add_argument("--alpha", type=float, help="Balancing strength (default: 0)")
    learner.add_argument("--ipm", choices=[k.value for k in IpmKind], help="Balancing distance")

    parser = SchemaArgumentParser(prog="orlearners", description="OR-learner benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=SchemaArgumentParser)

    p = sub.add_parser("gen-data", parents=[common], help="Sample a synthetic dataset to CSV")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common, learner], help="Train one pipeline and save prediction bundles")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("tune", parents=[common, learner], help="Random grid search with k-fold CV")
    p.add_argument("--stage", choices=[s.value for s in TuningStage], default=TuningStage.REP.value)
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("setting1", parents=[common], help="Stage-2 selector x loss comparison")
    p.set_defaults(handler=cmd_setting1)

    p = sub.add_parser("setting2", parents=[common], help="Balancing-strength sweep with ratio curves")
    p.set_defaults(handler=cmd_setting2)

    p = sub.add_parser("probe-ricb", parents=[common], help="Adjusted vs unadjusted means on an oracle sample")
    p.add_argument("--n", type=int, default=10_000, help="Monte-Carlo sample size (synthetic data)")
    p.set_defaults(handler=cmd_probe_ricb)

    p = sub.add_parser("export-grid", parents=[common, learner], help="Image of a regular grid under the representation")
    p.add_argument("--representation", type=Path, help="Saved representation directory (default: train one)")
    p.add_argument("--bound", type=float, default=2.0)
    p.add_argument("--resolution", type=int, default=11)
    p.set_defaults(handler=cmd_export_grid)

    p = sub.add_parser("report", parents=[common], help="Mean ± std summary of a results file")
    p.add_argument("--all", action="store_true", help="Include rows of every config hash")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("serve", parents=[common], help="Run the prediction API")
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    if args.jobs < 1:
        logger.error(f"--jobs must be at least 1, got {args.jobs}")
        return 1
    torch.set_num_threads(1)
    try:
        return args.handler(args)
    except ValueError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
