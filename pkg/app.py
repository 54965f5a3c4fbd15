"""
Noise-aware tuner: command-line entry point.

Subcommands:
    tune          run one tuning session (simulated environment or external command)
    analyze       convergence, deployment and adjustment-error reports over run directories
    simulate      evaluate one configuration on fresh simulated workers
    cluster-size  detection probability per pool size and the minimal pool size
    replay        re-score a finished run with different detector / model flags
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd

from src.analysis import (adjustment_error, convergence_curves, deployment_eval, detection_table,
                          min_cluster_size, time_to_optimal, write_curves_csv, write_deploy_csv,
                          write_summary)
from src.backends import CommandBackend, SimulatedBackend
from src.catalog import TRIALS_FILE, Catalog
from src.cluster import Cluster, SimulatedRunner, ThreadedRunner, WorkerHandle
from src.config import (COMMAND_TIMEOUT_S, CRASH_TOLERANCE, DETECTION_THRESHOLD, LOG_LEVEL,
                        OUTPUT_DIR, POOL_SIZE, THRESHOLD_RANGE)
from src.configspace import ConfigSpace, default_config
from src.data_loader import load_config, load_env_override, load_space
from src.errors import (CapacityError, DomainError, ExclusionViolationError, InvariantViolationError,
                        ProtocolError, StateError, UsageError, ValidationError)
from src.noise_model import NoiseModel
from src.optimizer import ObjectiveSpec, make_optimizer, run_mode
from src.simulator import ENVIRONMENTS, deployment_workers, make_environment
from src.stability import AGGREGATION_KINDS, AggregationPolicy, StabilityAggregator
from src.tuner import Tuner, replay

logger = logging.getLogger("tuna")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CRASHES = 3
EXIT_INVARIANT = 4

# CLI spelling -> scheduling mode
MODE_ALIASES = {
    "tuna": "tuna",
    "traditional": "traditional",
    "extended-traditional": "extended_traditional",
    "naive": "naive_distributed",
}

BEST_CONFIG_FILE = "best_config.json"


@dataclass
class RunConfig:
    """Everything needed to reproduce a tune run; written to run.json."""
    mode: str
    env_name: Optional[str]
    command: Optional[str]
    space_path: Optional[str]
    seed: int
    trials: int
    pool: int
    threshold: float
    model: bool
    detector: bool
    out: str
    optimizer: str = "forest-bo"
    direction: str = "maximize"
    aggregation: Optional[str] = None
    sigma: Optional[float] = None
    guardrail: bool = False
    time_budget_s: Optional[float] = None
    match_catalog: Optional[str] = None
    env_override: Optional[Dict[str, Any]] = None
    timeout_s: float = COMMAND_TIMEOUT_S

    @property
    def aggregation_kind(self) -> str:
        if self.aggregation:
            return self.aggregation
        # without the detector there is no outlier handling, so no worst-case either
        return "worst_case" if self.detector else "mean"

    def validate(self):
        if self.mode not in MODE_ALIASES.values():
            raise UsageError(f"Unknown mode {self.mode!r}")
        if (self.env_name is None) == (self.command is None):
            raise UsageError("Give exactly one of --env or --exec")
        if self.command is not None and not self.space_path:
            raise UsageError("--exec needs --space")
        if self.trials < 1:
            raise UsageError(f"--trials must be >= 1, got {self.trials}")
        if self.pool < 1:
            raise UsageError(f"--pool must be >= 1, got {self.pool}")
        if not 0 < self.threshold < 1:
            raise UsageError(f"--threshold must be in (0, 1), got {self.threshold}")
        if not THRESHOLD_RANGE[0] <= self.threshold <= THRESHOLD_RANGE[1]:
            logger.warning(f"⚠️ Threshold {self.threshold} is outside the usual range {THRESHOLD_RANGE}")
        if self.sigma is not None and self.sigma < 0:
            raise UsageError(f"--sigma must be >= 0, got {self.sigma}")
        if self.time_budget_s is not None and self.time_budget_s <= 0:
            raise UsageError(f"--time-budget must be > 0, got {self.time_budget_s}")
        if self.mode == "extended_traditional" and not self.match_catalog:
            raise UsageError("extended-traditional mode needs --match-catalog DIR of a reference tuna run")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["aggregation"] = self.aggregation_kind
        return data


# ============= TUNE =============

def _simulated_workers(config: RunConfig):
    space, landscape, profiles = make_environment(config.env_name, config.seed, config.sigma,
                                                  pool_size=config.pool, override=config.env_override)
    backends = [SimulatedBackend(landscape, profile, config.seed) for profile in profiles]
    return space, landscape.direction, [(p.worker_id, b) for p, b in zip(profiles, backends)]


def _command_workers(config: RunConfig):
    space, error = load_space(config.space_path)
    if error:
        raise UsageError(error)
    backends = [(i, CommandBackend(config.command, timeout_s=config.timeout_s)) for i in range(config.pool)]
    return space, config.direction, backends


def _reference_trials(path: str) -> int:
    if not os.path.exists(os.path.join(path, TRIALS_FILE)):
        raise UsageError(f"No run found in {path}")
    return Catalog.open(path).trial_count


def build_tuner(config: RunConfig, catalog: Catalog):
    """Wire environment, workers, optimizer, detector and noise model for one run."""
    if config.env_name is not None:
        space, direction, workers = _simulated_workers(config)
        runner = SimulatedRunner()
    else:
        space, direction, workers = _command_workers(config)
        runner = None

    reference = _reference_trials(config.match_catalog) if config.mode == "extended_traditional" else None
    policy = run_mode(config.mode, config.pool, reference_trials=reference)
    # traditional modes pin the first worker
    workers = workers[:policy.pool_size]
    if runner is None:
        runner = ThreadedRunner(max_workers=len(workers))

    cluster = Cluster([WorkerHandle(worker_id, backend) for worker_id, backend in workers], catalog)
    objective = ObjectiveSpec(direction)
    optimizer = make_optimizer(config.optimizer, space, objective, config.seed, policy.rung_budgets)
    aggregator = StabilityAggregator(AggregationPolicy(config.aggregation_kind, direction),
                                     threshold=config.threshold,
                                     detector_enabled=config.detector and policy.detector_enabled)
    noise_model = None
    if config.model and policy.model_enabled:
        noise_model = NoiseModel(cluster.worker_ids, seed=config.seed, guardrail=config.guardrail)

    max_trials = policy.trial_target if policy.trial_target is not None else config.trials
    tuner = Tuner(space, optimizer, cluster, runner, catalog, aggregator, policy,
                  noise_model=noise_model, max_trials=max_trials, time_budget_s=config.time_budget_s)
    manifest = config.to_dict()
    manifest.update({
        "policy": {
            "mode": policy.mode,
            "rung_budgets": list(policy.rung_budgets),
            "pool_size": policy.pool_size,
            "detector_enabled": aggregator.detector_enabled,
            "model_enabled": noise_model is not None,
            "max_trials": max_trials,
        },
        "direction": direction,
        "worker_ids": cluster.worker_ids,
        "default_config_id": default_config(space).config_id,
        "space": space.to_dict(),
        "optimizer_info": optimizer.get_info(),
        "aggregator_info": aggregator.get_info(),
        "backend_info": workers[0][1].get_info(),
    })
    return tuner, manifest


def cmd_tune(config: RunConfig) -> int:
    config.validate()
    if os.path.exists(os.path.join(config.out, TRIALS_FILE)):
        raise UsageError(f"{config.out} already holds a run; choose another --out")

    catalog = Catalog(config.out)
    tuner, manifest = build_tuner(config, catalog)
    catalog.write_manifest(manifest)

    result = tuner.run()
    best = result.to_dict()
    best.update({"mode": config.mode, "seed": config.seed})
    with open(os.path.join(config.out, BEST_CONFIG_FILE), "w", encoding="utf-8") as f:
        json.dump(best, f, indent=2, sort_keys=True)

    print("\n" + "=" * 70)
    print(f"🏁 TUNING COMPLETE ({config.mode}, seed {config.seed})")
    print("=" * 70)
    if result.best_config_id is None:
        print("❌ No configuration produced a score")
    else:
        verdict = "unstable ⚠️" if result.verdict and result.verdict.is_unstable else "stable ✅"
        print(f"📊 Best config {result.best_config_id}: {result.best_score:.2f} ({verdict})")
        for name, value in sorted(result.best_values.items()):
            print(f"   {name} = {value}")
    print(f"📈 Trials: {result.trial_count} ({result.failed_trials} failed), evaluations: {result.evaluations}")
    print(f"📁 Output: {config.out}")
    print("=" * 70 + "\n")

    if result.failure_rate > CRASH_TOLERANCE:
        logger.error(f"❌ {result.failure_rate:.0%} of trials failed (tolerance {CRASH_TOLERANCE:.0%})")
        return EXIT_CRASHES
    return EXIT_OK


def run_config_from_args(args) -> RunConfig:
    override = None
    if args.env_file:
        override, error = load_env_override(args.env_file)
        if error:
            raise UsageError(error)
    mode = MODE_ALIASES[args.mode]
    out = args.out or os.path.join(OUTPUT_DIR, f"{args.mode}-{args.env or 'exec'}-seed{args.seed}")
    return RunConfig(
        mode=mode,
        env_name=args.env,
        command=args.exec,
        space_path=args.space,
        seed=args.seed,
        trials=args.trials,
        pool=args.pool,
        threshold=args.threshold,
        model=not args.no_model,
        detector=not args.no_detector,
        out=out,
        optimizer=args.optimizer,
        direction=args.direction,
        aggregation=args.aggregation,
        sigma=args.sigma,
        guardrail=args.guardrail,
        time_budget_s=args.time_budget,
        match_catalog=args.match_catalog,
        env_override=override,
        timeout_s=args.timeout,
    )


# ============= RUN DIRECTORIES =============

@dataclass
class LoadedRun:
    directory: str
    catalog: Catalog
    manifest: Dict[str, Any]
    space: ConfigSpace
    landscape: Any = None
    fresh_workers: List[Any] = field(default_factory=list)

    @property
    def direction(self) -> str:
        return self.manifest.get("direction", "maximize")

    @property
    def seed(self) -> int:
        return int(self.manifest.get("seed", 0))


def load_run(directory: str, deploy_workers: int = 10) -> LoadedRun:
    """Reopen a tune output directory; simulated runs get their landscape rebuilt from the manifest."""
    if not os.path.exists(os.path.join(directory, TRIALS_FILE)):
        raise UsageError(f"No run found in {directory}")
    catalog = Catalog.open(directory)
    manifest = catalog.read_manifest()
    if not manifest or "space" not in manifest:
        raise UsageError(f"{directory} has no usable run.json")
    space = ConfigSpace.from_dict(manifest["space"])
    run = LoadedRun(directory, catalog, manifest, space)
    if manifest.get("env_name"):
        _, run.landscape, _ = make_environment(manifest["env_name"], run.seed, manifest.get("sigma"),
                                               pool_size=manifest.get("pool", POOL_SIZE),
                                               override=manifest.get("env_override"))
        run.fresh_workers = deployment_workers(run.landscape, run.seed, deploy_workers)
    return run


# ============= ANALYZE =============

def cmd_analyze(args) -> int:
    if not 0 < args.target_fraction <= 1:
        raise UsageError(f"--target-fraction must be in (0, 1], got {args.target_fraction}")
    runs = [load_run(d, args.deploy_workers) for d in args.runs]
    out = args.out or runs[0].directory
    os.makedirs(out, exist_ok=True)

    curves, reports, entries = [], [], []
    compare = []
    for run in runs:
        mode = run.manifest.get("mode", "tuna")
        run_curves = convergence_curves(run.catalog, run.space, run.landscape, run.fresh_workers,
                                        run.direction, seed=run.seed, mode=mode)
        curves.extend(run_curves.values())
        compare.append(run_curves.get("truth", run_curves["reported"]))

        entry = {
            "directory": run.directory,
            "mode": mode,
            "seed": run.seed,
            "trials": run.catalog.trial_count,
            "failed_trials": sum(1 for r in run.catalog.records() if r.status != "ok"),
            "evaluations": len(run.catalog.evaluations()),
        }
        try:
            budget = run.manifest.get("policy", {}).get("rung_budgets", [None])[-1]
            try:
                best_id = run.catalog.best_config(run.direction, budget=budget)
            except StateError:
                best_id = run.catalog.best_config(run.direction)
        except StateError:
            best_id = None
        entry["best_config_id"] = best_id

        if best_id is not None:
            summary = run.catalog.summary(best_id)
            entry["best_score"] = summary.reported_score
            entry["best_verdict"] = summary.verdict.to_dict() if summary.verdict else None
            if run.landscape is not None:
                config = run.space.make_config(run.catalog.config_values(best_id))
                report = deployment_eval(config, run.landscape, run.fresh_workers,
                                         replicates=args.replicates, seed=run.seed)
                reports.append(report)
                deployment = report.to_dict()
                deployment.pop("worker_ids")
                deployment.pop("performances")
                entry["deployment"] = deployment
                entry["planted_unstable"] = run.landscape.is_planted(config)
        if run.landscape is not None:
            entry["adjustment_error"] = adjustment_error(run.catalog, run.space, run.landscape)
        entries.append(entry)
        logger.info(f"  ✓ Analyzed {run.directory}: {entry['trials']} trials, best {best_id}")

    summary = {"runs": entries}
    if len(compare) > 1:
        summary["time_to_optimal"] = []
        for run, curve in zip(runs[1:], compare[1:]):
            tto = time_to_optimal(compare[0], curve, args.target_fraction)
            summary["time_to_optimal"].append({
                "reference": runs[0].directory,
                "compared": run.directory,
                "ratio": "unbounded" if tto.unbounded else tto.ratio,
                "hit_reference": tto.hit_a,
                "hit_compared": tto.hit_b,
                "max_iteration": tto.max_iteration,
            })

    write_curves_csv(curves, os.path.join(out, "curve.csv"))
    write_deploy_csv(reports, os.path.join(out, "deploy.csv"))
    write_summary(summary, os.path.join(out, "summary.json"))
    print(f"📊 Analysis written to {out}: curve.csv, deploy.csv, summary.json")
    return EXIT_OK


# ============= SIMULATE =============

def cmd_simulate(args) -> int:
    override = None
    if args.env_file:
        override, error = load_env_override(args.env_file)
        if error:
            raise UsageError(error)
    space, landscape, _ = make_environment(args.env, args.seed, args.sigma, pool_size=args.workers,
                                           override=override)
    if args.config:
        config, error = load_config(args.config, space)
        if error:
            raise UsageError(error)
    else:
        config = default_config(space)

    fresh = deployment_workers(landscape, args.seed, args.workers)
    report = deployment_eval(config, landscape, fresh, replicates=args.replicates, seed=args.seed)

    print("\n" + "=" * 70)
    print(f"🚀 DEPLOYMENT: config {config.config_id} on {len(fresh)} fresh workers")
    print("=" * 70)
    print(f"   mean {report.mean:.2f}, stddev {report.stddev:.2f}, CoV {report.cov:.4f}, "
          f"relative range {report.relative_range:.4f}, crashed {report.crashed}")
    if landscape.is_planted(config):
        print("⚠️  Config lies in a planted unstable region")
    print("=" * 70 + "\n")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_deploy_csv([report], os.path.join(args.out, "deploy.csv"))
        summary = report.to_dict()
        summary.update({"env": args.env, "seed": args.seed, "values": config.to_dict()})
        write_summary(summary, os.path.join(args.out, "summary.json"))
    return EXIT_OK


# ============= CLUSTER SIZE =============

def cmd_cluster_size(args) -> int:
    table = detection_table(args.profiles, args.unstable, args.max_pool, method="exact")
    print("\n📊 Chance of detecting every unstable config in a run")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    size = min_cluster_size(args.profiles, args.unstable, args.confidence, method=args.method,
                            replicates=args.replicates, seed=args.seed, max_pool=args.max_pool)
    if size is None:
        print(f"\n❌ Confidence {args.confidence} is unachievable with pools up to {args.max_pool}")
    else:
        print(f"\n✅ Minimal pool size for {args.confidence:.0%} confidence: {size}")
    return EXIT_OK


# ============= REPLAY =============

def cmd_replay(args) -> int:
    run = load_run(args.run)
    manifest = run.manifest
    threshold = args.threshold if args.threshold is not None else manifest.get("threshold", DETECTION_THRESHOLD)
    detector = not args.no_detector
    kind = args.aggregation or ("worst_case" if detector else "mean")
    aggregator = StabilityAggregator(AggregationPolicy(kind, run.direction), threshold=threshold,
                                     detector_enabled=detector)
    noise_model = None
    if not args.no_model:
        noise_model = NoiseModel(manifest.get("worker_ids", []), seed=run.seed, guardrail=args.guardrail)

    max_budget = manifest.get("policy", {}).get("rung_budgets", [1])[-1]
    _, rows = replay(run.catalog, aggregator, noise_model, max_budget,
                     default_config_id=manifest.get("default_config_id"))

    frame = pd.DataFrame(rows)
    out = args.out or run.directory
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "replay.csv")
    frame.to_csv(path, index=False)
    changed = int((frame["original_unstable"] != frame["replay_unstable"]).sum()) if len(frame) else 0
    print(f"🔄 Replayed {len(frame)} evaluations; {changed} verdicts changed; written to {path}")
    return EXIT_OK


# ============= PARSER =============

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tuna", description="Noise-aware distributed autotuner")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    tune = sub.add_parser("tune", help="run one tuning session")
    target = tune.add_mutually_exclusive_group(required=True)
    target.add_argument("--env", choices=ENVIRONMENTS, help="simulated environment")
    target.add_argument("--exec", help="benchmark command run once per trial")
    tune.add_argument("--mode", choices=list(MODE_ALIASES), default="tuna")
    tune.add_argument("--space", help="configuration space JSON (required with --exec)")
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--trials", type=int, default=200)
    tune.add_argument("--pool", type=int, default=POOL_SIZE)
    tune.add_argument("--threshold", type=float, default=DETECTION_THRESHOLD)
    tune.add_argument("--no-model", action="store_true", help="disable the noise adjuster")
    tune.add_argument("--no-detector", action="store_true", help="disable outlier detection")
    tune.add_argument("--out", help="output directory")
    tune.add_argument("--optimizer", choices=["forest-bo", "random"], default="forest-bo")
    tune.add_argument("--direction", choices=["maximize", "minimize"], default="maximize",
                      help="objective direction of an --exec benchmark")
    tune.add_argument("--aggregation", choices=AGGREGATION_KINDS)
    tune.add_argument("--sigma", type=float, help="override every simulated worker's noise level")
    tune.add_argument("--env-file", help="JSON override for the simulated environment")
    tune.add_argument("--guardrail", action="store_true", help="clamp predicted relative error to +-0.5")
    tune.add_argument("--time-budget", type=float, help="stop asking after this many seconds")
    tune.add_argument("--match-catalog", help="reference run whose trial count extended-traditional matches")
    tune.add_argument("--timeout", type=float, default=COMMAND_TIMEOUT_S, help="per-trial timeout of --exec")

    analyze = sub.add_parser("analyze", help="curves, deployment and error reports")
    analyze.add_argument("runs", nargs="+", help="tune output directories; the first is the reference")
    analyze.add_argument("--out", help="output directory (default: the first run)")
    analyze.add_argument("--target-fraction", type=float, default=0.95)
    analyze.add_argument("--deploy-workers", type=int, default=10)
    analyze.add_argument("--replicates", type=int, default=1)

    simulate = sub.add_parser("simulate", help="evaluate one config on fresh simulated workers")
    simulate.add_argument("--env", choices=ENVIRONMENTS, required=True)
    simulate.add_argument("--config", help="configuration JSON (default: the space default)")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--workers", type=int, default=10)
    simulate.add_argument("--replicates", type=int, default=1)
    simulate.add_argument("--sigma", type=float)
    simulate.add_argument("--env-file")
    simulate.add_argument("--out")

    cluster = sub.add_parser("cluster-size", help="minimal pool size for a detection confidence")
    cluster.add_argument("--profiles", type=float, nargs="+", default=[0.5],
                         help="bad-worker fractions of the unstable configs")
    cluster.add_argument("--unstable", type=int, default=1, help="unstable configs met per run")
    cluster.add_argument("--confidence", type=float, default=0.95)
    cluster.add_argument("--method", choices=["monte_carlo", "exact"], default="monte_carlo")
    cluster.add_argument("--replicates", type=int, default=100_000)
    cluster.add_argument("--max-pool", type=int, default=20)
    cluster.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("replay", help="re-score a finished run without re-evaluating")
    rep.add_argument("run", help="tune output directory")
    rep.add_argument("--no-model", action="store_true")
    rep.add_argument("--no-detector", action="store_true")
    rep.add_argument("--threshold", type=float)
    rep.add_argument("--aggregation", choices=AGGREGATION_KINDS)
    rep.add_argument("--guardrail", action="store_true")
    rep.add_argument("--out")
    return parser


def _configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format="%(message)s", force=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "tune":
            return cmd_tune(run_config_from_args(args))
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "cluster-size":
            return cmd_cluster_size(args)
        return cmd_replay(args)
    except (UsageError, ValidationError, DomainError, CapacityError) as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    except (InvariantViolationError, ExclusionViolationError, StateError, ProtocolError) as e:
        logger.error(f"❌ Internal invariant violated: {e}")
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
