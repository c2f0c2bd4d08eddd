"""
Command line interface for the distributed safety framework experiments
"""
import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from analytics import family_statistics, summarize_episodes
from config import ExperimentConfig, build_model, load_config
from consensus import DistributedExplicitFilter
from explicit_filter import make_filter
from harness import (
    PolicyStub, ThetaSchedule, compare_filters, coverage_sweep, derive_seed, episode_trace_to_frame, run_episode,
    run_episodes, summarize_sweep,
)
from models import (
    ConfigError, FilterKind, InitialStateMode, MembershipMode, ObjectiveMode, PolicyKind, SafetyFrameworkError,
    ThetaMode, __version__,
)
from network_model import NetworkModel
from partition import partition_model
from synthesis import load_family, save_family, synthesize_family, validate_certified

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def print_header(title: str):
    """Print formatted header"""
    print("\n" + "=" * 80)
    print(f" {title}")
    print("=" * 80)


def write_json(path: str, data: Dict):
    with open(path, 'w') as handle:
        json.dump(data, handle, indent=2, sort_keys=True)


def setup_logging(out_dir: str, level: str):
    """Console logging at the requested level plus a run.log in the output directory"""
    os.makedirs(out_dir, exist_ok=True)
    root = logging.getLogger()
    for old in [h for h in root.handlers if isinstance(h, logging.FileHandler)]:
        root.removeHandler(old)
        old.close()
    handler = logging.FileHandler(os.path.join(out_dir, 'run.log'))
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    logging.basicConfig(level=getattr(logging, level.upper()), format='%(levelname)s %(name)s: %(message)s')
    root.addHandler(handler)


def family_path(config: ExperimentConfig, explicit: Optional[str]) -> str:
    return explicit or os.path.join(config.output_dir, 'family.json')


def read_family(path: str, model: NetworkModel):
    if not os.path.isfile(path):
        raise ConfigError(f"family file {path!r} does not exist; run synthesize first or pass --family")
    return load_family(path, model)


def print_family(model: NetworkModel, stats: Dict):
    print(f"\nModel: {model.name} ({model.N} agents, n={model.n}, gamma={model.gamma})")
    print(f"  Certified Sets: {stats['count']}")
    if stats['skipped']:
        print(f"  Skipped Regions: {stats['skipped']}")
    print(f"  Mean Trace: {stats['mean_trace']:.4f}")
    print(f"  Total Solve Time: {stats['total_solve_time']:.2f}s")


def cmd_partition(config: ExperimentConfig, args) -> int:
    """Write the Voronoi partition of the state space"""
    print_header("PARTITION")
    model = build_model(config)
    partition = partition_model(model, config.partition.M, config.partition.rng_seed, config.partition.subspace)
    path = os.path.join(config.output_dir, 'partition.json')
    write_json(path, dict(partition.to_dict(), provenance=config.provenance()))
    print(f"✓ {partition.M} regions written to {path}")
    return EXIT_OK


def cmd_synthesize(config: ExperimentConfig, args) -> int:
    """Offline phase: one certified set per feasible region, validated by sampling"""
    print_header("SYNTHESIZE CERTIFIED SETS")
    model = build_model(config)
    tolerances = config.tolerance_set()
    partition = partition_model(model, config.partition.M, config.partition.rng_seed, config.partition.subspace)
    print(f"\n✓ Partitioned state space into {partition.M} regions ({config.partition.subspace} generators)")

    family = synthesize_family(model, partition, ObjectiveMode(config.objective_mode), tolerances,
                               config.workers, progress=not args.quiet)
    family.settings['provenance'] = config.provenance()

    # Get validation data
    reports = []
    rng = np.random.default_rng(derive_seed(config.master_seed, 3))
    for region in family.regions:
        report = validate_certified(region, model, args.validation_samples, rng, tolerances)
        reports.append(report.to_dict())
        print(f"{'✓' if report.passed else '⚠'} Region {region.index}: successor max {report.max_successor_value:.6f}, "
              f"state residual {report.max_state_residual:.2e}, input residual {report.max_input_residual:.2e}")

    path = family_path(config, args.family)
    save_family(family, path)
    stats = family_statistics(family)
    write_json(os.path.join(config.output_dir, 'synthesis.json'), {
        'provenance': config.provenance(),
        'family': stats,
        'validation': reports,
    })
    print_family(model, stats)
    print(f"\n✓ Family written to {path}")
    failed = [r['region_index'] for r in reports if not r['passed']]
    if failed:
        logger.error("Regions %s failed validation", failed)
        return EXIT_RUNTIME
    return EXIT_OK


def build_filter(config: ExperimentConfig, model: NetworkModel, family):
    kind = FilterKind(config.filter)
    membership = MembershipMode(config.membership)
    tolerances = config.tolerance_set()
    if config.distributed and kind == FilterKind.EXPLICIT:
        return DistributedExplicitFilter(model, family, membership, tolerances)
    return make_filter(kind, model, family, membership, tolerances)


def cmd_simulate(config: ExperimentConfig, args) -> int:
    """Closed-loop episodes with the configured filter and policy stub"""
    print_header("SIMULATE EPISODES")
    model = build_model(config)
    kind = FilterKind(config.filter)
    path = family_path(config, args.family)
    family = read_family(path, model) if kind == FilterKind.EXPLICIT or os.path.exists(path) else None
    if family is not None:
        print(f"\n✓ Loaded {len(family)} certified sets from {path}")
    filt = build_filter(config, model, family)

    policy = PolicyStub(PolicyKind(config.policy.kind), config.master_seed, config.policy.noise, config.policy.scale,
                        config.policy.position_gain, config.policy.velocity_gain)
    fixed = None if config.theta.fixed is None else [np.asarray(t, dtype=float) for t in config.theta.fixed]
    theta = ThetaSchedule(ThetaMode(config.theta.mode), fixed)
    if InitialStateMode(config.x0_mode) == InitialStateMode.GIVEN_POINT:
        traces = [run_episode(model, filt, policy, config.horizon, theta, derive_seed(config.master_seed, 0),
                              InitialStateMode.GIVEN_POINT, np.asarray(config.x0, dtype=float))]
    else:
        traces = run_episodes(model, filt, policy, config.horizon, config.episodes, config.master_seed, theta,
                              config.workers, progress=not args.quiet)

    provenance = config.provenance()
    for e, trace in enumerate(traces):
        frame = episode_trace_to_frame(trace, model)
        frame['episode_seed'] = trace.seed
        frame['config_hash'] = provenance['config_hash']
        frame['code_version'] = __version__
        frame.to_csv(os.path.join(config.output_dir, f'episode_{e:03d}.csv'), index=False)

    summary = summarize_episodes(traces)
    summary.update(provenance=provenance, filter=kind.value, distributed=config.distributed,
                   membership=config.membership, policy=config.policy.kind)
    write_json(os.path.join(config.output_dir, 'summary.json'), summary)

    print(f"\n  Episodes: {summary['episodes']} x {config.horizon} steps")
    print(f"  Filter: {kind.value}{' (consensus)' if config.distributed else ''}")
    print(f"  Violations: {summary['violations']} ({summary['violating_episodes']} episodes)")
    print(f"  Mean Intervention Rate: {summary['mean_intervention_rate']:.3f}")
    print(f"\n✓ Traces and summary written to {config.output_dir}")
    return EXIT_OK


def cmd_coverage(config: ExperimentConfig, args) -> int:
    """Covered fraction of the state space over (M, gamma) cells"""
    print_header("COVERAGE SWEEP")
    model = build_model(config)
    table = coverage_sweep(model, config.coverage.M_list, config.coverage.gamma_list,
                           config.coverage.partitions_per_cell, config.master_seed, config.coverage.n_samples,
                           ObjectiveMode(config.objective_mode), config.partition.subspace, config.tolerance_set(),
                           config.workers, progress=not args.quiet)
    provenance = config.provenance()
    table['config_hash'] = provenance['config_hash']
    table['code_version'] = __version__
    table['master_seed'] = config.master_seed
    table.to_csv(os.path.join(config.output_dir, 'coverage.csv'), index=False)

    summary = summarize_sweep(table)
    summary['config_hash'] = provenance['config_hash']
    summary.to_csv(os.path.join(config.output_dir, 'coverage_summary.csv'), index=False)
    print()
    for _, row in summary.iterrows():
        print(f"  M={int(row['M']):<4d} gamma={row['gamma']:<6.3f} coverage {row['mean']:.4f} +/- {row['sem']:.4f} "
              f"({int(row['count'])} partitions)")
    print(f"\n✓ Coverage table written to {os.path.join(config.output_dir, 'coverage.csv')}")
    return EXIT_OK


def cmd_compare(config: ExperimentConfig, args) -> int:
    """Implicit against explicit filter on shared (x, u_learning) pairs"""
    print_header("COMPARE FILTERS")
    model = build_model(config)
    family = read_family(family_path(config, args.family), model)
    report = compare_filters(model, family, config.compare.n_pairs,
                             np.random.default_rng(derive_seed(config.master_seed, 4)),
                             MembershipMode(config.membership), config.tolerance_set(), config.compare.input_scale,
                             progress=not args.quiet)
    report['provenance'] = config.provenance()
    write_json(os.path.join(config.output_dir, 'comparison.json'), report)

    print(f"\n  Pairs: {report['n_pairs']}")
    print(f"  Explicit Certification Rate: {report['explicit_certification_rate']:.3f}")
    print(f"  Implicit Certification Rate: {report['implicit_certification_rate']:.3f}")
    print(f"  Implicit Covers Explicit: {report['implicit_contains_explicit']}")
    print(f"\n✓ Comparison written to {os.path.join(config.output_dir, 'comparison.json')}")
    return EXIT_OK


COMMANDS = {
    'partition': cmd_partition,
    'synthesize': cmd_synthesize,
    'simulate': cmd_simulate,
    'coverage': cmd_coverage,
    'compare': cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Distributed safety framework experiments")
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help="experiment config JSON")
    parser.add_argument('--out', help="output directory (overrides the config)")
    parser.add_argument('--family', help="certified set family JSON (default: <out>/family.json)")
    parser.add_argument('--workers', type=int, help="parallel worker processes")
    parser.add_argument('--seed', type=int, help="master RNG seed")
    parser.add_argument('--objective', choices=[m.value for m in ObjectiveMode])
    parser.add_argument('--membership', choices=[m.value for m in MembershipMode])
    parser.add_argument('--filter', choices=[k.value for k in FilterKind])
    parser.add_argument('--distributed', action='store_true', help="evaluate the explicit filter by consensus")
    parser.add_argument('--validation-samples', type=int, default=1000)
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--quiet', action='store_true', help="disable progress bars")
    return parser


def cli_overrides(args) -> Dict:
    overrides = {}
    for flag, key in (('out', 'output_dir'), ('workers', 'workers'), ('seed', 'master_seed'),
                      ('objective', 'objective_mode'), ('membership', 'membership'), ('filter', 'filter')):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.distributed:
        overrides['distributed'] = True
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, cli_overrides(args))
    except ConfigError as exc:
        print(f"\n⚠ Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(config.output_dir, args.log_level)
    logger.info("Running %s with config %s (hash %s)", args.command, args.config, config.hash()[:12])
    try:
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"\n⚠ Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SafetyFrameworkError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"\n⚠ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
