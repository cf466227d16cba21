"""Command line entry point: ``relevance-grpo <command>``.

Every command resolves and validates the run configuration first, writes it to
``<output>/run_config.json`` and only then reads its inputs. Exit status is 0
on success, 1 when a command fails or its check does not pass, 2 for
configuration errors and 3 when training diverges.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import DEFAULT_PRESET, PRESETS, RunSettings, load_run_config
from .dataset import (
    EXPORT_MODES,
    annotator_agreement,
    apply_human_labels,
    assemble_dataset,
    export_training_files,
    label_by_citation,
    read_annotations,
    read_corpus,
    read_generation_log,
)
from .evaluation import (
    GsbCounts,
    MetricReport,
    classification_report,
    gsb_delta,
    read_predictions,
    read_sessions,
    render_table,
    requery_change,
    requery_rate,
)
from .exceptions import (
    DataError,
    InputError,
    RelevanceGrpoError,
    TrainingDivergedError,
    ValidationError,
)
from .grpo import finite_diff_check
from .jsonl import read_jsonl, write_json, write_jsonl
from .policy import Backend, ScriptedBackend, ToyBackend, ToyInstance, ToyPolicyParams
from .rollout import (
    QueryDocPair,
    audit_rewards,
    collect_rollouts,
    read_pairs,
    read_trajectories,
)
from .trainer import (
    SyntheticTask,
    ToyEnvironment,
    default_intents,
    final_reward,
    first_crossing,
    gradient_check_problem,
    read_training_log,
    train,
    write_training_csv,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s [%(levelname)8s] %(message)s (%(filename)s:%(lineno)s)'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

GRADIENT_TOLERANCE = 1e-4

Command = Callable[[argparse.Namespace, RunSettings, Path], int]


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT)


def _load_params(path: str) -> ToyPolicyParams:
    try:
        with open(path, encoding='utf-8') as f:
            return ToyPolicyParams.from_dict(json.load(f))
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f'Cannot load toy parameters from {path}: {e}') from e


def _pairs(settings: RunSettings) -> List[QueryDocPair]:
    if settings.DATASET.PAIRS:
        return read_pairs(settings.DATASET.PAIRS)
    logger.info('dataset.pairs is not set, using the synthetic task')
    return list(SyntheticTask().pairs)


def _backend_factory(settings: RunSettings) -> Callable[[QueryDocPair], Backend]:
    backend = settings.BACKEND
    variant = settings.ABLATION.to_variant()

    if backend.KIND == 'http':
        shared: Backend = backend.http_backend()
        return lambda pair: shared
    if backend.KIND == 'scripted':
        scripted = ScriptedBackend.from_file(backend.SCRIPT)
        return lambda pair: scripted

    params = _load_params(backend.TOY_PARAMS) if backend.TOY_PARAMS else None

    def toy_backend(pair: QueryDocPair) -> Backend:
        intents = default_intents(pair.query)
        instance = ToyInstance.build(pair.query, pair.candidate, intents)
        toy_params = params if params is not None else ToyPolicyParams.zeros()
        return ToyBackend(
            toy_params, instance, variant.round1_grammar, variant.round2_grammar
        )

    return toy_backend


def cmd_build_dataset(args, settings: RunSettings, output: Path) -> int:
    dataset = settings.DATASET
    dataset.require_citation_config()

    entries = read_generation_log(dataset.GENERATION_LOG)
    corpus = read_corpus(dataset.CORPUS)
    partition = label_by_citation(
        entries,
        dataset.FORWARDS_REQUIRED,
        dataset.CITATION_THRESHOLD,
        dataset.MAX_AUX_DOCS,
    )
    positives, hard_negatives = partition.positives, partition.hard_negatives

    if dataset.ANNOTATIONS:
        report = annotator_agreement(
            read_annotations(dataset.ANNOTATIONS), dataset.AGREEMENT_GATE
        )
        write_json(output / 'agreement.json', report.to_dict())
        excluded = set() if report.gate_passed else set(report.disagreeing)
        positives = apply_human_labels(
            [p for p in positives if p.id not in excluded], report.gold
        )
        hard_negatives = apply_human_labels(
            [p for p in hard_negatives if p.id not in excluded], report.gold
        )
        print(f'raw agreement {report.raw_agreement:.4f}, kappa {report.kappa:.4f}')

    train_split, eval_split = assemble_dataset(
        positives,
        hard_negatives,
        corpus,
        dataset.RANDOM_NEGATIVE_COUNT,
        balance=dataset.BALANCE,
        train_size=dataset.TRAIN_SIZE,
        seed=dataset.SEED,
    )
    write_jsonl(output / 'train.jsonl', (p.to_dict() for p in train_split))
    write_jsonl(output / 'eval.jsonl', (p.to_dict() for p in eval_split))
    write_json(
        output / 'dataset_summary.json',
        {
            'rejected_entries': len(partition.rejected),
            'train': _class_counts(train_split),
            'eval': _class_counts(eval_split),
        },
    )
    print(
        f'{len(train_split)} train / {len(eval_split)} eval pairs written to {output}'
    )
    return EXIT_OK


def _class_counts(pairs: Sequence[QueryDocPair]) -> Dict[str, int]:
    counts = {str(label): 0 for label in (0, 1, 2)}
    for pair in pairs:
        counts[str(pair.gold)] += 1
    return counts


def cmd_export(args, settings: RunSettings, output: Path) -> int:
    records = list(read_jsonl(args.records))
    summary = export_training_files(
        records, args.mode, output / f'{args.mode}.jsonl', settings.prompts()
    )
    print(
        f'{summary.written} {summary.mode} records written, '
        f'{summary.skipped} skipped'
    )
    return EXIT_OK


def cmd_rollout(args, settings: RunSettings, output: Path) -> int:
    written = collect_rollouts(
        _pairs(settings),
        _backend_factory(settings),
        output / 'trajectories.jsonl',
        settings.GRPO.GROUP_SIZE,
        settings.SAMPLING.to_config(),
        variant=settings.ABLATION.to_variant(),
        reward_config=settings.REWARD.to_config(),
        prompts=settings.prompts(),
        max_workers=settings.BACKEND.MAX_IN_FLIGHT,
        resume=not args.restart,
    )
    print(f'{written} trajectories written to {output / "trajectories.jsonl"}')
    return EXIT_OK


def cmd_train_toy(args, settings: RunSettings, output: Path) -> int:
    grpo = settings.GRPO
    reference = None
    if grpo.REFERENCE_SNAPSHOT_POLICY == 'fixed-file':
        reference = _load_params(grpo.REFERENCE_PARAMS)

    result = train(
        _pairs(settings),
        grpo.to_config(),
        grpo.INIT,
        seed=settings.SEED,
        reward_config=settings.REWARD.to_config(),
        variant=settings.ABLATION.to_variant(),
        reference=reference,
        teacher_accuracy=grpo.TEACHER_ACCURACY,
        demos_per_pair=grpo.DEMOS_PER_PAIR,
        log_every=grpo.LOG_EVERY,
    )
    write_jsonl(output / 'training_log.jsonl', (e.to_dict() for e in result.log))
    write_training_csv(output / 'training_log.csv', result.log)
    write_json(output / 'params.json', result.params.to_dict())
    write_json(output / 'reference.json', result.reference.to_dict())

    if result.log:
        window = settings.EVAL.SMOOTHING_WINDOW
        print(f'final smoothed reward {final_reward(result.rewards, window):.4f}')
    return EXIT_OK


def cmd_check_gradients(args, settings: RunSettings, output: Path) -> int:
    rng = np.random.default_rng(settings.SEED)
    env = ToyEnvironment.from_task(SyntheticTask())
    variant = settings.ABLATION.to_variant()
    base = settings.GRPO.to_config()

    worst = 0.0
    for beta in args.beta or (0.0, 1.0):
        config = replace(base, beta=beta)
        for _ in range(args.instances):
            params, ref, groups = gradient_check_problem(
                env, rng, config, group_size=args.group_size, variant=variant
            )
            error = finite_diff_check(params, groups, config, h=args.h, ref=ref)
            worst = max(worst, error)
        logger.info('beta=%g: max relative error so far %.3e', beta, worst)

    print(f'max relative error {worst:.3e}')
    if worst > args.tolerance:
        print(f'gradient check failed: tolerance {args.tolerance:.1e}', file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_reward_audit(args, settings: RunSettings, output: Path) -> int:
    path = args.trajectories or output / 'trajectories.jsonl'
    audit = audit_rewards(read_trajectories(path), settings.REWARD.to_config())
    write_jsonl(output / 'reward_audit.jsonl', audit.rows)

    for row in audit.mismatches:
        print(
            f'mismatch {row["pair_id"]}/{row["seed"]}: '
            f'stored {row["stored"]}, recomputed {row["recomputed"]}'
        )
    print(
        f'{len(audit.rows)} trajectories audited, {len(audit.mismatches)} mismatches, '
        f'{audit.inconsistent_extracts} positive scores without extract'
    )
    return EXIT_FAILED if audit.mismatches else EXIT_OK


def cmd_evaluate(args, settings: RunSettings, output: Path) -> int:
    if not (args.preds or args.gsb or args.requery or args.sessions):
        raise InputError('evaluate needs --preds, --gsb, --requery or --sessions')

    metrics: Dict[str, object] = {}
    reports: Dict[str, MetricReport] = {}
    for path in args.preds or ():
        report = classification_report(read_predictions(path))
        reports[Path(path).stem] = report
        metrics[Path(path).stem] = report.to_dict()
        for flag in report.flags:
            print(f'{Path(path).stem}: {flag}')
    if reports:
        print(render_table(reports))

    if args.gsb:
        delta = gsb_delta(GsbCounts(*args.gsb))
        metrics['gsb_delta'] = delta
        print(f'GSB delta {delta:+.1f}%')

    if args.sessions:
        rate = requery_rate(read_sessions(args.sessions), settings.EVAL.REQUERY_WINDOW)
        metrics['requery_rate'] = rate
        print(f're-query rate {100 * rate:.2f}%')

    if args.requery:
        change = requery_change(*args.requery)
        metrics['requery_change'] = {
            'before': change.before,
            'after': change.after,
            'absolute_points': change.absolute_points,
            'relative_percent': change.relative_percent if change.before else None,
        }
        relative = ''
        if change.before:
            relative = f', {change.relative_percent:+.2f}% relative'
        print(f're-query rate change {change.absolute_points:+.2f} pp{relative}')

    write_json(output / 'metrics.json', metrics)
    return EXIT_OK


def cmd_report(args, settings: RunSettings, output: Path) -> int:
    path = args.log or output / 'training_log.jsonl'
    log = read_training_log(read_jsonl(path))
    if not log:
        raise InputError(f'{path} holds no training steps')

    window = settings.EVAL.SMOOTHING_WINDOW
    threshold = settings.EVAL.CROSSING_THRESHOLD
    rewards = [entry.mean_reward for entry in log]
    summary = {
        'steps': len(log),
        'threshold': threshold,
        'first_crossing': first_crossing(rewards, threshold, window),
        'final_smoothed_reward': final_reward(rewards, window),
        'final_format_rate': log[-1].format_rate,
    }
    write_training_csv(output / 'training_report.csv', log)
    write_json(output / 'training_summary.json', summary)

    crossing = summary['first_crossing']
    print(
        f'first step with smoothed reward >= {threshold}: '
        f'{crossing if crossing is not None else "never"}'
    )
    print(f'final smoothed reward {summary["final_smoothed_reward"]:.4f}')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='relevance-grpo',
        description=(
            'Query-document relevance judging with two-round reasoning and GRPO.'
        ),
    )
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('--config', help='YAML or JSON configuration file')
    parser.add_argument(
        '--preset',
        default=DEFAULT_PRESET,
        choices=sorted(PRESETS),
        help='named base configuration (default: %(default)s)',
    )
    parser.add_argument(
        '--set',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='override one setting, e.g. --set grpo.epsilon=0.1 (repeatable)',
    )
    parser.add_argument('--output', help='output directory, same as --set output=DIR')
    parser.add_argument(
        '--log-level',
        default='WARNING',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        type=str.upper,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    build = sub.add_parser(
        'build-dataset', help='label pairs by citation and split them'
    )
    build.set_defaults(func=cmd_build_dataset)

    export = sub.add_parser(
        'export', help='write cold-start, RL or distillation records'
    )
    export.add_argument('--mode', required=True, choices=EXPORT_MODES)
    export.add_argument('--records', required=True, help='input records JSONL')
    export.set_defaults(func=cmd_export)

    rollout = sub.add_parser(
        'rollout', help='sample trajectory groups for labeled pairs'
    )
    rollout.add_argument(
        '--restart',
        action='store_true',
        help='ignore groups already in the output file',
    )
    rollout.set_defaults(func=cmd_rollout)

    train_toy = sub.add_parser('train-toy', help='GRPO-train the toy policy')
    train_toy.add_argument('--seed', type=int)
    train_toy.set_defaults(func=cmd_train_toy)

    check = sub.add_parser(
        'check-gradients', help='compare GRPO gradients to finite differences'
    )
    check.add_argument('--seed', type=int)
    check.add_argument('--instances', type=int, default=32)
    check.add_argument('--group-size', type=int, default=4)
    check.add_argument('--beta', type=float, action='append')
    check.add_argument('--h', type=float, default=1e-5)
    check.add_argument('--tolerance', type=float, default=GRADIENT_TOLERANCE)
    check.set_defaults(func=cmd_check_gradients)

    audit = sub.add_parser('reward-audit', help='recompute stored trajectory rewards')
    audit.add_argument('--trajectories', help='default: <output>/trajectories.jsonl')
    audit.set_defaults(func=cmd_reward_audit)

    evaluate = sub.add_parser('evaluate', help='classification and online metrics')
    evaluate.add_argument(
        '--preds', action='append', help='predictions JSONL (repeatable)'
    )
    evaluate.add_argument('--gsb', type=int, nargs=3, metavar=('GOOD', 'SAME', 'BAD'))
    evaluate.add_argument('--requery', type=float, nargs=2, metavar=('BEFORE', 'AFTER'))
    evaluate.add_argument('--sessions', help='session log JSONL for the re-query rate')
    evaluate.set_defaults(func=cmd_evaluate)

    report = sub.add_parser(
        'report', help='plot-ready series and summary of a training log'
    )
    report.add_argument('--log', help='default: <output>/training_log.jsonl')
    report.set_defaults(func=cmd_report)

    return parser


def _print_config_error(error: ValidationError) -> None:
    for line in error.field_messages():
        print(f'configuration error: {line}', file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    overrides = list(args.set)
    if args.output:
        overrides.append(f'output={args.output}')
    if getattr(args, 'seed', None) is not None:
        overrides.append(f'seed={args.seed}')

    try:
        settings = load_run_config(args.preset, args.config, overrides)
    except ValidationError as e:
        _print_config_error(e)
        return EXIT_CONFIG
    except RelevanceGrpoError as e:
        print(f'configuration error: {e}', file=sys.stderr)
        return EXIT_CONFIG

    output = Path(settings.OUTPUT)
    output.mkdir(parents=True, exist_ok=True)
    write_json(
        output / 'run_config.json',
        {
            'command': args.command,
            'preset': args.preset,
            'settings': settings.as_dict(),
        },
    )
    logger.info('Running %s, artifacts in %s', args.command, output)

    command: Command = args.func
    try:
        return command(args, settings, output)
    except ValidationError as e:
        _print_config_error(e)
        return EXIT_CONFIG
    except TrainingDivergedError as e:
        logger.error('Training diverged: %s', e)
        write_json(output / 'diagnostics.json', e.diagnostics)
        return EXIT_DIVERGED
    except RelevanceGrpoError as e:
        logger.error('%s failed: %s', args.command, e)
        print(f'error: {e}', file=sys.stderr)
        return EXIT_FAILED
