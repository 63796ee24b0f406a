"""Command-line entry point: ais-relabel <command> [options]."""
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import argparse
import json
import logging
import sys
from pathlib import Path

from src.association.features import FeatureSchema
from src.baselines.atd import AtdConfig, AtdTracker
from src.baselines.cbtr import CbtrConfig, cbtr_distances, cbtr_link
from src.baselines.kalman import KalmanConfig, kf_nn_track, tune_gate
from src.config.run_config import RunConfig, seed_flags
from src.errors import ConfigurationError, EmptyDatasetError, RelabelError
from src.evaluation.accuracy_curve import ceiling_by_k, format_curve, simulate_posit_curve
from src.evaluation.model_evaluator import ModelEvaluator
from src.evaluation.posit_metrics import posit_accuracy
from src.evaluation.stratification import RegionModel, stratify
from src.geo.kinematics import Posit, RawRecord, posits_from_records
from src.ingestion.data_loader import parse_files, read_predictions, truth_labels, write_csv
from src.ingestion.data_validator import DataValidator
from src.ingestion.preprocessing import PreprocessConfig, preprocess
from src.ingestion.synthetic import SynthConfig, generate_synthetic
from src.model.classifier import MlpModel
from src.model.data_preparation import DataPreparationPipeline, split_days
from src.model.model_registry import ModelRegistry, load_model, save_model
from src.model.training_workflow import TrainConfig, TrainingWorkflow
from src.monitoring.logging_config import configure_logging
from src.monitoring.metrics import RelabelMetrics
from src.tracking.deciders import make_decider
from src.tracking.tracker import LabeledStream, RelabelTracker, oracle_ceiling
from src.visualization.geojson_emitter import emit_geojson, write_geojson

logger = logging.getLogger(__name__)

BASELINES = ('cbtr', 'atd', 'kf-cv', 'kf-ctrv')


def require_paths(*paths: Optional[Path]):
    for path in paths:
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"Input {path} does not exist")


def load_records(paths: Sequence[Path], labeled: bool) -> List[RawRecord]:
    require_paths(*paths)
    parsed = parse_files(paths)
    if parsed.errors:
        logger.warning(f"Skipped {parsed.skipped} malformed rows")
    problems = DataValidator().validate_data(parsed.records, 'labeled' if labeled else 'inference')
    if problems:
        raise RelabelError(f"{len(problems)} problems in input, first: {problems[0]}")
    return parsed.records


def labeled_stream(paths: Sequence[Path]) -> Tuple[List[RawRecord], List[Posit], Dict[int, int]]:
    records = load_records(paths, labeled=True)
    posits = posits_from_records(records)
    kept = {p.source_id for p in posits}
    truth = {pid: tid for pid, tid in truth_labels(records).items() if pid in kept}
    return records, posits, truth


def split_train_test(posits: Sequence[Posit], train_fraction: float) -> Tuple[List[int], List[int]]:
    days = list(split_days(posits))
    if len(days) < 2:
        logger.warning("Only one day of data: training and test days coincide")
        return days, days
    n_train = min(len(days) - 1, max(1, int(round(train_fraction * len(days)))))
    return days[:n_train], days[n_train:]


def posits_on(posits: Sequence[Posit], days: Sequence[int]) -> List[Posit]:
    chosen = set(days)
    return [p for p in posits if int(p.t // 86400) in chosen]


def run_baseline(method: str, posits: Sequence[Posit], cfg: RunConfig, export: Optional[Path] = None) -> LabeledStream:
    section = cfg.section('baselines')
    if method == 'cbtr':
        cbtr_cfg = CbtrConfig.from_config({**section['cbtr'], 'workers': cfg.section('runtime')['workers']})
        matrix = cbtr_distances(posits, cbtr_cfg)
        if export is not None:
            matrix.export_triplets(export)
        return cbtr_link(matrix, posits, cbtr_cfg)
    if method == 'atd':
        return AtdTracker(AtdConfig.from_config(section['atd'])).run(posits)
    if method in ('kf-cv', 'kf-ctrv'):
        return kf_nn_track(posits, method.split('-')[1], KalmanConfig.from_config(section['kalman']))
    raise ConfigurationError(f"Unknown baseline method: {method}")


def resolve_model(args: argparse.Namespace, cfg: RunConfig, k: int) -> Tuple[MlpModel, FeatureSchema]:
    """Load the model named by --model-dir, or by --model-name/--model-version from the registry."""
    if args.model_dir is not None:
        require_paths(args.model_dir)
        model, schema = load_model(args.model_dir)
    else:
        section = cfg.section('model')
        # without --model-version the newest registered version wins
        model, schema = ModelRegistry(section).load(args.model_name or section['name'], args.model_version)
    if schema.k != k:
        raise ConfigurationError(f"Model was trained with k={schema.k}, config has k={k}")
    return model, schema


def write_labeled(records: Sequence[RawRecord], stream: LabeledStream, path: Path):
    labels = stream.labels()
    kept = [r for r in records if r.point_id in labels]
    if len(kept) < len(records):
        logger.warning(f"{len(records) - len(kept)} records could not be projected and are not written")
    write_csv(kept, path, predicted=labels)


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    records = generate_synthetic(SynthConfig.from_config(cfg.section('synthetic')))
    if args.preprocess:
        records = preprocess(records, PreprocessConfig.from_config(cfg.section('preprocess')), cfg.section('runtime')['seed'])
    write_csv(records, args.output)
    return {'records': len(records), 'vessels': len({r.track_id for r in records}), 'output': str(args.output)}


def cmd_preprocess(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    records = load_records(args.input, labeled=True)
    output = preprocess(records, PreprocessConfig.from_config(cfg.section('preprocess')), cfg.section('runtime')['seed'])
    write_csv(output, args.output)
    return {'records_in': len(records), 'records_out': len(output), 'output': str(args.output)}


def train_model(posits: Sequence[Posit], truth: Mapping[int, int], train_days: Sequence[int], cfg: RunConfig):
    pipeline = DataPreparationPipeline(cfg.config)
    train_posits = posits_on(posits, train_days)
    examples, schema = pipeline.build_training_examples(
        train_posits, {p.source_id: truth[p.source_id] for p in train_posits}
    )
    workflow = TrainingWorkflow(TrainConfig.from_config(cfg.section('training')))
    model = workflow.train(examples, schema)
    return model, schema, workflow, len(examples)


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    _, posits, truth = labeled_stream(args.input)
    if not posits:
        raise EmptyDatasetError("No posits to train on")
    train_days, test_days = split_train_test(posits, cfg.section('training')['train_fraction'])
    model, schema, workflow, n_examples = train_model(posits, truth, train_days, cfg)

    pipeline = DataPreparationPipeline(cfg.config)
    test_posits = posits_on(posits, test_days)
    rows = pipeline.collect(test_posits, {p.source_id: truth[p.source_id] for p in test_posits})
    report = ModelEvaluator(cfg.section('evaluation')).evaluate(model, pipeline.assemble(rows, schema), schema)
    for line in report.format_table().splitlines():
        logger.info(line)

    metadata = {
        'train_days': [int(d) for d in train_days],
        'test_days': [int(d) for d in test_days],
        'temperature': workflow.history.temperature,
    }
    if args.model_dir is not None:
        path = save_model(model, schema, args.model_dir, metadata)
    else:
        section = cfg.section('model')
        path = ModelRegistry(section).register_model(
            model, schema,
            args.model_name or section['name'],
            args.model_version or section['version'],
            metadata,
        )
    return {
        'model_dir': str(path),
        'examples': n_examples,
        'test_accuracy': report.accuracy,
        'temperature': workflow.history.temperature,
    }


def cmd_relabel(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    records = load_records(args.input, labeled=False)
    posits = posits_from_records(records)
    metrics = RelabelMetrics()
    tracker = RelabelTracker.from_config(cfg.config, metrics)
    model = schema = None
    if args.decider == 'classifier':
        model, schema = resolve_model(args, cfg, tracker.screening.k)
    decider = make_decider(args.decider, tracker.screening.k, model, schema)
    stream = tracker.run(posits, decider)
    write_labeled(records, stream, args.output)
    if args.audit:
        stream.write_audit(args.audit)
    logger.info(f"Throughput {metrics.throughput():.0f} posits/minute")
    return {'posits': len(stream), 'tracks': stream.n_tracks, 'decider': args.decider, 'output': str(args.output)}


def cmd_baseline(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    records = load_records(args.input, labeled=False)
    posits = posits_from_records(records)
    stream = run_baseline(args.method, posits, cfg, args.export_distances)
    write_labeled(records, stream, args.output)
    return {'method': args.method, 'posits': len(stream), 'tracks': stream.n_tracks, 'output': str(args.output)}


def cmd_score(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    require_paths(args.pred, args.truth)
    truth_records = load_records([args.truth], labeled=True)
    truth = truth_labels(truth_records)
    predicted = read_predictions(args.pred)
    score = posit_accuracy(predicted, truth, include_endpoints=not args.no_endpoints)
    summary: Dict[str, Any] = {'posit_accuracy': score.accuracy, 'earned': score.earned, 'available': score.available}
    if args.stratify:
        posits = posits_from_records(truth_records)
        strata = stratify(predicted, truth, posits, RegionModel.from_config(cfg.section('evaluation')))
        for line in strata.format_table().splitlines():
            logger.info(line)
        summary['strata'] = strata.accuracy
    return summary


def cmd_map(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    require_paths(args.input, args.truth)
    records = load_records([args.input], labeled=False)
    predicted = read_predictions(args.input)
    stream = LabeledStream()
    for row in predicted.sort_values(['t', 'point_id'], kind='mergesort').itertuples():
        stream.append(int(row.point_id), float(row.t), int(row.predicted_track_id))
    score = None
    if args.truth is not None:
        score = posit_accuracy(predicted, truth_labels(load_records([args.truth], labeled=True)))
    document = emit_geojson(stream, records, score)
    write_geojson(document, args.output)
    return {'features': len(document['features']), 'mode': 'identity' if score is None else 'score', 'output': str(args.output)}


def cmd_simulate_curve(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    _, posits, truth = labeled_stream(args.input)
    evaluation = cfg.section('evaluation')
    curve = simulate_posit_curve(
        posits, truth, RelabelTracker.from_config(cfg.config),
        evaluation['curve_accuracies'], evaluation['curve_seeds'],
    )
    for line in format_curve(curve).splitlines():
        logger.info(line)
    return {'curve': {f"{pt.p:.2f}": pt.mean for pt in curve}}


def cmd_ceiling(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    _, posits, truth = labeled_stream(args.input)
    tracker = RelabelTracker.from_config(cfg.config)
    if args.sweep:
        reports = ceiling_by_k(posits, truth, tracker, cfg.section('evaluation')['ceiling_ks'])
        return {'ceiling': {str(k): {'accuracy': r.accuracy, 'recall': r.recall} for k, r in reports.items()}}
    report = oracle_ceiling(posits, truth, tracker, args.k)
    return {'k': args.k or tracker.screening.k, 'ceiling': report.accuracy, 'recall': report.recall}


def cmd_benchmark(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, Any]:
    if args.input:
        _, posits, truth = labeled_stream(args.input)
    else:
        records = generate_synthetic(SynthConfig.from_config(cfg.section('synthetic')))
        records = preprocess(records, PreprocessConfig.from_config(cfg.section('preprocess')), cfg.section('runtime')['seed'])
        posits = posits_from_records(records)
        kept = {p.source_id for p in posits}
        truth = {r.point_id: r.track_id for r in records if r.point_id in kept}

    train_days, test_days = split_train_test(posits, cfg.section('training')['train_fraction'])
    test_posits = posits_on(posits, test_days)
    test_truth = {p.source_id: truth[p.source_id] for p in test_posits}
    tracker = RelabelTracker.from_config(cfg.config)
    results: Dict[str, float] = {}

    for method in BASELINES:
        if method.startswith('kf'):
            kalman = cfg.section('baselines', 'kalman')
            validation = posits_on(posits, train_days[-1:])
            best, _ = tune_gate(
                validation, {p.source_id: truth[p.source_id] for p in validation},
                kalman['tune_gates'], method.split('-')[1], KalmanConfig.from_config(kalman),
            )
            stream = kf_nn_track(test_posits, method.split('-')[1], KalmanConfig.from_config({**kalman, 'gate': best}))
        else:
            stream = run_baseline(method, test_posits, cfg)
        results[method] = posit_accuracy(stream, test_truth).accuracy

    results['greedy'] = posit_accuracy(tracker.run(test_posits, make_decider('greedy', tracker.screening.k)), test_truth).accuracy
    if any(v is not None for v in (args.model_dir, args.model_name, args.model_version)):
        model, schema = resolve_model(args, cfg, tracker.screening.k)
    else:
        model, schema, _, _ = train_model(posits, truth, train_days, cfg)
    hybrid = tracker.run(test_posits, make_decider('classifier', schema.k, model, schema))
    results['hybrid'] = posit_accuracy(hybrid, test_truth).accuracy
    results['oracle'] = oracle_ceiling(test_posits, test_truth, tracker).accuracy

    strata = stratify(hybrid, test_truth, test_posits, RegionModel.from_config(cfg.section('evaluation')))
    table = format_benchmark(results) + '\n\n' + strata.format_table()
    for line in table.splitlines():
        logger.info(line)
    if args.report:
        Path(args.report).write_text(table + '\n')
    return {'posit_accuracy': results, 'strata': strata.accuracy, 'test_posits': len(test_posits)}


METHOD_NAMES = {
    'cbtr': 'CBTR',
    'atd': 'ATD baseline',
    'kf-cv': 'KF(CV)+NN',
    'kf-ctrv': 'KF(CTRV)+NN',
    'greedy': 'Greedy min-score',
    'hybrid': 'Hybrid classifier',
    'oracle': 'Oracle ceiling',
}


def format_benchmark(results: Mapping[str, float]) -> str:
    lines = [f"{'Method':<20}{'Posit accuracy':>16}"]
    lines += [f"{METHOD_NAMES[m]:<20}{results[m]:>16.4f}" for m in METHOD_NAMES if m in results]
    return '\n'.join(lines)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], Dict[str, Any]]] = {
    'synth': cmd_synth,
    'preprocess': cmd_preprocess,
    'train': cmd_train,
    'relabel': cmd_relabel,
    'baseline': cmd_baseline,
    'score': cmd_score,
    'map': cmd_map,
    'simulate-curve': cmd_simulate_curve,
    'ceiling': cmd_ceiling,
    'benchmark': cmd_benchmark,
}


def add_registry_flags(p: argparse.ArgumentParser):
    p.add_argument('--model-name', help='registered model name, defaults to model.name')
    p.add_argument('--model-version', help='registered model version')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='YAML run configuration')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override one configuration value (repeatable)')
    common.add_argument('--seed', type=int, help='seed for every randomized stage')
    common.add_argument('--workers', type=int, help='worker threads/processes')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--log-format', choices=['text', 'json'])

    parser = argparse.ArgumentParser(prog='ais-relabel', description='Relabel anonymized AIS posits into vessel tracks.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', parents=[common], help='generate a labeled synthetic stream')
    p.add_argument('--output', type=Path, required=True, help='CSV to write')
    p.add_argument('--preprocess', action='store_true', help='downsample and corrupt the generated reports')

    p = sub.add_parser('preprocess', parents=[common], help='downsample, add noise and drop stopped reports')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='labeled CSV files, one per day')
    p.add_argument('--output', type=Path, required=True, help='CSV to write')

    p = sub.add_parser('train', parents=[common], help='train the link classifier')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='labeled CSV files, one per day')
    p.add_argument('--model-dir', type=Path, help='model directory to write instead of registering')
    add_registry_flags(p)

    p = sub.add_parser('relabel', parents=[common], help='assign track ids to unlabeled posits')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='CSV files, one per day')
    p.add_argument('--output', type=Path, required=True, help='CSV with predicted_track_id')
    p.add_argument('--model-dir', type=Path, help='trained model directory (classifier decider)')
    add_registry_flags(p)
    p.add_argument('--decider', choices=['classifier', 'greedy'], default='classifier', help='decision rule')
    p.add_argument('--audit', type=Path, help='line-delimited JSON with one decision per posit')

    p = sub.add_parser('baseline', parents=[common], help='relabel with a baseline linker')
    p.add_argument('--method', choices=BASELINES, required=True, help='baseline to run')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='CSV files, one per day')
    p.add_argument('--output', type=Path, required=True, help='CSV with predicted_track_id')
    p.add_argument('--export-distances', type=Path, help='CBTR only: write i j d triplets')

    p = sub.add_parser('score', parents=[common], help='posit accuracy of a relabeled file')
    p.add_argument('--pred', type=Path, required=True, help='CSV with predicted_track_id')
    p.add_argument('--truth', type=Path, required=True, help='labeled CSV over the same posits')
    p.add_argument('--no-endpoints', action='store_true', help='drop the none-matches-none points')
    p.add_argument('--stratify', action='store_true', help='also report open/coastal/port accuracy')

    p = sub.add_parser('map', parents=[common], help='GeoJSON map of a relabeled file')
    p.add_argument('--input', type=Path, required=True, help='CSV with predicted_track_id')
    p.add_argument('--output', type=Path, required=True, help='GeoJSON file to write')
    p.add_argument('--truth', type=Path, help='color posits by earned points instead of identity')

    p = sub.add_parser('simulate-curve', parents=[common], help='posit accuracy against simulated classifier accuracy')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='labeled CSV files, one per day')

    p = sub.add_parser('ceiling', parents=[common], help='oracle ceiling and screen recall')
    p.add_argument('--input', type=Path, nargs='+', required=True, help='labeled CSV files, one per day')
    p.add_argument('--k', type=int, help='screen size, defaults to screening.k')
    p.add_argument('--sweep', action='store_true', help='ceiling for every evaluation.ceiling_ks')

    p = sub.add_parser('benchmark', parents=[common], help='compare every method on held-out days')
    p.add_argument('--input', type=Path, nargs='+', help='labeled CSV files; synthetic traffic when omitted')
    p.add_argument('--report', type=Path, help='text file for the results tables')
    p.add_argument('--model-dir', type=Path, help='evaluate this model instead of training one')
    add_registry_flags(p)
    return parser


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = seed_flags(args.seed)
    runtime = flags.setdefault('runtime', {})
    for name in ('workers', 'log_level', 'log_format'):
        value = getattr(args, name)
        if value is not None:
            runtime[name] = value
    return flags


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or 'INFO', args.log_format or 'text')
    try:
        cfg = RunConfig(args.config, args.overrides, flag_overrides(args))
        runtime = cfg.section('runtime')
        configure_logging(runtime['log_level'], runtime['log_format'])
        summary = COMMANDS[args.command](args, cfg)
    except (RelabelError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    print(json.dumps({'command': args.command, **summary}, sort_keys=True))
    return 0


if __name__ == '__main__':
    sys.exit(main())
