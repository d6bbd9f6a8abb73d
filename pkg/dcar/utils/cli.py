"""
Command-line driver: python run.py <verb> [options]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from dcar.config import JOBS, LOG_LEVEL, METHODS, ExperimentConfig, load_config
from dcar.models.dataset import SyntheticSpec
from dcar.models.errors import ConfigError, DataError, DcarError, NumericalError
from dcar.services.pipeline_service import PipelineService
from dcar.services.synth_service import write_dataset
from dcar.utils.formats import (
    read_embedding,
    read_manifest,
    read_model,
    write_affinity,
    write_model,
    write_predictions,
    write_table,
    write_trace,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _events(raw: Optional[str]) -> Optional[List[str]]:
    if not raw:
        return None
    return [e.strip() for e in raw.split(',') if e.strip()]


def _k_values(raw: str) -> List[int]:
    """'1:10' (inclusive) or '1,3,5'."""
    try:
        if ':' in raw:
            start, stop = raw.split(':', 1)
            return list(range(int(start), int(stop) + 1))
        return [int(k) for k in raw.split(',') if k.strip()]
    except ValueError:
        raise ConfigError(f"Invalid k range {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--config', help='Experiment config file (KEY=value lines)')
    common.add_argument('--jobs', type=int, default=JOBS, help='Worker processes for per-track stages')
    common.add_argument('--force', action='store_true', help='Recompute cached artifacts')
    common.add_argument('--events', help='Comma-separated subset of events to use')
    common.add_argument('--features-dir', help='Directory of cached frames-v1 files')
    common.add_argument('--log-level', default=LOG_LEVEL, help='Logging level (default: %(default)s)')
    common.add_argument('--quiet', action='store_true', help='Hide progress bars')
    for seed in ('gmm', 'init', 'synth', 'cv'):
        common.add_argument(f'--seed-{seed}', type=int, help=f'Override SEED_{seed.upper()}')

    parser = _Parser(prog='dcar', description='Discriminative audio representations from per-track GMMs')
    verbs = parser.add_subparsers(dest='verb', required=True)

    p = verbs.add_parser('extract', parents=[common], help='Extract MFCC+delta features from WAV files')
    p.add_argument('manifest')

    p = verbs.add_parser('fit', parents=[common], help='Fit per-track GMMs and write a gmm-v1 file')
    p.add_argument('manifest')
    p.add_argument('--out', required=True)
    p.add_argument('--split', choices=('train', 'test', 'all'), default='all')

    p = verbs.add_parser('train', parents=[common], help='Train a model on the training split')
    p.add_argument('manifest')
    p.add_argument('--model', required=True, help='Output model-v1 file')
    p.add_argument('--method', choices=METHODS)
    p.add_argument('--trace', help='Optimizer trace CSV (default: <model>.trace.csv)')
    p.add_argument('--affinity-dump', help='Write the dense affinity matrix here')

    p = verbs.add_parser('predict', parents=[common], help='Classify tracks with a trained model')
    p.add_argument('model')
    p.add_argument('manifest')
    p.add_argument('--out', required=True, help='Output pred-v1 file')
    p.add_argument('--split', choices=('train', 'test', 'all'), default='test')

    p = verbs.add_parser('eval', parents=[common], help='Metrics and McNemar tests for prediction files')
    p.add_argument('predictions', nargs='+')
    p.add_argument('--out', help='Metric table CSV')
    p.add_argument('--compare-out', help='Pairwise McNemar CSV')
    p.add_argument('--agreement-out', help='Per-event CSV of how many files classify each track correctly')

    p = verbs.add_parser('synth', parents=[common], help='Generate a planted-subspace synthetic dataset')
    p.add_argument('out_dir')
    p.add_argument('--n-events', type=int, default=3)
    p.add_argument('--train-tracks', type=int, default=30)
    p.add_argument('--test-tracks', type=int, default=10)
    p.add_argument('--frames', type=int, default=200)
    p.add_argument('--dim', type=int, default=12)
    p.add_argument('--planted-dim', type=int, default=4)
    p.add_argument('--clusters', type=int, default=2)
    p.add_argument('--separation', type=float, default=5.0)
    p.add_argument('--noise', type=float, default=1.0)

    p = verbs.add_parser('metric-compare', parents=[common], help='PC(k) of LEM, AIRM and Stein')
    p.add_argument('gmms', nargs='+', help='gmm-v1 files')
    p.add_argument('--k', default='1:10', help="k range, '1:10' or '1,3,5'")
    p.add_argument('--out', help='Output CSV')

    p = verbs.add_parser('tune', parents=[common], help='Cross-validated parameter search')
    p.add_argument('manifest')
    p.add_argument('--method', choices=METHODS)
    p.add_argument('--out', help='Fold score CSV')

    p = verbs.add_parser('pairwise', parents=[common], help='One-vs-one experiments with win-tie-loss')
    p.add_argument('manifest')
    p.add_argument('--methods', default='dcar,gmm', help='Two comma-separated methods, A then B')
    p.add_argument('--out', help='Per-pair CSV')

    p = verbs.add_parser('angles', parents=[common], help='Principal angles between a model embedding and a subspace')
    p.add_argument('model')
    p.add_argument('reference', help='emb-v1 file, e.g. subspace.emb of a synthetic dataset')
    p.add_argument('--out', help='Output CSV')
    return parser


def configure_logging(level: str) -> None:
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level {level!r}")
    logging.basicConfig(level=numeric, format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)


def experiment_config(args) -> ExperimentConfig:
    """Defaults < environment < config file < command-line flags."""
    config = load_config(args.config)
    return config.with_overrides(
        method=getattr(args, 'method', None),
        features_dir=args.features_dir,
        seed_gmm=args.seed_gmm,
        seed_init=args.seed_init,
        seed_synth=args.seed_synth,
        seed_cv=args.seed_cv,
    )


def _manifest(args):
    return read_manifest(args.manifest).restrict(_events(args.events))


def _emit(frame, path: Optional[str]) -> None:
    if path:
        write_table(path, frame)
    print(frame.to_string(index=False))


def cmd_extract(args, service: PipelineService) -> int:
    summary = service.extract(_manifest(args))
    print(summary)
    for track_id, message in summary.failed:
        print(f"  {track_id}: {message}", file=sys.stderr)
    return EXIT_DATA if summary.failed else EXIT_OK


def cmd_fit(args, service: PipelineService) -> int:
    manifest = _manifest(args)
    if args.split != 'all':
        manifest = manifest.split(args.split)
    models = service.fit(manifest, args.out)
    print(f"Wrote {len(models)} mixtures to {args.out}")
    return EXIT_OK


def cmd_train(args, service: PipelineService) -> int:
    result = service.train(_manifest(args))
    write_model(args.model, result.model, service.config.to_mapping())
    if result.trace is not None:
        write_trace(args.trace or f"{args.model}.trace.csv", result.trace)
    if args.affinity_dump and result.graph is not None:
        write_affinity(args.affinity_dump, result.graph)
    print(f"Wrote {result.model.method} model to {args.model}")
    return EXIT_OK


def cmd_predict(args, service: PipelineService) -> int:
    model, _ = read_model(args.model)
    rows = service.predict(model, _manifest(args), None if args.split == 'all' else args.split)
    write_predictions(args.out, model.events, rows)
    print(f"Wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args, service: PipelineService) -> int:
    table, comparisons = service.evaluate_files(args.predictions)
    _emit(table, args.out)
    if len(comparisons):
        _emit(comparisons, args.compare_out)
        _emit(service.agreement_files(args.predictions), args.agreement_out)
    return EXIT_OK


def cmd_synth(args, service: PipelineService) -> int:
    spec = SyntheticSpec(
        n_events=args.n_events,
        train_tracks=args.train_tracks,
        test_tracks=args.test_tracks,
        frames=args.frames,
        dim=args.dim,
        planted_dim=args.planted_dim,
        clusters=args.clusters,
        separation=args.separation,
        noise=args.noise,
        seed=service.config.seed_synth,
    )
    manifest = write_dataset(spec, args.out_dir)
    print(f"Wrote {len(manifest)} tracks to {os.path.join(args.out_dir, 'manifest.csv')}")
    return EXIT_OK


def cmd_metric_compare(args, service: PipelineService) -> int:
    _emit(service.metric_compare(args.gmms, _k_values(args.k)), args.out)
    return EXIT_OK


def cmd_tune(args, service: PipelineService) -> int:
    best, scores = service.tune(_manifest(args))
    if args.out:
        write_table(args.out, scores)
    print("Best parameters: " + ', '.join(f"{k}={v:g}" for k, v in sorted(best.items())))
    return EXIT_OK


def cmd_pairwise(args, service: PipelineService) -> int:
    methods = tuple(_events(args.methods) or ())
    if len(methods) != 2 or any(m not in METHODS for m in methods):
        raise ConfigError(f"--methods needs two of {', '.join(METHODS)}")
    pairs, summary = service.binary_experiments(_manifest(args), methods)
    _emit(pairs, args.out)
    print(summary.to_string(index=False))
    return EXIT_OK


def cmd_angles(args, service: PipelineService) -> int:
    model, _ = read_model(args.model)
    _emit(service.subspace_report(model, read_embedding(args.reference)), args.out)
    return EXIT_OK


COMMANDS = {
    'extract': cmd_extract,
    'fit': cmd_fit,
    'train': cmd_train,
    'predict': cmd_predict,
    'eval': cmd_eval,
    'synth': cmd_synth,
    'metric-compare': cmd_metric_compare,
    'tune': cmd_tune,
    'pairwise': cmd_pairwise,
    'angles': cmd_angles,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        config = experiment_config(args)
        progress = False if args.quiet else None
        service = PipelineService(config, jobs=args.jobs, force=args.force, progress=progress)
        return COMMANDS[args.verb](args, service)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        where = f" (iteration {e.iteration})" if e.iteration is not None else ''
        print(f"numerical error{where}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DcarError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
