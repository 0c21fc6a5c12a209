"""Command-line entry point.

Every command writes into ``--output-dir`` a ``manifest.json`` holding the
arguments it ran with, so rerunning them single-threaded reproduces the
outputs bit for bit. Failures leave an ``error.json`` document instead and
exit with 2 for a rejected configuration, 1 for anything else.
"""
import argparse
import logging
import os
import sys

import numpy as np

from subseasonal_forecast import configuration
from subseasonal_forecast import checkpoint
from subseasonal_forecast import convnet
from subseasonal_forecast import dataio
from subseasonal_forecast import exceptions
from subseasonal_forecast import experiments
from subseasonal_forecast import features
from subseasonal_forecast import forest
from subseasonal_forecast import metrics
from subseasonal_forecast import synth
from subseasonal_forecast import trainers
from subseasonal_forecast import utils

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
FIT_SPLITS = ('train', 'train+val')
EVAL_SPLITS = ('train', 'val', 'test')


def main(argv=None):
    args = _parse_args(argv)
    _configure_logging(args.debug)
    if args.threads is not None:
        configuration['threads'] = args.threads
    try:
        args.run(args)
    except exceptions.ConfigError as e:
        _report_error(args, e)
        sys.exit(EXIT_CONFIG)
    except exceptions.SubseasonalForecastError as e:
        _report_error(args, e)
        sys.exit(EXIT_FAILURE)
    except (OSError, ValueError) as e:
        logger.debug('%s failed', args.command, exc_info=True)
        _report_error(args, exceptions.RunError(e))
        sys.exit(EXIT_FAILURE)
    return EXIT_OK


def _configure_logging(debug):
    if debug:
        configuration['debug'] = True
    logging.basicConfig(
        level=logging.DEBUG if configuration['debug'] else logging.INFO,
        format=LOG_FORMAT)


def _report_error(args, error):
    sys.stderr.write('{}: {}\n'.format(type(error).__name__, error))
    try:
        os.makedirs(args.output_dir, exist_ok=True)
        utils.dump_json({'error': type(error).__name__, 'message': str(error),
                         'command': args.command},
                        os.path.join(args.output_dir, 'error.json'))
    except OSError:
        logger.exception('could not write the error document')


def _common_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--output-dir', dest='output_dir',
                        default=configuration['output_dir'],
                        help='Directory receiving the command outputs.')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker threads; 1 is the reproducible mode.')
    parser.add_argument('--debug', action='store_const', const=True,
                        default=False,
                        help='Debug logs and per-layer finiteness checks.')
    return parser


def _max_features(value):
    if value in ('all', 'sqrt'):
        return value
    try:
        return int(value)
    except ValueError:
        return float(value)


def _model_options():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--dataset', required=True)
    parser.add_argument('--model', choices=trainers.MODELS, default='rf')
    parser.add_argument('--task', choices=trainers.TASKS,
                        default='regression')
    parser.add_argument('--alpha', type=float, default=0.9)
    parser.add_argument('--paradigm', choices=features.PARADIGMS,
                        default=None)
    parser.add_argument('--ensemble-mode', dest='ensemble_mode',
                        choices=features.ENSEMBLE_MODES, default='full')
    parser.add_argument('--location-mode', dest='location_mode',
                        choices=features.LOCATION_MODES, default=None)
    parser.add_argument('--no-ensemble', dest='use_ensemble',
                        action='store_false')
    parser.add_argument('--no-lags', dest='use_lags', action='store_false')
    parser.add_argument('--no-covariates', dest='use_covariates',
                        action='store_false')
    parser.add_argument('--no-sst', dest='use_sst', action='store_false')
    parser.add_argument('--lags', type=int, nargs='+', default=None)
    parser.add_argument('--pe-dim', dest='pe_dim', type=int, default=12)
    parser.add_argument('--n-sst-components', dest='n_sst_components',
                        type=int, default=8)
    parser.add_argument('--n-trees', dest='n_trees', type=int, default=100)
    parser.add_argument('--max-features', dest='max_features',
                        type=_max_features, default=None)
    parser.add_argument('--min-samples-leaf', dest='min_samples_leaf',
                        type=int, default=1)
    parser.add_argument('--max-depth', dest='max_depth', type=int,
                        default=None)
    parser.add_argument('--epochs', type=int, default=100)
    parser.add_argument('--batch', type=int, default=8)
    parser.add_argument('--lr', type=float, default=1e-3)
    parser.add_argument('--weight-decay', dest='weight_decay', type=float,
                        default=0.0)
    parser.add_argument('--patience', type=int, default=None)
    parser.add_argument('--base-channels', dest='base_channels', type=int,
                        default=16)
    parser.add_argument('--depth', type=int, default=2)
    parser.add_argument('--hidden', type=int, default=100)
    parser.add_argument('--stack-bases', dest='stack_bases', nargs='+',
                        choices=trainers.MODELS, default=None)
    parser.add_argument('--fit-split', dest='fit_split', choices=FIT_SPLITS,
                        default='train',
                        help='Months the model is fitted on.')
    return parser


def _parse_args(argv=None):
    common = _common_options()
    model = _model_options()
    parser = argparse.ArgumentParser(
        description='Machine-learning subseasonal forecasting pipeline')
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    gen = commands.add_parser('gen-data', parents=[common],
                              help='Generate a synthetic dataset.')
    defaults = synth.SynthConfig()
    for name in ('n_lat', 'n_lon', 'months', 'n_members', 'n_sst_points',
                 'start_year', 'train_end', 'val_end'):
        gen.add_argument('--' + name.replace('_', '-'), dest=name, type=int,
                         default=getattr(defaults, name))
    for name in ('land_fraction', 'bias_amplitude', 'bias_spatial',
                 'anomaly_scale', 'persistence', 'trend',
                 'covariate_noise', 'correlation_length', 'drift'):
        gen.add_argument('--' + name.replace('_', '-'), dest=name,
                         type=float, default=getattr(defaults, name))
    gen.add_argument('--member-biases', dest='member_biases', type=float,
                     nargs='+', default=None)
    gen.add_argument('--member-noise', dest='member_noise', type=float,
                     nargs='+', default=[defaults.member_noise])
    gen.add_argument('--target', choices=sorted(synth.TARGETS),
                     default=defaults.target)
    gen.set_defaults(run=run_gen_data, seed=defaults.seed)

    train = commands.add_parser('train', parents=[common, model],
                                help='Fit one model and save a checkpoint.')
    train.add_argument('--grid-search', dest='grid_search',
                       action='store_const', const=True, default=False,
                       help='Pick convnet hyperparameters by blocked CV.')
    train.add_argument('--folds', type=int, default=10)
    train.set_defaults(run=run_train)

    evaluate = commands.add_parser('evaluate', parents=[common],
                                   help='Score checkpoints on a split.')
    evaluate.add_argument('--dataset', required=True)
    evaluate.add_argument('--checkpoint', nargs='+', required=True)
    evaluate.add_argument('--split', choices=EVAL_SPLITS, default='val')
    evaluate.add_argument('--region', action='append', default=[],
                          metavar='NAME=LAT0,LAT1,LON0,LON1',
                          help='Named rectangle for region aggregates.')
    evaluate.add_argument('--oracle-debias', dest='oracle_debias',
                          action='store_const', const=True, default=False)
    evaluate.add_argument('--no-images', dest='images',
                          action='store_false')
    evaluate.set_defaults(run=run_evaluate)

    ablate = commands.add_parser('ablate', parents=[common, model],
                                 help='Retrain under feature variants.')
    ablate.add_argument('--variants', nargs='+',
                        choices=list(experiments.VARIANTS),
                        default=['full-ensemble', 'sorted-ensemble',
                                 'ensemble-mean-only'])
    ablate.add_argument('--split', choices=EVAL_SPLITS, default='val')
    ablate.add_argument('--grouped-importance', dest='grouped_importance',
                        action='store_const', const=True, default=False)
    ablate.add_argument('--n-zero-features', dest='n_zero_features',
                        type=int, default=4)
    ablate.set_defaults(run=run_ablate)

    signtest = commands.add_parser('signtest', parents=[common],
                                   help='Paired sign test of two models.')
    signtest.add_argument('--dataset', required=True)
    signtest.add_argument('--checkpoint', nargs=2, required=True,
                          metavar=('A', 'B'))
    signtest.add_argument('--split', choices=EVAL_SPLITS, default='test')
    signtest.set_defaults(run=run_signtest)

    bootstrap = commands.add_parser('bootstrap', parents=[common, model],
                                    help='Retrain on bootstrap resamples.')
    bootstrap.add_argument('--models', nargs='+', choices=trainers.MODELS,
                           default=None)
    bootstrap.add_argument('--runs', type=int, default=50)
    bootstrap.add_argument('--sample-size', dest='sample_size', type=int,
                           default=200)
    bootstrap.set_defaults(run=run_bootstrap)

    stack = commands.add_parser('stack', parents=[common, model],
                                help='Train a stacked model and its bases.')
    stack.set_defaults(run=run_stack, model='stack')
    return parser.parse_args(argv)


def _arguments(args):
    return {key: value for key, value in sorted(vars(args).items())
            if key != 'run'}


def write_manifest(args, **extra):
    os.makedirs(args.output_dir, exist_ok=True)
    document = dict(extra, version=MANIFEST_VERSION, command=args.command,
                    arguments=_arguments(args))
    path = os.path.join(args.output_dir, 'manifest.json')
    utils.dump_json(document, path)
    return path


def feature_config(args, model=None, paradigm=None):
    model = model or args.model
    paradigm = paradigm or args.paradigm or trainers.default_paradigm(model)
    config = features.FeatureConfig(
        ensemble_mode=args.ensemble_mode, use_ensemble=args.use_ensemble,
        use_lags=args.use_lags, use_covariates=args.use_covariates,
        use_sst=args.use_sst, pe_dim=args.pe_dim,
        n_sst_components=args.n_sst_components)
    if args.lags:
        config = config.replace(lags=tuple(args.lags))
    config = trainers.default_features(model, paradigm, config)
    if args.location_mode is not None:
        # an explicit choice is kept so invalid combinations are rejected
        config = config.replace(location_mode=args.location_mode)
    return config


def model_spec(args, model=None):
    """ModelSpec from the command line; raises ConfigError before any work."""
    model = model or args.model
    paradigm = args.paradigm if model == args.model else None
    return trainers.ModelSpec(
        model=model, task=args.task, paradigm=paradigm, alpha=args.alpha,
        features=feature_config(args, model, paradigm),
        forest=forest.ForestParams(
            n_trees=args.n_trees, max_features=args.max_features,
            min_samples_leaf=args.min_samples_leaf,
            max_depth=args.max_depth, seed=args.seed),
        convnet=convnet.TrainParams(
            epochs=args.epochs, batch=args.batch, lr=args.lr,
            weight_decay=args.weight_decay, seed=args.seed,
            patience=args.patience),
        base_channels=args.base_channels, depth=args.depth,
        stack_bases=tuple(args.stack_bases) if args.stack_bases else None,
        hidden=args.hidden, seed=args.seed, threads=args.threads)


def load_views(path):
    """(dataset, train, val, test, dataset hash)."""
    ds = dataio.load_dataset(path)
    train, val, test = dataio.split_dataset(ds)
    return ds, train, val, test, dataio.read_manifest(path).get('hash')


def fit_view(ds, name):
    if name == 'train+val':
        return dataio.SplitView(ds, name, np.arange(ds.time.val_end),
                                ds.time.val_end)
    train, _, _ = dataio.split_dataset(ds)
    return train


def split_view(views, name):
    return dict(zip(EVAL_SPLITS, views))[name]


def run_gen_data(args):
    fields = {name: getattr(args, name) for name in (
        'n_lat', 'n_lon', 'months', 'n_members', 'n_sst_points',
        'start_year', 'train_end', 'val_end', 'land_fraction',
        'bias_amplitude', 'bias_spatial', 'anomaly_scale',
        'persistence', 'trend', 'covariate_noise', 'correlation_length',
        'drift', 'target', 'seed')}
    if args.member_biases:
        fields['member_biases'] = tuple(args.member_biases)
    noise = args.member_noise
    fields['member_noise'] = noise[0] if len(noise) == 1 else tuple(noise)
    config = synth.SynthConfig(**fields)
    ds = synth.synth_generate(config)
    dataio.save_dataset(ds, args.output_dir, config.to_dict())
    return args.output_dir


def _training_log(predictor, spec, view, directory):
    log = {'model': spec.model_id, 'months': len(view),
           'failures': {str(l): e for l, e in predictor.failures.items()}}
    model = getattr(predictor, 'model', None)
    if isinstance(model, convnet.ConvNetModel) and model.history:
        convnet.write_training_log(
            model.history, os.path.join(directory, 'training_log.csv'))
        log['final_train_loss'] = model.history[-1][1]
    if (spec.model == 'rf' and spec.task == 'regression'
            and spec.paradigm == 'conditional'):
        cube = predictor.pipeline.transform(view)
        matrix = features.assemble('conditional', view, predictor.pipeline,
                                   cube)
        log['oob_mse'] = forest.oob_mse(predictor.forests['pooled'],
                                        matrix.X, matrix.y)
    return log


def run_train(args):
    spec = model_spec(args)
    if args.grid_search and spec.model != 'convnet':
        raise exceptions.ConfigError('--grid-search applies to convnet only')
    ds, _, _, _, dataset_hash = load_views(args.dataset)
    view = fit_view(ds, args.fit_split)
    extra = {}
    if args.grid_search:
        pipeline = features.FeaturePipeline(spec.features).fit(view)
        stack = features.assemble('spatial', view, pipeline)
        best, table = convnet.grid_search(
            stack, view.target_name, folds=args.folds, seed=spec.seed,
            base=spec.base_channels, depth=spec.depth)
        spec = trainers.ModelSpec.from_dict(dict(
            spec.to_dict(), convnet=best.to_dict()))
        extra['grid_search'] = table
    write_manifest(args, dataset_hash=dataset_hash)
    predictor = trainers.Trainer(spec).fit(view)
    path = os.path.join(args.output_dir, 'model.npz')
    content_hash = checkpoint.save_checkpoint(
        path, predictor, spec, {'fit_split': args.fit_split,
                                'dataset_hash': dataset_hash})
    log = _training_log(predictor, spec, view, args.output_dir)
    log.update(extra, checkpoint=os.path.basename(path),
               checkpoint_hash=content_hash)
    utils.dump_json(log, os.path.join(args.output_dir, 'training.json'))
    logger.info('trained %s, checkpoint %s', spec.model_id, content_hash[:12])
    return path


def parse_region(text, grid):
    try:
        name, box = text.split('=', 1)
        lat_min, lat_max, lon_min, lon_max = (float(v)
                                              for v in box.split(','))
    except ValueError:
        raise exceptions.ConfigError(
            'region {!r} is not NAME=LAT0,LAT1,LON0,LON1'.format(text))
    return name, metrics.rectangle_region(grid, lat_min, lat_max, lon_min,
                                          lon_max)


def export_report(report, directory, images=True):
    os.makedirs(directory, exist_ok=True)
    report.save(os.path.join(directory, 'report.json'))
    for name, values in report.grids.items():
        metrics.export_heatmap(values, report.mask,
                               os.path.join(directory, name + '.csv'),
                               image=images)


def _load_for(path, ds, view):
    predictor, spec, document = checkpoint.load_checkpoint(path)
    checkpoint.check_catalog(document, spec, view)
    fit_split = document['metadata'].get('fit_split', 'train')
    return predictor, spec, document, fit_view(ds, fit_split)


def run_evaluate(args):
    ds, train, val, test, dataset_hash = load_views(args.dataset)
    regions = dict(parse_region(text, ds.grid) for text in args.region)
    view = split_view((train, val, test), args.split)
    write_manifest(args, dataset_hash=dataset_hash)
    reports = []
    for path in args.checkpoint:
        predictor, spec, document, train_view = _load_for(path, ds, view)
        seen = args.split in train_view.name.split('+')
        if seen:
            logger.warning('%s was fitted on the %s months it is evaluated '
                           'on', spec.model_id, args.split)
        report = experiments.evaluate_predictor(
            predictor, view, train_view, spec.model_id,
            {'checkpoint': document['hash'], 'evaluated_on': args.split,
             'split_seen_in_training': seen},
            oracle_debias=args.oracle_debias)
        export_report(report, os.path.join(args.output_dir, spec.model_id),
                      args.images)
        reports.append(report)
    if regions:
        land = {name: region & ds.mask.is_land
                for name, region in regions.items()}
        utils.dump_json(experiments.region_table(reports, land),
                        os.path.join(args.output_dir, 'regions.json'))
    return reports


def run_ablate(args):
    spec = model_spec(args)
    for variant in args.variants:
        experiments.variant_spec(spec, variant)
    ds, train, val, test, dataset_hash = load_views(args.dataset)
    view = split_view((train, val, test), args.split)
    train_view = fit_view(ds, args.fit_split)
    write_manifest(args, dataset_hash=dataset_hash)
    summary = {}
    for variant in args.variants:
        report = experiments.ablation_run(variant, spec, train_view, view)
        export_report(report, os.path.join(args.output_dir, variant),
                      images=False)
        summary[variant] = report.aggregates()
    if args.grouped_importance:
        groups = experiments.FEATURE_GROUPS + ('zeros',)
        importance = experiments.grouped_feature_importance(
            spec, train_view, view, groups, args.n_zero_features)
        summary['grouped_importance'] = [
            dict(report.metadata, aggregates=report.aggregates())
            for report in importance]
    utils.dump_json(summary, os.path.join(args.output_dir, 'ablation.json'))
    return summary


def run_signtest(args):
    ds, train, val, test, dataset_hash = load_views(args.dataset)
    view = split_view((train, val, test), args.split)
    predictions, names = [], []
    for path in args.checkpoint:
        predictor, spec, _, _ = _load_for(path, ds, view)
        if predictor.task == 'tercile':
            raise exceptions.ConfigError(
                'the sign test compares scalar forecast errors')
        predictions.append(predictor.predict(view))
        names.append(spec.model_id)
    write_manifest(args, dataset_hash=dataset_hash)
    result = experiments.compare_models(predictions[0], predictions[1], view)
    document = dict(result.to_document(), model_a=names[0],
                    model_b=names[1], split=args.split)
    utils.dump_json(document, os.path.join(args.output_dir,
                                           'signtest.json'))
    logger.info('sign test %s vs %s: min p %.3g, threshold %.3g, %s',
                names[0], names[1], document['min_p_value'],
                result.threshold,
                'rejected' if result.reject else 'not rejected')
    return result


def run_bootstrap(args):
    specs = [model_spec(args, name) for name in args.models or [args.model]]
    ds, train, _, test, dataset_hash = load_views(args.dataset)
    train_view = fit_view(ds, args.fit_split)
    write_manifest(args, dataset_hash=dataset_hash)
    scores = experiments.bootstrap_experiment(
        specs, train_view, test, n_boot=args.runs,
        sample_size=args.sample_size, seed=args.seed)
    metric = experiments.PRIMARY_METRIC[args.task]
    with open(os.path.join(args.output_dir, 'bootstrap.csv'), 'w') as f:
        f.write('run,model,{}\n'.format(metric))
        for model_id, values in scores.items():
            for run, value in enumerate(values):
                f.write('{},{},{}\n'.format(
                    run, model_id, '' if value is None else repr(value)))
    summary = {model_id: metrics.aggregate(
        [np.nan if v is None else v for v in values])
        for model_id, values in scores.items()}
    utils.dump_json({'metric': metric, 'scores': scores,
                     'summary': summary},
                    os.path.join(args.output_dir, 'bootstrap.json'))
    return scores


def run_stack(args):
    spec = model_spec(args)
    ds, train, val, test, dataset_hash = load_views(args.dataset)
    train_view = fit_view(ds, args.fit_split)
    write_manifest(args, dataset_hash=dataset_hash)
    predictor = trainers.Trainer(spec).fit(train_view)
    content_hash = checkpoint.save_checkpoint(
        os.path.join(args.output_dir, 'model.npz'), predictor, spec,
        {'fit_split': args.fit_split, 'dataset_hash': dataset_hash})
    splits = [val, test] if args.fit_split == 'train' else [test]
    summary = {'checkpoint_hash': content_hash}
    members = [(spec.model_id, predictor)] + [
        (spec.for_base(name).model_id, base)
        for name, base in predictor.stacked.bases.items()]
    for view in splits:
        for model_id, member in members:
            report = experiments.evaluate_predictor(member, view, train_view,
                                                    model_id)
            export_report(report, os.path.join(args.output_dir, view.name,
                                               model_id), images=False)
            summary.setdefault(view.name, {})[model_id] = report.aggregates()
    utils.dump_json(summary, os.path.join(args.output_dir, 'stack.json'))
    return summary
