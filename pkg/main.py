import json
import logging
import signal
import sys
import threading
from argparse import SUPPRESS, ArgumentParser, Namespace
from dataclasses import fields
from pathlib import Path

import torch
from dotenv import load_dotenv
from threadpoolctl import threadpool_limits

from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from config import CHOICES, PROFILES, Settings, resolve_settings
from errors import InvalidArgument, LPIError, NumericalError
from experiments import compare_affinities, convergence_curve, sweep_region_counts
from extraction.bundle import read_bundle, update_hulls, write_bundle
from extraction.field import NeuralField
from extraction.hulls import abstract_hulls
from extraction.parts import PartExtractor
from extraction.surface import read_obj, write_obj
from geometry import (
    GeodesicCache, build_geodesic_table, farthest_point_sample, normalize, read_point_cloud, segment_centers,
    write_point_cloud
)
from metrics import evaluate
from models import AffinityMode, LossMode, MeshBundle, Normalization, PointCloud, SampledSurface
from shapes import AnalyticShape, shape_from_spec
from training import train

LOG_LEVEL = logging.INFO
LOG_FORMAT = '%(asctime)s %(levelname)s %(message)s'
SIDECAR_SUFFIX = '.shape.json'
CHECKPOINT_SUFFIX = '.lpic'
DEFAULT_SHAPE_POINTS = 2000

logger = logging.getLogger(__name__)

shutdown_event = threading.Event()


def _settings_options() -> ArgumentParser:
    """One flag per settings key; flags left out do not override anything."""
    options = ArgumentParser(add_help=False)
    options.add_argument('--log', default=LOG_LEVEL, help='Set the logging level')
    options.add_argument('--profile', choices=sorted(PROFILES), help='Named settings profile')
    options.add_argument('--config', type=Path, help='TOML file of settings')
    for setting in fields(Settings):
        kind = type(setting.default)
        options.add_argument(
            '--' + setting.name.replace('_', '-'),
            dest=setting.name,
            type=kind,
            choices=CHOICES.get(setting.name),
            default=SUPPRESS,
            help=f'(default {setting.default!r})'
        )
    return options


def _build_parser() -> ArgumentParser:
    options = _settings_options()
    root = ArgumentParser(prog='lpi', description='Part-aware implicit surface reconstruction from point clouds')
    commands = root.add_subparsers(dest='command', required=True)

    train_cmd = commands.add_parser('train', parents=[options], help='Fit a model to a point cloud')
    train_cmd.add_argument('input', type=Path, help='Point cloud (.xyz or .ply)')
    train_cmd.add_argument('-o', '--output', type=Path, help='Checkpoint path (default: <input>.lpic)')
    train_cmd.add_argument('--gt-shape', help='Analytic shape giving ground truth for --loss mse')
    train_cmd.add_argument('--labels', type=Path, help='Sparse labelled point cloud for --affinity semantic')

    for name, text in (('reconstruct', 'Mesh the whole shape'), ('parts', 'Mesh the shape and every part')):
        cmd = commands.add_parser(name, parents=[options], help=text)
        cmd.add_argument('checkpoint', type=Path)
        cmd.add_argument('-o', '--output', type=Path, required=True, help='Bundle directory')

    relevel_cmd = commands.add_parser('relevel', parents=[options], help='Mesh parts at fewer part counts')
    relevel_cmd.add_argument('checkpoint', type=Path)
    relevel_cmd.add_argument('--levels', required=True, help='Comma separated part counts, e.g. 2,4,8')
    relevel_cmd.add_argument('-o', '--output', type=Path, required=True, help='Directory for one bundle per level')

    abstract_cmd = commands.add_parser('abstract', parents=[options], help='Convex hull of every part')
    abstract_cmd.add_argument('source', type=Path, help='Checkpoint, or a bundle directory to add hulls to')
    abstract_cmd.add_argument('--levels', help='Part count to abstract at (default: every region)')
    abstract_cmd.add_argument('-o', '--output', type=Path, help='Bundle directory (checkpoint input only)')

    eval_cmd = commands.add_parser('eval', parents=[options], help='Compare a mesh against a reference mesh')
    eval_cmd.add_argument('mesh', type=Path)
    eval_cmd.add_argument('reference', type=Path)
    eval_cmd.add_argument('--iou', action='store_true', help='Also compute volumetric IoU')
    eval_cmd.add_argument('-o', '--output', type=Path, help='Write the JSON report here')

    inspect_cmd = commands.add_parser('inspect', parents=[options], help='Summarise a checkpoint')
    inspect_cmd.add_argument('checkpoint', type=Path)

    shape_cmd = commands.add_parser('shape', parents=[options], help='Sample an analytic shape')
    shape_cmd.add_argument('spec', help='Shape name with optional parameters, e.g. torus:major=0.25,minor=0.1')
    shape_cmd.add_argument('--points', type=int, default=DEFAULT_SHAPE_POINTS)
    shape_cmd.add_argument('--segments', type=int, default=0, help='Label points by this many azimuth sectors')
    shape_cmd.add_argument('--reference', type=Path, help='Also write a reference mesh OBJ')
    shape_cmd.add_argument('-o', '--output', type=Path, required=True, help='Point cloud path (.xyz or .ply)')

    sweep_cmd = commands.add_parser('sweep', parents=[options], help='Ablations over affinities or code counts')
    sweep_cmd.add_argument('input', type=Path)
    sweep_cmd.add_argument('--sweep', choices=['affinity', 'regions', 'convergence'], required=True)
    sweep_cmd.add_argument('--modes', default='average,nearest,euclidean,intrinsic')
    sweep_cmd.add_argument('--counts', default='1,4,16,64')
    sweep_cmd.add_argument('--every', type=int, default=100, help='Evaluation interval for convergence')
    sweep_cmd.add_argument('-o', '--output', type=Path, required=True, help='JSON report path')
    return root


parser = _build_parser()


def configure_environment(log_level) -> None:
    """Load environment variables from .env file and configure logging."""
    load_dotenv()
    logging.basicConfig(level=log_level, format=LOG_FORMAT)

    # Register signal handlers
    signal.signal(signal.SIGINT, handle_shutdown)
    signal.signal(signal.SIGTERM, handle_shutdown)


def handle_shutdown(signum: int, frame: object) -> None:
    """Handle SIGTERM and SIGINT signals."""
    logger.info('Received SIGTERM or SIGINT, stopping after the current step.')
    shutdown_event.set()


def _settings(args: Namespace) -> Settings:
    names = {f.name for f in fields(Settings)}
    overrides = {key: value for key, value in vars(args).items() if key in names}
    return resolve_settings(args.profile, args.config, overrides)


def _parse_counts(text: str) -> list[int]:
    try:
        counts = [int(item) for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise InvalidArgument(f'Expected comma separated integers, got "{text}"') from e
    if not counts:
        raise InvalidArgument('No counts given')
    return counts


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _sidecar_shape(path: Path) -> AnalyticShape | None:
    sidecar = _sidecar(path)
    if not sidecar.is_file():
        return None
    try:
        return shape_from_spec(json.loads(sidecar.read_text())['shape'])
    except (ValueError, KeyError) as e:
        raise InvalidArgument(f'Bad shape sidecar {sidecar}: {e}') from e


def _print_json(data: dict) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _labelled_cloud(path: Path, normalization: Normalization) -> PointCloud:
    """A labelled cloud in shape units, moved into the training cloud's normalized frame."""
    raw = read_point_cloud(path)
    if raw.segment_labels is None:
        raise InvalidArgument(f'{path} carries no segment labels')
    return PointCloud(normalization.apply(raw.points), raw.segment_labels)


def cmd_train(args: Namespace, settings: Settings) -> int:
    cloud, normalization = normalize(read_point_cloud(args.input))
    affinity = settings.affinity_config()
    labeled = None
    if args.labels:
        if affinity.mode != AffinityMode.SEMANTIC:
            raise InvalidArgument('--labels is only used with --affinity semantic')
        labeled = _labelled_cloud(args.labels, normalization)
    if affinity.mode == AffinityMode.SEMANTIC:
        centers = segment_centers(cloud if labeled is None else labeled)
    else:
        centers = farthest_point_sample(cloud, settings.regions, settings.seed)

    table = None
    if affinity.mode == AffinityMode.INTRINSIC:
        if settings.cache_dir:
            with GeodesicCache(settings.cache_dir) as cache:
                table = cache.get(cloud, centers, settings.geodesic_k, n_jobs=settings.n_jobs)
        else:
            table = build_geodesic_table(cloud, centers, settings.geodesic_k, n_jobs=settings.n_jobs)

    sdf_fn = None
    if settings.loss == LossMode.MSE.value:
        shape = shape_from_spec(args.gt_shape) if args.gt_shape else _sidecar_shape(args.input)
        if shape is None:
            raise InvalidArgument('--loss mse needs --gt-shape or a shape sidecar next to the input')
        sdf_fn = shape.normalized_sdf(normalization)

    output = args.output or args.input.with_suffix(CHECKPOINT_SUFFIX)
    output.parent.mkdir(parents=True, exist_ok=True)
    log_path = output.with_name(output.name + '.log.jsonl')
    try:
        with open(log_path, 'w') as log_stream:
            checkpoint = train(cloud, centers, settings.train_config(), settings.net_config(), affinity,
                               normalization, table, sdf_fn, shutdown_event, log_stream, labeled)
    except NumericalError as e:
        last_good = getattr(e, 'checkpoint', None)
        if last_good is not None:
            save_checkpoint(last_good, output)
        raise
    except LPIError:
        log_path.unlink(missing_ok=True)
        raise

    save_checkpoint(checkpoint, output)
    print(output)
    return 0


def _provenance(checkpoint: Checkpoint, settings: Settings) -> dict:
    return {'checkpoint': checkpoint.identifier(), 'mode': checkpoint.affinity.mode.value, 'closure': settings.closure}


def _extractor(checkpoint: Checkpoint, settings: Settings) -> PartExtractor:
    field = NeuralField(checkpoint, settings.closure, n_jobs=settings.n_jobs)
    return PartExtractor(field, settings.resolution)


def cmd_reconstruct(args: Namespace, settings: Settings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    extractor = _extractor(checkpoint, settings)
    provenance = _provenance(checkpoint, settings)
    provenance.update(resolution=settings.resolution, level=None)
    bundle = MeshBundle(extractor.global_mesh(), {}, provenance=provenance)
    print(write_bundle(bundle, args.output, checkpoint.normalization))
    return 0


def cmd_parts(args: Namespace, settings: Settings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    bundle = _extractor(checkpoint, settings).bundle(provenance=_provenance(checkpoint, settings))
    print(write_bundle(bundle, args.output, checkpoint.normalization))
    return 0


def cmd_relevel(args: Namespace, settings: Settings) -> int:
    levels = _parse_counts(args.levels)
    checkpoint = load_checkpoint(args.checkpoint)
    for level in levels:
        if not 1 <= level <= checkpoint.n_codes:
            raise InvalidArgument(f'Level {level} outside [1, {checkpoint.n_codes}]')

    extractor = _extractor(checkpoint, settings)
    provenance = _provenance(checkpoint, settings)
    for level in levels:
        bundle = extractor.bundle(level, provenance)
        print(write_bundle(bundle, args.output / f'level_{level:03d}', checkpoint.normalization))
    return 0


def cmd_abstract(args: Namespace, settings: Settings) -> int:
    if args.source.is_dir():
        bundle = read_bundle(args.source)
        update_hulls(args.source, abstract_hulls(bundle))
        print(args.source)
        return 0

    if args.output is None:
        raise InvalidArgument('abstract on a checkpoint needs --output')
    checkpoint = load_checkpoint(args.source)
    level = _parse_counts(args.levels)[0] if args.levels else None
    bundle = _extractor(checkpoint, settings).bundle(level, _provenance(checkpoint, settings))
    abstract_hulls(bundle)
    print(write_bundle(bundle, args.output, checkpoint.normalization))
    return 0


def cmd_eval(args: Namespace, settings: Settings) -> int:
    mesh = read_obj(args.mesh)
    reference = read_obj(args.reference)
    report = evaluate(mesh, reference, settings.eval_samples, settings.mu, settings.seed, args.iou,
                      settings.iou_resolution)
    if args.output is not None:
        args.output.write_text(json.dumps(report, indent=2, sort_keys=True) + '\n')
    _print_json(report)
    return 4 if 'iou_error' in report else 0


def cmd_inspect(args: Namespace, settings: Settings) -> int:
    summary = load_checkpoint(args.checkpoint).summary()
    print(f'Regions (I):      {summary["regions"]}')
    print(f'Latent size (T):  {summary["latent_dim"]}')
    print(f'Affinity:         {summary["affinity"]} (sigma {summary["sigma"]})')
    print(f'Step:             {summary["step"]}')
    print(f'Layers:           {" ".join("x".join(map(str, shape)) for shape in summary["layer_shapes"])}')
    print(f'Normalization:    scale {summary["normalization"]["scale"]}, offset {summary["normalization"]["offset"]}')
    _print_json(summary)
    return 0


def cmd_shape(args: Namespace, settings: Settings) -> int:
    shape = shape_from_spec(args.spec)
    cloud = shape.sample_surface(args.points, settings.seed, args.segments)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_point_cloud(cloud, args.output)
    sidecar = {'shape': shape.spec(), 'points': args.points, 'seed': settings.seed, 'segments': args.segments}
    _sidecar(args.output).write_text(json.dumps(sidecar, indent=2) + '\n')
    if args.reference is not None:
        write_obj(shape.reference_mesh(settings.resolution), args.reference)
    print(args.output)
    return 0


def cmd_sweep(args: Namespace, settings: Settings) -> int:
    cloud, normalization = normalize(read_point_cloud(args.input))
    reference = None
    shape = _sidecar_shape(args.input)
    if shape is not None:
        samples = shape.sample_oriented(settings.eval_samples, settings.seed)
        reference = SampledSurface(normalization.apply(samples.points), samples.normals, samples.source)

    if args.sweep == 'affinity':
        try:
            modes = [AffinityMode(mode.strip()) for mode in args.modes.split(',') if mode.strip()]
        except ValueError as e:
            raise InvalidArgument(f'Bad affinity modes "{args.modes}"') from e
        report = compare_affinities(cloud, modes, settings, reference, shutdown_event)
    elif args.sweep == 'regions':
        report = sweep_region_counts(cloud, _parse_counts(args.counts), settings, reference, shutdown_event)
    else:
        report = {'curve': convergence_curve(cloud, settings, args.every, reference, shutdown_event)}

    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + '\n')
    print(args.output)
    return 0


COMMANDS = {
    'train': cmd_train,
    'reconstruct': cmd_reconstruct,
    'parts': cmd_parts,
    'relevel': cmd_relevel,
    'abstract': cmd_abstract,
    'eval': cmd_eval,
    'inspect': cmd_inspect,
    'shape': cmd_shape,
    'sweep': cmd_sweep,
}


def main(args: Namespace) -> int:
    """Main entry point. Returns the process exit code."""
    configure_environment(args.log)
    try:
        settings = _settings(args)
        if settings.threads:
            torch.set_num_threads(settings.threads)
        with threadpool_limits(limits=settings.n_jobs):
            return COMMANDS[args.command](args, settings)
    except LPIError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return e.exit_code


if __name__ == '__main__':
    args = parser.parse_args()
    sys.exit(main(args))
