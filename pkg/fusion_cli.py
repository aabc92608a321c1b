"""Command-line entry for the image/audio fusion experiments.

Subcommands:
  synth     generate a synthetic dataset directory
  run       fuse, train the classifier and evaluate both variants (optionally z-fold)
  sweep     accuracy of both variants over an IoU grid
  evaluate  score a saved classifier checkpoint on a dataset
  ttest     Student's unpaired t-test on two accuracy samples
  fixtures  recompute the published reference tables
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from src.analyzer import FUSED, IMAGE_ONLY, FusionAnalyzer
from src.config import RunConfig
from src.data_collector import SceneDataCollector
from src.dataset_io import MANIFEST, load_model, save_model
from src.errors import ConfigError, FusionError
from src.fixtures import fixtures_pass, recompute_fixtures
from src.report import plot_sweep, write_csv, write_experiment_report, write_fold_report, write_json
from src.stats import unpaired_ttest

logger = logging.getLogger("fusion_cli")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config', type=str, default=None, help='JSON run configuration')
    p.add_argument('--verbose', action='store_true')


def _add_pipeline(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument('--seed', type=int, required=seed_required, default=None)
    p.add_argument('--data', dest='dataset_dir', type=str, default=None)
    p.add_argument('--out', dest='output_dir', type=str, default=None)
    p.add_argument('--iou', dest='iou_thresholds', type=float, nargs='+', default=None)
    p.add_argument('--prob-threshold', dest='prob_threshold', type=float, default=None)
    p.add_argument('--lr', dest='learning_rate', type=float, default=None)
    p.add_argument('--epochs', dest='max_epochs', type=int, default=None)
    p.add_argument('--patience', type=int, default=None)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description='Image/audio upstream fusion experiments')
    sub = p.add_subparsers(dest='command', required=True)

    s = sub.add_parser('synth', help='generate a synthetic dataset')
    _add_common(s)
    s.add_argument('--seed', type=int, default=None)
    s.add_argument('--out', dest='dataset_dir', type=str, default=None)
    s.add_argument('--scenes', dest='num_scenes', type=int, default=None)
    s.add_argument('--layer', dest='layer_id', type=int, choices=[7, 16, 19], default=None)
    s.add_argument('--ambiguity', type=float, default=None)
    s.add_argument('--workers', type=int, default=None)

    r = sub.add_parser('run', help='train and evaluate both variants')
    _add_common(r)
    _add_pipeline(r, seed_required=True)
    r.add_argument('--folds', type=int, default=None)

    w = sub.add_parser('sweep', help='accuracy over an IoU grid')
    _add_common(w)
    _add_pipeline(w, seed_required=False)

    e = sub.add_parser('evaluate', help='score a saved checkpoint on every scene of a dataset')
    _add_common(e)
    e.add_argument('--checkpoint', type=str, required=True, help='checkpoint directory written by run')
    e.add_argument('--data', dest='dataset_dir', type=str, default=None)
    e.add_argument('--out', dest='output_dir', type=str, default=None)
    e.add_argument('--iou', dest='iou_thresholds', type=float, nargs='+', default=None)
    e.add_argument('--prob-threshold', dest='prob_threshold', type=float, default=None)

    t = sub.add_parser('ttest', help="Student's unpaired t-test")
    _add_common(t)
    t.add_argument('--a', type=float, nargs='+', default=None, help='fused-variant accuracies')
    t.add_argument('--b', type=float, nargs='+', default=None, help='image-only accuracies')
    t.add_argument('--folds-csv', dest='folds_csv', type=str, default=None, help='folds.csv written by run --folds')
    t.add_argument('--iou', type=float, default=None, help='IoU column of --folds-csv')
    t.add_argument('--output-json', dest='output_json', type=str, default=None)

    f = sub.add_parser('fixtures', help='recompute the reference tables')
    _add_common(f)
    f.add_argument('--output-csv', dest='output_csv', type=str, default=None)
    return p.parse_args(argv)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config, then explicit flags."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for name in ('seed', 'dataset_dir', 'output_dir', 'prob_threshold', 'folds', 'workers'):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, 'iou_thresholds', None):
        cfg.iou_thresholds = tuple(args.iou_thresholds)
    for name in ('num_scenes', 'layer_id', 'ambiguity'):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.scene, name, value)
    for name in ('learning_rate', 'max_epochs', 'patience'):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.vit, name, value)
    cfg.validate()
    return cfg


def _load_dataset(cfg: RunConfig):
    path = Path(cfg.dataset_dir)
    if not (path / MANIFEST).exists():
        raise FileNotFoundError(f"no dataset at {path}; run `synth` first")
    collector = SceneDataCollector(cfg)
    scenes = collector.load(path)
    return scenes, collector.detections(scenes)


def cmd_synth(cfg: RunConfig) -> Path:
    collector = SceneDataCollector(cfg)
    scenes = collector.generate()
    path = collector.save(scenes)
    print('Wrote dataset to', path)
    return path


def cmd_run(cfg: RunConfig) -> List[Path]:
    scenes, detections = _load_dataset(cfg)
    analyzer = FusionAnalyzer(cfg)
    out = Path(cfg.output_dir)
    result = analyzer.run(scenes, detections)
    written = write_experiment_report(result, out, cfg.to_dict())
    written.append(save_model(result.model, out / 'checkpoint'))
    cfg.save(out / 'config.json')
    for path in written:
        print('Wrote', path)
    for row in result.evaluation.sweep_table().itertuples(index=False):
        print(f'IoU {row.iou:.2f}: image-only ACC {getattr(row, IMAGE_ONLY):.4f}  fused ACC {getattr(row, FUSED):.4f}')

    if cfg.folds:
        folds = analyzer.run_folds(scenes, detections, cfg.folds)
        for path in write_fold_report(folds, out):
            print('Wrote', path)
            written.append(path)
    return written


def cmd_sweep(cfg: RunConfig) -> pd.DataFrame:
    scenes, detections = _load_dataset(cfg)
    analyzer = FusionAnalyzer(cfg)
    result = analyzer.run(scenes, detections)
    samples = analyzer.samples(scenes, detections).subset(result.eval_scenes)
    sweep = analyzer.sweep_iou(
        scenes, detections, analyzer.predict_cache(result.model, samples), cfg.iou_thresholds, result.eval_scenes
    )
    out = Path(cfg.output_dir)
    print('Wrote CSV to', write_csv(sweep, out / 'sweep.csv'))
    print('Wrote SVG to', plot_sweep(sweep, out / 'accuracy_vs_iou.svg'))
    return sweep


def cmd_evaluate(cfg: RunConfig, checkpoint: str) -> pd.DataFrame:
    scenes, detections = _load_dataset(cfg)
    model = load_model(checkpoint)
    analyzer = FusionAnalyzer(cfg)
    predictions = analyzer.predict_cache(model, analyzer.samples(scenes, detections))
    sweep = analyzer.sweep_iou(scenes, detections, predictions, cfg.iou_thresholds)
    out = Path(cfg.output_dir)
    print('Wrote CSV to', write_csv(sweep, out / 'evaluation.csv'))
    print('Wrote SVG to', plot_sweep(sweep, out / 'evaluation_accuracy_vs_iou.svg'))
    return sweep


def cmd_ttest(args: argparse.Namespace) -> dict:
    if args.folds_csv:
        if args.iou is None:
            raise ConfigError('--folds-csv needs --iou to pick the column pair')
        frame = pd.read_csv(args.folds_csv)
        frame = frame[~frame['fold'].isin(['Mean', 'StD'])]
        a = frame[f'{FUSED}@{args.iou}'].astype(float).tolist()
        b = frame[f'{IMAGE_ONLY}@{args.iou}'].astype(float).tolist()
    elif args.a and args.b:
        a, b = args.a, args.b
    else:
        raise ConfigError('give either --a and --b, or --folds-csv with --iou')
    result = unpaired_ttest(a, b).to_dict()
    if args.output_json:
        write_json(result, args.output_json)
        print('Wrote JSON to', args.output_json)
    print(json.dumps(result, indent=2, sort_keys=True))
    return result


def cmd_fixtures(args: argparse.Namespace) -> bool:
    frame = recompute_fixtures()
    if args.output_csv:
        print('Wrote CSV to', write_csv(frame, args.output_csv))
    counts = frame['status'].value_counts()
    for status in ('ok', 'known_discrepancy', 'fail'):
        print(f'{status}: {int(counts.get(status, 0))}')
    for row in frame[frame['status'] != 'ok'].itertuples(index=False):
        print(f'  {row.status} {row.table} {row.row} IoU {row.iou} {row.metric}: printed {row.printed:.4f}, computed {row.computed:.4f}')
    return fixtures_pass(frame)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        if args.command == 'fixtures':
            return 0 if cmd_fixtures(args) else 1
        if args.command == 'ttest':
            cmd_ttest(args)
            return 0
        cfg = build_config(args)
        if args.command == 'synth':
            cmd_synth(cfg)
        elif args.command == 'run':
            cmd_run(cfg)
        elif args.command == 'sweep':
            cmd_sweep(cfg)
        elif args.command == 'evaluate':
            cmd_evaluate(cfg, args.checkpoint)
    except (FusionError, OSError) as exc:
        print(json.dumps({'error': type(exc).__name__, 'message': str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
