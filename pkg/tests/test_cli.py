import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import json

import pandas as pd
import pytest

import fusion_cli
from src.analyzer import FUSED, IMAGE_ONLY, FoldResult, FusionAnalyzer
from src.data_collector import SceneDataCollector
from src.fixtures import FOLD_ACCURACIES
from src.report import write_csv

REPORT_FILES = [
    'per_class_image_only.csv',
    'per_class_fused.csv',
    'overall.csv',
    'sweep.csv',
    'train_report.csv',
    'accuracy_vs_iou.svg',
    'summary.json',
    'config.json',
]


def test_fixtures_command(tmp_path, capsys):
    out = tmp_path / 'fixtures.csv'
    assert fusion_cli.main(['fixtures', '--output-csv', str(out)]) == 0
    printed = capsys.readouterr().out
    assert 'fail: 0' in printed
    assert 'known_discrepancy: 1' in printed
    assert len(pd.read_csv(out)) == 132


def test_ttest_command_reads_argv(tmp_path, monkeypatch):
    out = tmp_path / 'ttest.json'
    monkeypatch.setattr('sys.argv', ['prog', 'ttest', '--a', '1', '2', '--b', '3', '4', '--output-json', str(out)])
    assert fusion_cli.main() == 0
    j = json.loads(out.read_text())
    assert j['t'] == pytest.approx(-2.8284, abs=1e-4)
    assert j['df'] == 2


def test_ttest_from_folds_csv(tmp_path, capsys):
    folds = FoldResult(
        thresholds=(0.3, 0.5, 0.7),
        accuracies={v: dict(FOLD_ACCURACIES[v]) for v in (IMAGE_ONLY, FUSED)},
        ttests={},
        train_reports=[],
    )
    path = write_csv(folds.table(), tmp_path / 'folds.csv')
    assert fusion_cli.main(['ttest', '--folds-csv', str(path), '--iou', '0.7']) == 0
    result = json.loads(capsys.readouterr().out)
    assert result['t'] == pytest.approx(42.85, abs=0.1)


def test_ttest_without_samples_is_an_error(capsys):
    assert fusion_cli.main(['ttest']) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err['error'] == 'ConfigError'


def test_run_requires_seed():
    with pytest.raises(SystemExit) as exc:
        fusion_cli.parse_args(['run'])
    assert exc.value.code == 2


def test_run_without_dataset(tmp_path, capsys):
    code = fusion_cli.main(['run', '--seed', '1', '--data', str(tmp_path / 'missing'), '--out', str(tmp_path / 'r')])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err['error'] == 'FileNotFoundError'


def test_build_config_precedence(tmp_path, tiny_run_config):
    path = tmp_path / 'cfg.json'
    tiny_run_config.save(path)
    args = fusion_cli.parse_args(['run', '--config', str(path), '--seed', '4', '--iou', '0.4', '0.6', '--epochs', '7'])
    cfg = fusion_cli.build_config(args)
    assert cfg.seed == 4
    assert cfg.iou_thresholds == (0.4, 0.6)
    assert cfg.vit.max_epochs == 7
    assert cfg.vit.embed_dim == tiny_run_config.vit.embed_dim
    assert cfg.scene.num_scenes == tiny_run_config.scene.num_scenes


def test_invalid_flag_value_is_reported(tmp_path, capsys):
    code = fusion_cli.main(['synth', '--out', str(tmp_path / 'd'), '--ambiguity', '2.0'])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])['error'] == 'ConfigError'


@pytest.fixture
def config_file(tmp_path, tiny_run_config):
    path = tmp_path / 'tiny.json'
    tiny_run_config.save(path)
    return path


def test_synth_then_run(tmp_path, config_file):
    data = tmp_path / 'data'
    assert fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)]) == 0
    assert (data / 'manifest.json').exists()
    assert len(list(data.glob('scene_*.fwt'))) == 16

    out = tmp_path / 'reports'
    assert fusion_cli.main(['run', '--config', str(config_file), '--seed', '11', '--data', str(data), '--out', str(out), '--folds', '2']) == 0
    for name in REPORT_FILES + ['folds.csv', 'ttest.json']:
        assert (out / name).exists(), name
    assert (out / 'checkpoint' / 'checkpoint.json').exists()
    overall = pd.read_csv(out / 'overall.csv')
    assert list(overall['variant']) == [IMAGE_ONLY] * 3 + [FUSED] * 3
    assert (out / 'accuracy_vs_iou.svg').read_text().lstrip().startswith('<?xml')

    sweep_out = tmp_path / 'sweep'
    assert fusion_cli.main(['sweep', '--config', str(config_file), '--data', str(data), '--out', str(sweep_out), '--iou', '0.2', '0.4']) == 0
    assert pd.read_csv(sweep_out / 'sweep.csv')['iou'].tolist() == [0.2, 0.4]


def _snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob('*')) if p.is_file()}


def test_reports_are_byte_identical(tmp_path, config_file):
    data = tmp_path / 'data'
    fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)])
    out = tmp_path / 'reports'
    argv = ['run', '--config', str(config_file), '--seed', '11', '--data', str(data), '--out', str(out), '--folds', '2']
    assert fusion_cli.main(argv) == 0
    first = _snapshot(out)
    for name in REPORT_FILES + ['folds.csv', 'ttest.json', 'checkpoint/checkpoint.json']:
        assert name in first, name
    assert fusion_cli.main(argv) == 0
    second = _snapshot(out)
    assert second.keys() == first.keys()
    for name in first:
        assert second[name] == first[name], name


def test_synth_twice_is_byte_identical(tmp_path, config_file):
    data = tmp_path / 'data'
    assert fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)]) == 0
    first = {p.name: p.read_bytes() for p in data.iterdir()}
    assert fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)]) == 0
    assert {p.name: p.read_bytes() for p in data.iterdir()} == first
    manifest = json.loads(first['manifest.json'])
    assert manifest['provenance']['seed'] == 11


def test_evaluate_saved_checkpoint(tmp_path, config_file, tiny_run_config):
    data = tmp_path / 'data'
    out = tmp_path / 'reports'
    assert fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)]) == 0
    assert fusion_cli.main(['run', '--config', str(config_file), '--seed', '11', '--data', str(data), '--out', str(out)]) == 0

    scored = tmp_path / 'scored'
    argv = ['evaluate', '--config', str(config_file), '--checkpoint', str(out / 'checkpoint'), '--data', str(data), '--out', str(scored)]
    assert fusion_cli.main(argv) == 0
    sweep = pd.read_csv(scored / 'evaluation.csv')
    assert sweep['iou'].tolist() == [0.3, 0.5, 0.7]
    assert (scored / 'evaluation_accuracy_vs_iou.svg').exists()

    # image-only accuracy does not depend on the classifier
    collector = SceneDataCollector(tiny_run_config)
    scenes = collector.load(data)
    detections = collector.detections(scenes)
    analyzer = FusionAnalyzer(tiny_run_config)
    nothing = {key: 2 for key in analyzer.samples(scenes, detections).keys}
    expected = analyzer.sweep_iou(scenes, detections, nothing, (0.3, 0.5, 0.7))
    assert sweep[IMAGE_ONLY].tolist() == pytest.approx(expected[IMAGE_ONLY].tolist(), abs=1e-6)
    assert sweep[FUSED].between(0.0, 1.0).all()


def test_evaluate_corrupt_checkpoint(tmp_path, config_file, capsys):
    data = tmp_path / 'data'
    assert fusion_cli.main(['synth', '--config', str(config_file), '--out', str(data)]) == 0
    ckpt = tmp_path / 'ckpt'
    ckpt.mkdir()
    (ckpt / 'checkpoint.json').write_text('{not json')
    argv = ['evaluate', '--config', str(config_file), '--checkpoint', str(ckpt), '--data', str(data), '--out', str(tmp_path / 'o')]
    assert fusion_cli.main(argv) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err['error'] == 'MalformedManifestError'
