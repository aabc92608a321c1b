import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import pytest

import fusion_cli
from src.analyzer import FUSED, IMAGE_ONLY, FusionAnalyzer
from src.config import RunConfig
from src.data_collector import SceneDataCollector

BENCHMARK = os.path.join(os.path.dirname(__file__), '..', 'configs', 'benchmark.json')

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    cfg = RunConfig.load(BENCHMARK)
    cfg.dataset_dir = str(tmp_path_factory.mktemp("benchmark_data"))
    collector = SceneDataCollector(cfg)
    scenes = collector.generate()
    return cfg, scenes, collector.detections(scenes)


def test_fusion_beats_image_only_at_strict_iou(benchmark):
    cfg, scenes, detections = benchmark
    folds = FusionAnalyzer(cfg).run_folds(scenes, detections)
    fused, image = folds.accuracies[FUSED], folds.accuracies[IMAGE_ONLY]
    strict, loose = max(cfg.iou_thresholds), min(cfg.iou_thresholds)

    gain = sum(fused[strict]) / len(fused[strict]) - sum(image[strict]) / len(image[strict])
    assert gain >= 0.02
    assert folds.ttests[strict] is not None and folds.ttests[strict].p < 0.05
    assert sum(fused[loose]) >= sum(image[loose])


def test_benchmark_run_is_reproducible(tmp_path):
    data = tmp_path / "data"
    assert fusion_cli.main(['synth', '--config', BENCHMARK, '--out', str(data)]) == 0
    out = tmp_path / "reports"
    argv = ['run', '--config', BENCHMARK, '--seed', '7', '--data', str(data), '--out', str(out)]
    snapshots = []
    for _ in range(2):
        assert fusion_cli.main(argv) == 0
        snapshots.append({str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob('*')) if p.is_file()})
    assert {'summary.json', 'config.json', 'folds.csv', 'ttest.json'} <= set(snapshots[0])
    assert snapshots[0] == snapshots[1]
