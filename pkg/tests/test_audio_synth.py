import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest

from src.audio_synth import (
    AudioEvent,
    AudioJitter,
    AudioSynthConfig,
    PeakIntervalTable,
    sample_peak,
    sample_probs,
    synth_detection_batch,
    synth_event_for_box,
    synth_scene_events,
)
from src.errors import ConfigError, InvalidWindowError, TaxonomyError
from src.scene import BoundingBox, SceneGenConfig, generate_scene, layer_preset


@pytest.mark.parametrize("class_index,bounds", [(0, (0.8, 1.0)), (1, (0.3, 0.6)), (2, (0.0, 0.2))])
def test_detection_batch_distribution(taxonomy, class_index, bounds):
    rng = np.random.default_rng(class_index)
    events = synth_detection_batch(class_index, AudioSynthConfig(), rng, taxonomy)
    assert len(events) == 10_000
    lo, hi = bounds
    peaks = np.array([e.peak for e in events])
    assert peaks.min() >= lo and peaks.max() <= hi
    probs = np.array([e.probabilities for e in events])
    assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9
    assert (probs.argmax(axis=1) == class_index).all()
    assert (probs[:, class_index] >= 0.7).all()
    assert abs(peaks.mean() - (lo + hi) / 2) <= 0.01
    assert peaks.std(ddof=1) / np.sqrt(len(peaks)) < 0.001
    assert all(e.t_start == 0.0 and e.t_end == 1.0 for e in events)


def test_window_length_follows_sample_counts(taxonomy, rng):
    config = AudioSynthConfig(sampling_rate=50_000, samples_per_window=25_000, num_detections=3)
    assert config.window_seconds == 0.5
    assert [e.t_end for e in synth_detection_batch(0, config, rng, taxonomy)] == [0.5] * 3
    with pytest.raises(ConfigError):
        AudioSynthConfig(sampling_rate=0).validate()


def test_event_window_is_snapped_to_samples(taxonomy, rng):
    jitter = AudioJitter(shift_sigma=0.01)
    for _ in range(20):
        event = synth_event_for_box(
            BoundingBox(50, 40, 120, 70), 0, 200, 200, layer_preset(7), 1.0, jitter, PeakIntervalTable(), rng, taxonomy,
            sampling_rate=1000,
        )
        for t in (event.t_start, event.t_end):
            assert t * 1000 == pytest.approx(round(t * 1000), abs=1e-9)


def test_sample_peak_with_scripted_draws(stub_rng):
    table = PeakIntervalTable()
    assert sample_peak("Rupture", table, stub_rng([0.25])) == pytest.approx(0.85)
    assert sample_peak("Surface defect", table, stub_rng([0.0])) == pytest.approx(0.3)
    assert sample_peak("Nothing", table, stub_rng([1.0])) == pytest.approx(0.2)
    with pytest.raises(TaxonomyError):
        sample_peak("Seal", table, stub_rng([0.5]))


def test_sample_probs_with_scripted_draws(stub_rng):
    probs = sample_probs(0, 3, stub_rng([0.5, 0.5]))
    assert probs == pytest.approx([0.85, 0.075, 0.075])

    # the chosen class is followed cyclically; the last one takes the remainder
    probs = sample_probs(2, 3, stub_rng([0.0, 0.25]))
    assert probs[2] == pytest.approx(0.7)
    assert probs[0] == pytest.approx(0.075)
    assert probs[1] == pytest.approx(0.225)
    assert probs.sum() == pytest.approx(1.0)


def test_sample_probs_needs_two_classes(rng):
    with pytest.raises(ConfigError):
        sample_probs(0, 1, rng)


def test_peak_interval_table_validation():
    with pytest.raises(ConfigError):
        PeakIntervalTable((("Rupture", 0.9, 0.8),))
    table = PeakIntervalTable.from_dict({"Rupture": [0.5, 0.9], "Nothing": [0.0, 0.1]})
    assert table.interval("Rupture") == (0.5, 0.9)
    assert table.as_dict() == {"Rupture": [0.5, 0.9], "Nothing": [0.0, 0.1]}


def test_event_invariants():
    with pytest.raises(InvalidWindowError):
        AudioEvent(0.5, 0.5, (0.8, 0.1, 0.1), 0.9, 0)
    with pytest.raises(ValueError):
        AudioEvent(0.0, 1.0, (0.8, 0.1, 0.2), 0.9, 0)
    with pytest.raises(ValueError):
        AudioEvent(0.0, 1.0, (0.8, 0.1, 0.1), 0.9, 1)
    with pytest.raises(ValueError):
        AudioEvent(0.0, 1.0, (0.8, 0.1, 0.1), 1.5, 0)
    event = AudioEvent(0.0, 1.0, (0.8, 0.1, 0.1), 0.9, 0)
    with pytest.raises(InvalidWindowError):
        event.check_duration(0.5)
    assert AudioEvent.from_dict(event.to_dict()) == event


def test_event_window_follows_box_rows(taxonomy, stub_rng):
    box = BoundingBox(50, 40, 120, 70)
    event = synth_event_for_box(
        box, 0, 200, 200, layer_preset(7), 1.0, AudioJitter(), PeakIntervalTable(), stub_rng([0.5, 0.5, 0.5]), taxonomy
    )
    assert event.t_start == pytest.approx(0.2)
    assert event.t_end == pytest.approx(0.35)
    assert event.peak == pytest.approx(0.9)
    assert event.probabilities == pytest.approx((0.85, 0.075, 0.075))
    assert event.predicted_class == 0


def test_event_window_dilation_is_clamped(taxonomy, rng):
    layer = layer_preset(7)
    event = synth_event_for_box(
        BoundingBox(50, 0, 120, 30), 1, 200, 200, layer, 1.0, AudioJitter(dilation=0.05), PeakIntervalTable(), rng, taxonomy
    )
    assert event.t_start == 0.0
    assert event.t_end == pytest.approx(0.2)


def test_event_for_box_outside_image(taxonomy, rng):
    with pytest.raises(ValueError):
        synth_event_for_box(
            BoundingBox(150, 150, 250, 250), 0, 200, 200, layer_preset(7), 1.0, AudioJitter(), PeakIntervalTable(), rng, taxonomy
        )


def test_scene_events_skip_rejection_class(taxonomy):
    cfg = SceneGenConfig(boxes_per_scene=(3, 3), box_size=(20, 40))
    for scene_id in range(10):
        scene = generate_scene(cfg, seed=5, scene_id=scene_id)
        audible = [gt for gt in scene.ground_truth if taxonomy.is_audible(gt.class_index)]
        events = synth_scene_events(scene, AudioSynthConfig(), np.random.default_rng(scene_id), taxonomy)
        assert len(events) == len(audible)
        for event, gt in zip(events, audible):
            assert event.predicted_class == gt.class_index
            event.check_duration(scene.duration)

        ambient = synth_scene_events(scene, AudioSynthConfig(ambient_nothing_events=True), np.random.default_rng(scene_id), taxonomy)
        assert len(ambient) == len(scene.ground_truth)


def test_label_noise_changes_predicted_class_but_not_peak(taxonomy):
    cfg = SceneGenConfig(boxes_per_scene=(3, 3), box_size=(20, 40), class_mixture=(1.0, 0.0, 0.0))
    audio = AudioSynthConfig(label_noise=1.0)
    for scene_id in range(10):
        scene = generate_scene(cfg, seed=0, scene_id=scene_id)
        for event in synth_scene_events(scene, audio, np.random.default_rng(scene_id), taxonomy):
            assert event.predicted_class != 0
            assert 0.8 <= event.peak <= 1.0


def test_invalid_label_noise(taxonomy, rng):
    scene = generate_scene(SceneGenConfig(), seed=0)
    with pytest.raises(ConfigError):
        synth_scene_events(scene, AudioSynthConfig(label_noise=2.0), rng, taxonomy)
