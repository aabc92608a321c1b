import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import json

import pandas as pd

from src.analyzer import FUSED, IMAGE_ONLY
from src.report import plot_sweep, write_csv, write_json


def _sweep():
    return pd.DataFrame({"iou": [0.3, 0.5, 0.7], IMAGE_ONLY: [0.64, 0.57, 0.35], FUSED: [0.64, 0.61, 0.51]})


def test_csv_uses_fixed_float_format(tmp_path):
    path = write_csv(_sweep(), tmp_path / "nested" / "sweep.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iou,image_only,fused"
    assert lines[1] == "0.300000,0.640000,0.640000"
    assert b"\r\n" not in path.read_bytes()


def test_json_is_sorted(tmp_path):
    path = write_json({"b": 1, "a": {"d": 2, "c": 3}}, tmp_path / "x.json")
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": {"c": 3, "d": 2}, "b": 1}


def test_sweep_chart_is_stable(tmp_path):
    a = plot_sweep(_sweep(), tmp_path / "a.svg")
    b = plot_sweep(_sweep(), tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()
    svg = a.read_text()
    assert "<svg" in svg
    assert "image + audio (fused)" in svg
