"""
Rail defect fusion - image/audio upstream fusion experiments on synthetic scenes.
"""

__version__ = "0.2.0"

from .data_collector import SceneDataCollector
from .analyzer import FusionAnalyzer

__all__ = ["SceneDataCollector", "FusionAnalyzer"]
