"""Relation alignment modules for tracking-by-detection association."""
from .contrastive import TrainConfig, train_ram
from .data import ScenarioSpec, generate_scenario, load_model, read_mot, save_model
from .evaluation import MetricsReport, evaluate
from .geometry import BBox, FrameSize, intersection_rate, iou, mark_box
from .ram import RamKind, RamModel
from .records import Detection, Trajectory
from .tracking import Tracker, TrackerConfig, track_sequence

__version__ = "0.1.0"

__all__ = [
    "BBox", "Detection", "FrameSize", "MetricsReport", "RamKind", "RamModel",
    "ScenarioSpec", "TrainConfig", "Tracker", "TrackerConfig", "Trajectory",
    "evaluate", "generate_scenario", "intersection_rate", "iou", "load_model",
    "mark_box", "read_mot", "save_model", "track_sequence", "train_ram",
]
