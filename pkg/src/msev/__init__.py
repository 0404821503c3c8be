"""Phase-field microstructure evolution: solvers, datasets, and evaluation."""

from . import dataset, graingrowth, metrics, spinodal, tensorio
from .dataset import ClipDataset, ClipSpec, RolloutSchedule, build_clips, \
    count_windows, make_rollout_schedule, pad_input
from .graingrowth import GrainParams, OrderParameterSet, simulate_grain_growth
from .metrics import EvalReport, SegParams, rmse, score_prediction, segment_grains, ssim
from .spinodal import ConcentrationField, SpinodalParams, simulate_spinodal
from .tensorio import Trajectory, export_image, read_tensor, write_tensor

__all__ = [
    "dataset", "graingrowth", "metrics", "spinodal", "tensorio",
    "ClipDataset", "ClipSpec", "RolloutSchedule", "build_clips",
    "count_windows", "make_rollout_schedule", "pad_input",
    "GrainParams", "OrderParameterSet", "simulate_grain_growth",
    "EvalReport", "SegParams", "rmse", "score_prediction", "segment_grains", "ssim",
    "ConcentrationField", "SpinodalParams", "simulate_spinodal",
    "Trajectory", "export_image", "read_tensor", "write_tensor",
]

__version__ = "0.1.0"
