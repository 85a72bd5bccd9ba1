"""Pedestrian trajectory prediction with a density-adaptive collision loss.

Social LSTM forecasting on a small reverse-mode autodiff engine, plus the
data pipeline, metrics and a synthetic crowd generator to exercise them.
"""

from .errors import CrowdcastError
from .geometry import DEFAULT_RADIUS, Position
from .loss import LossConfig, batch_loss, collision_penalty, composite_loss, window_average_radius
from .metrics import ade_metric, col_scene, collision_rate, fde_metric, metrics_report
from .model import ModelConfig, SocialPoolingConfig, TrajectoryModel
from .pipeline import Scene, SplitSpec, classify_density, prepare_datasets, slice_trajectory
from .synth import SynthConfig, heterogeneous_configs, synthesize_crowd, synthesize_mixture
from .train import TrainConfig, evaluate, fit

__version__ = "0.1.0"
