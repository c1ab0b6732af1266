"""Deformable dynamic convolution network for grid traffic forecasting.

A numpy-backed library with a tape-based reverse-mode autodiff core, the
DDCN operators (deformable dynamic convolution, 3D involution, patch
embed/back), an encoder-decoder model, a full train/eval pipeline on grid
traffic data, metrics with error-map export, and an analytic cost profiler.
"""

from . import data, metrics, model, numerics, ops, profile, train
from .data import SynthSpec, TrafficDataset, load_dataset, make_windows, save_dataset, \
    split, synth_traffic
from .metrics import MetricsReport, compute_metrics, error_map
from .model import DDCN, ModelConfig
from .numerics import FlopCounter, Param, Tape, Tensor, backward, load_checkpoint, \
    save_checkpoint
from .profile import cost_report, count_flops, count_params, search_reference_configs
from .train import AdamW, TrainConfig, gradcheck_model, gradcheck_ops, l1_loss, train_loop

__version__ = "0.1.0"
