"""Differentiable linear dynamical operators for block-oriented system identification."""
from .autodiff import Graph, GradCheckReport, grad_check
from .errors import (ConfigError, DatasetFormatError, GraphError, NumericalRangeError, ShapeError,
                     TrainingDivergedError)
from .lti import GBlockParams, GradientBundle, MimoOperator, gblock_backward, gblock_forward
from .model import Model, ModelConfig, parse_model_config
from .signal_core import MulCounter, TransferFunction, convolve, cross_correlate, flip, iir_filter
from .training import AdamState, MetricsReport, TrainConfig, adam_step, fit_index, rmse, train

__version__ = "0.1.0"
