"""Spatial, temporal and ensemble attention models for daily snow water-equivalent."""
from .autodiff import GraphError, ShapeError, Tensor, backward, grad_check, no_grad
from .data import SeasonDataset, SyntheticConfig, build_dataset, generate_synthetic
from .evaluation import build_report, nse
from .layers import EncoderConfig, TransformerEncoder
from .models import (LSTMBaseline, LinearRegressionModel, SpatialAttentionModel,
                     SpatialModelConfig, TemporalAttentionModel, TemporalModelConfig,
                     ensemble_predict)
from .training import TrainConfig, predict, train

__version__ = "0.1.0"
