"""Stacked hourglass spatio-temporal graph convolutional networks.

A self-contained numpy-backed library for action segmentation over
spatio-temporal graphs with heterogeneous node features, arbitrary temporal
edge connections, and an encoder-decoder hourglass architecture, together
with training, sliding-window inference and F1/mAP evaluation.
"""

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NumericalError,
    StgcnError,
    ValidationError,
)
from .graph import (
    AdjacencyPair,
    FeatureCluster,
    NodeTrack,
    StgSequence,
    apply_deformation,
    build_adjacency,
    load_stgs,
    save_stgs,
)
from .layers import normalize_adjacency, stgcn_layer, stgcn_layer_grid
from .model import ModelConfig, StgcnModel
from .synth import SynthConfig, generate_dataset, synth_generate
from .tensor import Tape, Tensor, backward
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
