"""Spectral patch selection and patch mixing for node classification on
heterophilic graphs.
"""

from .errors import (
    DegenerateError,
    FormatError,
    HeroFilterError,
    NumericalError,
    ParamError,
    ShapeError,
    SingularSpectrumError,
    SizeError,
    StateError,
)
from .graph import Graph, NormalizedAdjacency, load_dataset, normalize_adjacency, save_dataset
from .heterophily import check_prop1, node_heterophily, spectral_heterophily, theorem_bound
from .mixer import MixerModel, init_mixer, mixer_backward, mixer_forward
from .patcher import PatchSet, fast_patch, spectral_patch, top_p_columns
from .spectral import PolyFilter, SpectralDecomposition, eigendecompose, relevance_matrix
from .synth import SynthSpec, synth_graph
from .training import TrainConfig, TrainReport, evaluate, train

__version__ = "0.1.0"
