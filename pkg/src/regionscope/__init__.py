"""Linear-region tessellations of small ReLU networks.

Train MLPs under supervised, contrastive and self-distillation objectives,
extract the exact partition of a 2-D input slice into linear regions and
measure the regions' number, area, eccentricity and boundary counts.
"""
from .errors import (
    ArgumentError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateError,
    FormatError,
    NumericError,
    RegionScopeError,
    ShapeError,
    TruncatedFileError,
)
from .net import ActivationPattern, AffineMap, Layer, MlpNetwork, forward, forward_batch, init_mlp, region_affine
from .plane import PlaneEmbedding, make_plane, restrict_to_plane
from .regions import RegionSet, aggregate, extract_exact, extract_grid
from .snapshot import load_network, save_network

__version__ = "0.1.0"

__all__ = [
    "ActivationPattern",
    "AffineMap",
    "ArgumentError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateError",
    "FormatError",
    "Layer",
    "MlpNetwork",
    "NumericError",
    "PlaneEmbedding",
    "RegionScopeError",
    "RegionSet",
    "ShapeError",
    "TruncatedFileError",
    "aggregate",
    "extract_exact",
    "extract_grid",
    "forward",
    "forward_batch",
    "init_mlp",
    "load_network",
    "make_plane",
    "region_affine",
    "restrict_to_plane",
    "save_network",
]
