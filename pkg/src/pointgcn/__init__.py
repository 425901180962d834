"""Fast graph convolutions for point clouds: shared KNN pools and shuffled edge convolutions."""

from .geometry import (
    PointCloud,
    SortedNeighborhood,
    neighborhood_centroid_distance,
    neighborhood_distance,
    pairwise_sq_distances,
)
from .graphconv import (
    ConvParams,
    edgeconv_baseline,
    edgeconv_shuffled,
    gather_edge_features,
    generic_graph_conv,
    sum_conv,
)
from .knn import NeighborIndex, NeighborPool, build_pool, knn_search, sample_neighbors
from .network import BlockSpec, HeadSpec, NetworkSpec, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "ConvParams",
    "HeadSpec",
    "NeighborIndex",
    "NeighborPool",
    "NetworkSpec",
    "PointCloud",
    "SortedNeighborhood",
    "TrainConfig",
    "build_pool",
    "edgeconv_baseline",
    "edgeconv_shuffled",
    "gather_edge_features",
    "generic_graph_conv",
    "knn_search",
    "neighborhood_centroid_distance",
    "neighborhood_distance",
    "pairwise_sq_distances",
    "sample_neighbors",
    "sum_conv",
]
