"""graphshed: training-set reduction and partitioning through a
class-pattern-weighted cluster graph, with a built-in SMO classifier,
a nearest-hypothesis test router, and a master/worker distribution
layer for the resulting partitions.
"""

from .data import (
    DataFormatError,
    Dataset,
    LabeledPoint,
    SplitSpec,
    gen_dataset_one,
    gen_dataset_two,
    load_csv,
    load_libsvm_format,
    save_csv,
    save_libsvm_format,
    scale_minmax,
    split,
)
from .clustering import Cluster, ClusteringResult, cluster, kmeanspp_seed, nominal_vc
from .ann import KnnResult, NNIndex, build, knn_search
from .knitting import (
    HeuristicParams,
    PatternGraph,
    compute_reach,
    edge_weight,
    ens_iteration,
    knit,
    reduce_search_space,
    sns,
)
from .shedding import RelevantSet, expand, imbalance_sd, relevant_set, shed
from .clubbing import (
    CoarsenState,
    Matching,
    Partition,
    PartitionSet,
    club,
    contract,
    graph_cost,
    kink_detected,
    pwm,
)
from .training import (
    ClassifierSpec,
    EnsembleModel,
    ReductionReport,
    TrainedModel,
    accuracy,
    fit_partition,
    load_model,
    predict,
    save_model,
    train,
    train_gch_serial,
    train_gsh,
)
from .routing import AccuracyReport, Router, build_router, ensemble_predict
from . import bench, distnet

__version__ = "0.1.0"
