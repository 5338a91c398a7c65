"""Fair node classification on graphs with a permutation-test adversary."""
from .graph_data import GraphDataset, Split, load_manifest, make_split
from .metrics import MetricsReport, evaluate
from .trainer import TrainConfig, TrainResult, run_seed, train

__all__ = ["GraphDataset", "Split", "load_manifest", "make_split", "MetricsReport", "evaluate",
           "TrainConfig", "TrainResult", "run_seed", "train"]
__version__ = "0.1.0"
