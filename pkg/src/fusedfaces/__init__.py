"""Face recognition on fused visual/thermal images.

Pipeline: pixel-weighted fusion -> eigenface projection -> RBF network
classification, plus an evaluation harness for the per-class genuine/impostor
test protocol.
"""

__version__ = "0.1.0"

from .eigenspace import EigenSelection, Eigenspace, build_eigenspace, jacobi_eigen, project, reconstruct
from .fusion import FusionWeights, fuse, fuse_dataset
from .harness import EvaluationReport, SplitPlan, evaluate, make_split, render_report
from .imageio import Dataset, DatasetEntry, GrayImage, generate_synthetic_dataset, load_manifest, load_pgm, save_pgm
from .rbfnet import RbfConfig, RbfModel, classify, kmeans, train_rbf

__all__ = [
    "Dataset", "DatasetEntry", "EigenSelection", "Eigenspace", "EvaluationReport", "FusionWeights",
    "GrayImage", "RbfConfig", "RbfModel", "SplitPlan", "build_eigenspace", "classify", "evaluate",
    "fuse", "fuse_dataset", "generate_synthetic_dataset", "jacobi_eigen", "kmeans", "load_manifest",
    "load_pgm", "make_split", "project", "reconstruct", "render_report", "save_pgm", "train_rbf",
]
