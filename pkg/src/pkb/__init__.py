"""Pathway-based kernel boosting for binary classification of expression data."""

from .boosting import (
    FitConfig,
    PKBModel,
    fit,
    fit_with_cv,
    load_model,
    pathway_weights,
    predict,
    save_model,
    select_T_by_cv,
)
from .data import (
    ExpressionDataset,
    LabelVector,
    PathwayCollection,
    load_expression_csv,
    load_gmt,
    load_labels,
)
from .errors import ConvergenceError, DataFormatError, PKBError, StratificationError
from .kernels import KernelSet, KernelSpec, build_kernel_set

__version__ = "0.1.0"
