"""Outer cross-validation: test error and averaged pathway weights.

Each outer fold serves once as the test set. On the remaining samples the
stopping iteration is chosen by the inner cross-validation and the model is
refit for that many iterations before scoring the held-out fold.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boosting import (
    FitConfig,
    _model_from_state,
    resolve_lambda,
    run_boosting,
    select_T_from_kernels,
    stratified_folds,
)
from .data import ExpressionDataset, LabelVector, PathwayCollection
from .kernels import KernelSet, build_kernel_set
from .solvers import log_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    lam: float
    T_star: int
    n_iterations: int
    test_error: float
    test_loss: float
    weights: np.ndarray


@dataclass(frozen=True)
class EvaluationResult:
    pathway_names: tuple[str, ...]
    folds: tuple[FoldResult, ...]
    loss_histories: tuple[tuple[float, ...], ...]

    @property
    def mean_error(self) -> float:
        return float(np.mean([f.test_error for f in self.folds]))

    @property
    def mean_weights(self) -> np.ndarray:
        return np.mean([f.weights for f in self.folds], axis=0)

    def ranked_weights(self) -> list[tuple[str, float]]:
        pairs = list(zip(self.pathway_names, self.mean_weights.tolist()))
        return sorted(pairs, key=lambda p: (-p[1], p[0]))


def evaluate(data: ExpressionDataset, pathways: PathwayCollection, y: LabelVector,
             config: FitConfig, outer_folds: int = 3,
             kernels: KernelSet | None = None) -> EvaluationResult:
    """Run the nested protocol; every fit's training-loss history is kept."""
    yv = y.y if isinstance(y, LabelVector) else np.asarray(y, dtype=float)
    if kernels is None:
        kernels = build_kernel_set(data, pathways, config.kernel)
    folds, histories = [], []
    for i, (tr, te) in enumerate(stratified_folds(yv, outer_folds, config.seed), start=1):
        train_k = kernels.subset(tr)
        lam = resolve_lambda(train_k, yv[tr], config)
        cv = select_T_from_kernels(train_k, yv[tr], lam, config)
        histories.extend(cv.loss_histories)
        state, _ = run_boosting(train_k, yv[tr], lam, config.penalty, config.nu, cv.T_star,
                                kkt_tol=config.l1_kkt_tol, log_prefix=f"outer fold {i}: ")
        histories.append(tuple(state.loss_history))
        cross = kernels.subset(tr, te)
        scores = state.C + sum(cross[m].T @ state.beta_acc[m] for m in range(len(cross))
                               if np.any(state.beta_acc[m]))
        labels = np.where(scores >= 0, 1.0, -1.0)
        model = _model_from_state(state, data.subset(tr), pathways, config, lam)
        result = FoldResult(
            fold=i, n_train=len(tr), n_test=len(te), lam=lam, T_star=cv.T_star,
            n_iterations=state.t, test_error=float(np.mean(labels != yv[te])),
            test_loss=log_loss(yv[te], scores), weights=model.weights,
        )
        logger.info("outer fold %d: lambda %.12g, T* %d, test error %.12g", i, lam, cv.T_star,
                    result.test_error)
        folds.append(result)
    return EvaluationResult(tuple(pathways.names), tuple(folds), tuple(histories))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_evaluation(result: EvaluationResult, out_dir) -> tuple[Path, Path]:
    """Write ``evaluation_folds.csv`` (with a final ``mean`` row) and ``mean_weights.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds_path = out_dir / "evaluation_folds.csv"
    with folds_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "n_train", "n_test", "lambda", "T_star", "n_iterations",
                    "test_error", "test_loss"])
        for f in result.folds:
            w.writerow([f.fold, f.n_train, f.n_test, _fmt(f.lam), f.T_star, f.n_iterations,
                        _fmt(f.test_error), _fmt(f.test_loss)])
        w.writerow(["mean", "", "", "", "", "", _fmt(result.mean_error),
                    _fmt(np.mean([f.test_loss for f in result.folds]))])
    weights_path = out_dir / "mean_weights.csv"
    write_weights(result.ranked_weights(), weights_path)
    return folds_path, weights_path


def write_weights(pairs, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pathway", "weight"])
        for name, weight in pairs:
            w.writerow([name, _fmt(weight)])
