"""Pathway-based kernel boosting: training loop, model and prediction.

Each iteration fits, inside every pathway, a kernel expansion plus an
intercept to a penalized second-order model of the log loss, keeps the
pathway whose fit reaches the lowest penalized loss, and moves along it
with an exact line search shrunk by the learning rate ``nu``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .data import ExpressionDataset, LabelVector, PathwayCollection
from .errors import ConvergenceError, DataFormatError, StratificationError
from .kernels import KernelSet, KernelSpec, build_cross_kernel, build_kernel_set, pathway_slices
from .solvers import (
    BaseLearnerFit,
    CenteredKernel,
    DerivativeState,
    centered_eta,
    compute_derivatives,
    lambda_max,
    line_search,
    log_loss,
    normalize_penalty,
    recover_intercept,
    regularized_loss,
    solve_l1,
    solve_l2,
    solve_l2_kernel,
    weighted_centering,
)

logger = logging.getLogger(__name__)

AUTO = "auto"
AUTO_LAMBDA_QUANTILE_FACTOR = 0.2
AUTO_LAMBDA_FALLBACK = 1e-3
MODEL_FORMAT = "pkb-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Training settings.

    ``lam`` is a positive float or ``"auto"``; the resolved value is then
    multiplied by ``lambda_factor``. ``T`` is the iteration budget (the
    scan maximum when the stopping iteration is picked by cross-validation).
    """

    penalty: str = "L1"
    lam: float | str = AUTO
    nu: float = 0.05
    T: int = 500
    cv_folds_inner: int = 3
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    lambda_grid_factors: tuple[float, ...] = (1 / 25, 1 / 5, 1.0, 5.0, 25.0)
    lambda_factor: float = 1.0
    l1_kkt_tol: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "penalty", normalize_penalty(self.penalty))
        if isinstance(self.lam, str):
            if self.lam.lower() != AUTO:
                raise ValueError(f"lambda must be a positive number or 'auto', got {self.lam!r}")
            object.__setattr__(self, "lam", AUTO)
        elif not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.cv_folds_inner < 2:
            raise ValueError("at least 2 inner folds are required")
        if not self.lambda_factor > 0:
            raise ValueError("lambda_factor must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        d["lambda_grid_factors"] = list(self.lambda_grid_factors)
        return d


@dataclass
class BoostState:
    """Mutable state of the training loop.

    ``loss_history[0]`` is the loss of the constant start, entry ``t`` the
    loss after iteration ``t``.
    """

    F: np.ndarray
    beta_acc: list[np.ndarray]
    C: float
    t: int = 0
    loss_history: list[float] = field(default_factory=list)
    selection_history: list[int] = field(default_factory=list)
    stopped_early: bool = False


@dataclass(frozen=True)
class PKBModel:
    """A trained classifier.

    ``betas`` and ``train_slices`` are keyed by pathway position and only
    hold pathways that were selected at least once.
    """

    pathway_names: tuple[str, ...]
    pathway_genes: dict[int, tuple[str, ...]]
    train_slices: dict[int, np.ndarray]
    betas: dict[int, np.ndarray]
    intercept: float
    kernel: KernelSpec
    lam: float
    config: dict
    n_iterations: int
    loss_history: tuple[float, ...]
    selection_history: tuple[int, ...]
    train_scores: np.ndarray | None = None

    @property
    def weights(self) -> np.ndarray:
        w = np.zeros(len(self.pathway_names))
        for m, b in self.betas.items():
            w[m] = float(np.linalg.norm(b))
        return w


def init_intercept(y) -> float:
    """Constant minimizing the mean log loss: log(N+ / N-)."""
    y = np.asarray(y.y if isinstance(y, LabelVector) else y)
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataFormatError("both classes are needed to fit the constant start")
    return math.log(n_pos / n_neg)


def _labels(y) -> np.ndarray:
    return np.asarray(y.y if isinstance(y, LabelVector) else y, dtype=float)


def _kernel_list(kernels) -> list[np.ndarray]:
    return list(kernels.matrices) if isinstance(kernels, KernelSet) else list(kernels)


def auto_lambda(deriv: DerivativeState, kernels, penalty: str = "L1") -> float:
    """Penalty scale from the derivatives at the constant start.

    For every pathway, lambda_max is the smallest L1 penalty that zeroes its
    solution; the result is 0.2 times the median over pathways (1e-3 when
    that median is 0). The same value serves both penalties.
    """
    normalize_penalty(penalty)
    eta_t = centered_eta(deriv.eta, deriv.w)
    lmax = [lambda_max(weighted_centering(deriv.eta, deriv.w, K)[1], eta_t)
            for K in _kernel_list(kernels)]
    return lambda_from_maxima(lmax)


def lambda_from_maxima(lmax: Sequence[float]) -> float:
    med = float(np.median(lmax))
    return AUTO_LAMBDA_QUANTILE_FACTOR * med if med > 0 else AUTO_LAMBDA_FALLBACK


def _solve_pathway(m, K, deriv, eta_t, lam, penalty, K_squared, kkt_tol,
                   warm_support=None) -> BaseLearnerFit:
    if penalty == "L1":
        try:
            beta = solve_l1(CenteredKernel(K, deriv.w), eta_t, lam, kkt_tol=kkt_tol,
                            warm_support=warm_support)
        except ConvergenceError as exc:
            exc.pathway = m
            raise
    elif K_squared is None:
        beta = solve_l2(weighted_centering(deriv.eta, deriv.w, K)[1], eta_t, lam)
    else:
        beta = solve_l2_kernel(K, K_squared, deriv.w, eta_t, lam)
    c = recover_intercept(deriv.eta, deriv.w, K, beta)
    return BaseLearnerFit(m, beta, c, regularized_loss(beta, c, deriv, K, lam, penalty))


def select_base_learner(deriv: DerivativeState, kernels, lam: float, penalty: str,
                        squared_kernels=None, kkt_tol: float = 1e-7,
                        supports: dict | None = None) -> BaseLearnerFit:
    """Best single-pathway fit of the penalized working loss.

    Ties go to the lowest pathway index. ``squared_kernels`` (``K @ K``
    per pathway) speeds up the L2 solves. ``supports``, when given, maps
    pathway to the last L1 support; it seeds the working set and is updated.
    """
    penalty = normalize_penalty(penalty)
    eta_t = centered_eta(deriv.eta, deriv.w)
    best = None
    for m, K in enumerate(_kernel_list(kernels)):
        sq = None if squared_kernels is None else squared_kernels[m]
        warm = None if supports is None else supports.get(m)
        fit = _solve_pathway(m, K, deriv, eta_t, lam, penalty, sq, kkt_tol, warm)
        if supports is not None and penalty == "L1":
            supports[m] = np.flatnonzero(fit.beta)
        if best is None or fit.regularized_loss < best.regularized_loss:
            best = fit
    return best


def run_boosting(kernels, y, lam: float, penalty: str, nu: float, T: int,
                 eval_blocks=None, y_eval=None, kkt_tol: float = 1e-7,
                 log_prefix: str = "", warm_start: bool = True
                 ) -> tuple[BoostState, np.ndarray | None]:
    """Core loop on precomputed kernels.

    ``eval_blocks`` optionally gives, per pathway, the train-by-held-out
    kernel block; the held-out log loss is then returned for iterations
    1..T (frozen at its last value after an early stop). With
    ``warm_start`` each pathway's L1 solve starts its working set from the
    support it had in the previous iteration; the optimum is the same.
    """
    mats = _kernel_list(kernels)
    y = _labels(y)
    penalty = normalize_penalty(penalty)
    n = y.size
    f0 = init_intercept(y)
    state = BoostState(F=np.full(n, f0), beta_acc=[np.zeros(n) for _ in mats], C=f0)
    state.loss_history.append(log_loss(y, state.F))
    squared = [K @ K for K in mats] if penalty == "L2" else None
    supports: dict[int, np.ndarray] | None = {} if warm_start else None
    track = eval_blocks is not None
    if track:
        y_eval = _labels(y_eval)
        F_eval = np.full(y_eval.size, f0)
        eval_curve = np.empty(T)
    for t in range(T):
        deriv = compute_derivatives(y, state.F)
        fit = select_base_learner(deriv, mats, lam, penalty, squared, kkt_tol, supports)
        if not np.any(fit.beta):
            logger.warning("%siteration %d: all-zero coefficients in every pathway; stopping",
                           log_prefix, t + 1)
            state.stopped_early = True
            if track:
                eval_curve[t:] = log_loss(y_eval, F_eval)
            break
        m = fit.pathway_index
        f_vals = mats[m] @ fit.beta + fit.intercept
        step = nu * line_search(y, state.F, f_vals)
        state.F = state.F + step * f_vals
        state.beta_acc[m] = state.beta_acc[m] + step * fit.beta
        state.C += step * fit.intercept
        state.t = t + 1
        state.loss_history.append(log_loss(y, state.F))
        state.selection_history.append(m)
        if track:
            F_eval = F_eval + step * (eval_blocks[m].T @ fit.beta + fit.intercept)
            eval_curve[t] = log_loss(y_eval, F_eval)
        logger.info("%siteration %d loss %.12g pathway %d step %.12g", log_prefix, t + 1,
                     state.loss_history[-1], m, step)
    return state, (eval_curve if track else None)


def resolve_lambda(kernels, y, config: FitConfig) -> float:
    if config.lam == AUTO:
        y = _labels(y)
        deriv = compute_derivatives(y, np.full(y.size, init_intercept(y)))
        base = auto_lambda(deriv, kernels, config.penalty)
        logger.info("automatic lambda %.12g (factor %g)", base, config.lambda_factor)
    else:
        base = float(config.lam)
    return base * config.lambda_factor


def _model_from_state(state: BoostState, data: ExpressionDataset, pathways: PathwayCollection,
                      config: FitConfig, lam: float) -> PKBModel:
    slices = pathway_slices(data, pathways)
    selected = sorted(set(state.selection_history))
    genes = {m: tuple(data.gene_ids[j] for j in pathways[m].gene_indices) for m in selected}
    return PKBModel(
        pathway_names=tuple(pathways.names),
        pathway_genes=genes,
        train_slices={m: slices[m].copy() for m in selected},
        betas={m: state.beta_acc[m].copy() for m in selected},
        intercept=float(state.C),
        kernel=config.kernel,
        lam=float(lam),
        config=config.to_dict(),
        n_iterations=state.t,
        loss_history=tuple(state.loss_history),
        selection_history=tuple(state.selection_history),
        train_scores=state.F.copy(),
    )


def fit(data: ExpressionDataset, pathways: PathwayCollection, y: LabelVector,
        config: FitConfig, kernels: KernelSet | None = None) -> PKBModel:
    """Train for exactly ``config.T`` iterations (fewer on an all-zero stop)."""
    _check_aligned(data, y)
    if kernels is None:
        kernels = build_kernel_set(data, pathways, config.kernel)
    lam = resolve_lambda(kernels, y, config)
    state, _ = run_boosting(kernels, y, lam, config.penalty, config.nu, config.T,
                            kkt_tol=config.l1_kkt_tol)
    logger.info("fit finished after %d iterations, training loss %.12g", state.t,
                state.loss_history[-1])
    return _model_from_state(state, data, pathways, config, lam)


def _check_aligned(data, y):
    if len(_labels(y)) != data.n_samples:
        raise DataFormatError(f"{len(_labels(y))} labels for {data.n_samples} samples")


def stratified_folds(y, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded stratified (train, held-out) index pairs."""
    y = _labels(y)
    counts = [int(np.sum(y == 1)), int(np.sum(y == -1))]
    if min(counts) < k:
        raise StratificationError(
            f"cannot form {k} stratified folds: smallest class has {min(counts)} samples")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for train, test in splitter.split(np.zeros(y.size), y):
        for part in (train, test):
            if np.unique(y[part]).size < 2:
                raise StratificationError("a cross-validation fold contains a single class")
        folds.append((train, test))
    return folds


@dataclass(frozen=True)
class CVResult:
    T_star: int
    mean_curve: np.ndarray
    fold_curves: np.ndarray
    loss_histories: tuple[tuple[float, ...], ...]


def select_T_from_kernels(kernels, y, lam: float, config: FitConfig) -> CVResult:
    """Inner cross-validation on precomputed kernels of the training set."""
    y = _labels(y)
    full = KernelSet(tuple(_kernel_list(kernels)), config.kernel,
                     kernels.names if isinstance(kernels, KernelSet) else ())
    curves, histories = [], []
    for i, (tr, va) in enumerate(stratified_folds(y, config.cv_folds_inner, config.seed)):
        state, curve = run_boosting(full.subset(tr), y[tr], lam, config.penalty, config.nu,
                                    config.T, eval_blocks=full.subset(tr, va), y_eval=y[va],
                                    kkt_tol=config.l1_kkt_tol, log_prefix=f"inner fold {i + 1}: ")
        curves.append(curve)
        histories.append(tuple(state.loss_history))
    return cv_result_from_curves(np.array(curves), tuple(histories))


def cv_result_from_curves(curves: np.ndarray, histories=()) -> CVResult:
    mean_curve = np.mean(curves, axis=0)
    return CVResult(int(np.argmin(mean_curve)) + 1, mean_curve, curves, histories)


def argmin_iteration(curve) -> int:
    """1-based position of the smallest value, earliest on ties."""
    return int(np.argmin(np.asarray(curve))) + 1


def select_T_by_cv(data: ExpressionDataset, pathways: PathwayCollection, y: LabelVector,
                   config: FitConfig, kernels: KernelSet | None = None) -> int:
    _check_aligned(data, y)
    if kernels is None:
        kernels = build_kernel_set(data, pathways, config.kernel)
    lam = resolve_lambda(kernels, y, config)
    return select_T_from_kernels(kernels, y, lam, config).T_star


@dataclass(frozen=True)
class CVFit:
    model: PKBModel
    T_star: int
    cv: CVResult
    lam: float


def fit_with_cv(data: ExpressionDataset, pathways: PathwayCollection, y: LabelVector,
                config: FitConfig, kernels: KernelSet | None = None) -> CVFit:
    """Choose T* by inner cross-validation, then refit on all data for T* iterations.

    Lambda is resolved once on the full training data and shared by the
    inner folds and the refit.
    """
    _check_aligned(data, y)
    if kernels is None:
        kernels = build_kernel_set(data, pathways, config.kernel)
    lam = resolve_lambda(kernels, y, config)
    cv = select_T_from_kernels(kernels, y, lam, config)
    logger.info("selected T* = %d (held-out loss %.12g)", cv.T_star, cv.mean_curve[cv.T_star - 1])
    refit = replace(config, lam=lam, lambda_factor=1.0, T=cv.T_star)
    state, _ = run_boosting(kernels, y, lam, refit.penalty, refit.nu, refit.T,
                            kkt_tol=refit.l1_kkt_tol)
    model = _model_from_state(state, data, pathways, refit, lam)
    return CVFit(model, cv.T_star, cv, lam)


def predict(model: PKBModel, new_data: ExpressionDataset) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``sum_m k_m(x)' beta_m + C`` and labels ``sign(score)`` (0 maps to +1)."""
    index = new_data.gene_index()
    scores = np.full(new_data.n_samples, model.intercept)
    for m in sorted(model.betas):
        missing = [g for g in model.pathway_genes[m] if g not in index]
        if missing:
            raise DataFormatError(f"gene {missing[0]!r} required by pathway "
                                  f"{model.pathway_names[m]!r} is missing from the new data")
        cols = [index[g] for g in model.pathway_genes[m]]
        cross = build_cross_kernel(model.train_slices[m], new_data.values[:, cols], model.kernel)
        scores = scores + cross.T @ model.betas[m]
    labels = np.where(scores >= 0, 1, -1)
    return scores, labels


def pathway_weights(model: PKBModel) -> list[tuple[str, float]]:
    """(name, ||beta_m||_2) sorted by weight descending, then by name."""
    pairs = list(zip(model.pathway_names, model.weights.tolist()))
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def save_model(model: PKBModel, path) -> None:
    """Write the model as a versioned JSON document (see README for the layout)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kernel": model.kernel.to_dict(),
        "intercept": model.intercept,
        "lambda": model.lam,
        "pathway_names": list(model.pathway_names),
        "selected": [
            {
                "index": m,
                "genes": list(model.pathway_genes[m]),
                "beta": _sparse(model.betas[m]),
                "train_values": model.train_slices[m].tolist(),
            }
            for m in sorted(model.betas)
        ],
        "training": {
            "config": model.config,
            "n_iterations": model.n_iterations,
            "loss_history": list(model.loss_history),
            "selection_history": list(model.selection_history),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _sparse(v: np.ndarray) -> dict:
    nz = np.flatnonzero(v)
    return {"length": int(v.size), "index": nz.tolist(), "value": v[nz].tolist()}


def _dense(d: dict) -> np.ndarray:
    v = np.zeros(int(d["length"]))
    v[np.asarray(d["index"], dtype=int)] = d["value"]
    return v


def load_model(path) -> PKBModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read model file {path}: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise DataFormatError(f"unsupported model version {doc.get('version')!r}")
    selected = doc["selected"]
    train = doc["training"]
    n_train = selected[0]["beta"]["length"] if selected else 0
    return PKBModel(
        pathway_names=tuple(doc["pathway_names"]),
        pathway_genes={s["index"]: tuple(s["genes"]) for s in selected},
        train_slices={s["index"]: np.array(s["train_values"], dtype=float)
                      .reshape(n_train, len(s["genes"])) for s in selected},
        betas={s["index"]: _dense(s["beta"]) for s in selected},
        intercept=float(doc["intercept"]),
        kernel=KernelSpec(**doc["kernel"]),
        lam=float(doc["lambda"]),
        config=train["config"],
        n_iterations=int(train["n_iterations"]),
        loss_history=tuple(train["loss_history"]),
        selection_history=tuple(train["selection_history"]),
    )
