"""Synthetic pathway data with known relevant pathways.

Genes are i.i.d. standard normal and grouped into consecutive disjoint
blocks. The log odds depend on the first few blocks only:

* model 1: ``2 a1 + 3 a2 + exp(0.8 b1 + 0.8 b2) + 4 c1 c2``
* model 2: ``4 sin(a1 + a2) + 3 |b1 - b2| + 2 c1^2 - 2 c2^2``
* model 3: ``2 * sum of the Euclidean norms of blocks 1..10``

where ``a``, ``b``, ``c`` are the first two genes of blocks 1, 2 and 3.
Labels come from the log odds after subtracting their sample median.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ExpressionDataset, LabelVector, PathwayCollection

OUTCOME_RULES = ("bernoulli_logistic", "deterministic_sign")
RELEVANT_COUNT = {1: 3, 2: 3, 3: 10}


@dataclass(frozen=True)
class SimSpec:
    model_id: int = 1
    M_total: int = 50
    pathway_size: int = 5
    N: int = 900
    seed: int = 0
    outcome_rule: str = "bernoulli_logistic"

    def __post_init__(self):
        if self.model_id not in RELEVANT_COUNT:
            raise ValueError(f"model_id must be 1, 2 or 3, got {self.model_id!r}")
        if self.outcome_rule not in OUTCOME_RULES:
            raise ValueError(f"outcome_rule must be one of {OUTCOME_RULES}")
        if self.M_total < RELEVANT_COUNT[self.model_id]:
            raise ValueError(f"model {self.model_id} needs at least "
                             f"{RELEVANT_COUNT[self.model_id]} pathways")
        if self.model_id in (1, 2) and self.pathway_size < 2:
            raise ValueError("models 1 and 2 need at least 2 genes per pathway")
        if self.pathway_size < 1 or self.N < 2:
            raise ValueError("pathway_size must be >= 1 and N >= 2")

    @property
    def relevant(self) -> list[int]:
        return list(range(RELEVANT_COUNT[self.model_id]))


@dataclass(frozen=True)
class SimulatedData:
    dataset: ExpressionDataset
    pathways: PathwayCollection
    labels: LabelVector
    relevant: list[int]
    log_odds: np.ndarray


def true_log_odds(x, model_id: int, pathway_size: int = 5) -> np.ndarray | float:
    """Log odds of one sample (1-D input) or of every row of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)

    def gene(m, j):
        return X[:, m * pathway_size + j]

    if model_id == 1:
        F = (2 * gene(0, 0) + 3 * gene(0, 1) + np.exp(0.8 * gene(1, 0) + 0.8 * gene(1, 1))
             + 4 * gene(2, 0) * gene(2, 1))
    elif model_id == 2:
        F = (4 * np.sin(gene(0, 0) + gene(0, 1)) + 3 * np.abs(gene(1, 0) - gene(1, 1))
             + 2 * gene(2, 0) ** 2 - 2 * gene(2, 1) ** 2)
    elif model_id == 3:
        blocks = X[:, :10 * pathway_size].reshape(X.shape[0], 10, pathway_size)
        F = 2 * np.linalg.norm(blocks, axis=2).sum(axis=1)
    else:
        raise ValueError(f"model_id must be 1, 2 or 3, got {model_id!r}")
    return float(F[0]) if single else F


def generate(spec: SimSpec) -> SimulatedData:
    rng = np.random.default_rng(spec.seed)
    p = spec.M_total * spec.pathway_size
    X = rng.standard_normal((spec.N, p))
    F = true_log_odds(X, spec.model_id, spec.pathway_size)
    centered = F - np.median(F)
    if spec.outcome_rule == "bernoulli_logistic":
        y = np.where(rng.random(spec.N) < expit(centered), 1.0, -1.0)
    else:
        y = np.where(centered >= 0, 1.0, -1.0)
    width = len(str(p))
    dataset = ExpressionDataset(
        X,
        tuple(f"g{j + 1:0{width}d}" for j in range(p)),
        tuple(f"s{i + 1:0{len(str(spec.N))}d}" for i in range(spec.N)),
    )
    pw_width = max(3, len(str(spec.M_total)))
    pathways = PathwayCollection.from_lists(
        [(f"pw{m + 1:0{pw_width}d}", range(m * spec.pathway_size, (m + 1) * spec.pathway_size))
         for m in range(spec.M_total)],
        p,
    )
    return SimulatedData(dataset, pathways, LabelVector(y), spec.relevant, F)
