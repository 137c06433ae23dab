"""Per-pathway kernel matrices.

Every kernel scales by the pathway size ``p_m``: the rbf bandwidth is
``gamma = 1 / p_m`` and the polynomial and linear kernels use ``u.v / p_m``
as the inner product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .data import ExpressionDataset, PathwayCollection

KINDS = ("rbf", "polynomial", "linear")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    degree: int = 3
    scale_inner_product: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("polynomial degree must be a positive integer")

    @classmethod
    def from_name(cls, name: str) -> "KernelSpec":
        """Parse the command-line names ``rbf``, ``poly3`` (``polyD``) and ``linear``."""
        if name in ("rbf", "linear", "polynomial"):
            return cls(name)
        if name.startswith("poly") and name[4:].isdigit():
            return cls("polynomial", int(name[4:]))
        raise ValueError(f"unknown kernel {name!r}")

    @property
    def name(self) -> str:
        return f"poly{self.degree}" if self.kind == "polynomial" else self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree,
                "scale_inner_product": self.scale_inner_product}


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _evaluate(a: np.ndarray, b: np.ndarray, spec: KernelSpec, p_m: int) -> np.ndarray:
    gamma = 1.0 / p_m
    if spec.kind == "rbf":
        return np.exp(-gamma * cdist(a, b, "sqeuclidean"))
    inner = a @ b.T
    if spec.scale_inner_product:
        inner = inner * gamma
    if spec.kind == "linear":
        return inner
    return (inner + 1.0) ** spec.degree


def kernel_value(u, v, spec: KernelSpec, p_m: int | None = None) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.size} vs {v.size}")
    p_m = u.size if p_m is None else p_m
    gamma = 1.0 / p_m
    if spec.kind == "rbf":
        d = u - v
        return float(np.exp(-gamma * np.dot(d, d)))
    inner = float(np.dot(u, v)) * (gamma if spec.scale_inner_product else 1.0)
    if spec.kind == "linear":
        return inner
    return (inner + 1.0) ** spec.degree


def gram_matrix(x, spec: KernelSpec, p_m: int | None = None) -> np.ndarray:
    """Kernel matrix of one pathway slice; the lower triangle mirrors the upper."""
    x = _as_matrix(x)
    p_m = x.shape[1] if p_m is None else p_m
    k = _evaluate(x, x, spec, p_m)
    upper = np.triu(k)
    return upper + np.triu(k, 1).T


def build_cross_kernel(train_slice, new_slice, spec: KernelSpec, p_m: int | None = None):
    """Kernel values between training rows (matrix rows) and new rows (columns)."""
    train_slice = _as_matrix(train_slice)
    new_slice = _as_matrix(new_slice)
    if train_slice.shape[1] != new_slice.shape[1]:
        raise ValueError(f"column counts differ: {train_slice.shape[1]} vs {new_slice.shape[1]}")
    p_m = train_slice.shape[1] if p_m is None else p_m
    if new_slice.shape[0] == 0:
        return np.zeros((train_slice.shape[0], 0))
    return _evaluate(train_slice, new_slice, spec, p_m)


@dataclass(frozen=True)
class KernelSet:
    """One symmetric N x N kernel matrix per pathway, in collection order."""

    matrices: tuple[np.ndarray, ...]
    spec: KernelSpec
    names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, m) -> np.ndarray:
        return self.matrices[m]

    @property
    def n_samples(self) -> int:
        return self.matrices[0].shape[0]

    def subset(self, rows, cols=None) -> "KernelSet | list[np.ndarray]":
        """Restrict to a sample subset.

        With ``cols`` omitted the result is the kernel set of ``rows``; with
        ``cols`` given, a plain list of ``rows x cols`` cross blocks.
        """
        rows = np.asarray(rows, dtype=int)
        if cols is None:
            return KernelSet(tuple(k[np.ix_(rows, rows)] for k in self.matrices),
                             self.spec, self.names)
        cols = np.asarray(cols, dtype=int)
        return [k[np.ix_(rows, cols)] for k in self.matrices]


def pathway_slices(data: ExpressionDataset, pathways: PathwayCollection) -> list[np.ndarray]:
    return [data.values[:, list(pw.gene_indices)] for pw in pathways]


def build_kernel_set(data: ExpressionDataset, pathways: PathwayCollection,
                     spec: KernelSpec) -> KernelSet:
    mats = []
    for x in pathway_slices(data, pathways):
        k = gram_matrix(x, spec)
        k.setflags(write=False)
        mats.append(k)
    return KernelSet(tuple(mats), spec, tuple(pathways.names))


def kernel_set_from_matrices(matrices: Sequence[np.ndarray], spec: KernelSpec,
                             names: Sequence[str] | None = None) -> KernelSet:
    mats = tuple(np.asarray(k, dtype=float) for k in matrices)
    names = tuple(names) if names is not None else tuple(f"pw{m}" for m in range(len(mats)))
    return KernelSet(mats, spec, names)
