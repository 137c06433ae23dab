"""Expression matrices, pathway collections and class labels.

Readers for the three on-disk inputs (expression CSV, GMT gene sets and
a two-column label CSV) plus the matching writers, so simulated data can
travel through exactly the same ingestion path as real data.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpressionDataset:
    """Samples-by-genes matrix of normalized expression values.

    Parameters
    ----------
    values : ndarray of shape (N, p)
    gene_ids : tuple of str, length p
    sample_ids : tuple of str, length N
    """

    values: np.ndarray
    gene_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataFormatError("expression values must be a 2-D matrix")
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        n, p = values.shape
        if p < 1:
            raise DataFormatError("expression matrix has no genes")
        if len(self.gene_ids) != p or len(self.sample_ids) != n:
            raise DataFormatError(
                f"id counts ({len(self.sample_ids)} samples, {len(self.gene_ids)} genes) "
                f"do not match matrix shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise DataFormatError(f"non-finite value at sample {self.sample_ids[i]!r}, "
                                  f"gene {self.gene_ids[j]!r}")
        _check_unique(self.gene_ids, "gene id")
        _check_unique(self.sample_ids, "sample id")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    def gene_index(self) -> dict[str, int]:
        return {g: j for j, g in enumerate(self.gene_ids)}

    def subset(self, rows) -> "ExpressionDataset":
        """Dataset restricted to the given sample rows (order kept)."""
        rows = np.asarray(rows, dtype=int)
        return ExpressionDataset(self.values[rows], self.gene_ids,
                                 tuple(self.sample_ids[i] for i in rows))


@dataclass(frozen=True)
class Pathway:
    name: str
    gene_indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.gene_indices)


@dataclass(frozen=True)
class PathwayCollection:
    """Ordered, named groups of column indices into an expression matrix."""

    pathways: tuple[Pathway, ...]
    n_genes: int
    n_dropped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pathways", tuple(self.pathways))
        if not self.pathways:
            raise DataFormatError("pathway collection is empty")
        _check_unique([pw.name for pw in self.pathways], "pathway name")
        for pw in self.pathways:
            if pw.size < 1:
                raise DataFormatError(f"pathway {pw.name!r} is empty")
            if len(set(pw.gene_indices)) != pw.size:
                raise DataFormatError(f"pathway {pw.name!r} has repeated gene indices")
            if min(pw.gene_indices) < 0 or max(pw.gene_indices) >= self.n_genes:
                raise DataFormatError(f"pathway {pw.name!r} indexes outside [0, {self.n_genes})")

    @classmethod
    def from_lists(cls, groups: Sequence[tuple[str, Sequence[int]]], n_genes: int,
                   n_dropped: int = 0):
        return cls(tuple(Pathway(name, tuple(int(i) for i in idx)) for name, idx in groups),
                   n_genes, n_dropped)

    def __len__(self) -> int:
        return len(self.pathways)

    def __iter__(self):
        return iter(self.pathways)

    def __getitem__(self, m) -> Pathway:
        return self.pathways[m]

    @property
    def names(self) -> list[str]:
        return [pw.name for pw in self.pathways]


@dataclass(frozen=True)
class LabelVector:
    """Class labels coded as +1 / -1, aligned to dataset sample order."""

    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        if not np.all((y == 1) | (y == -1)):
            raise DataFormatError("labels must be +1 or -1")
        if not (np.any(y == 1) and np.any(y == -1)):
            raise DataFormatError("labels contain a single class; both +1 and -1 are required")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def counts(self) -> tuple[int, int]:
        """(number of +1, number of -1)."""
        n_pos = int(np.sum(self.y == 1))
        return n_pos, len(self.y) - n_pos


def _check_unique(ids, what):
    seen = set()
    for item in ids:
        if item in seen:
            raise DataFormatError(f"duplicate {what} {item!r}")
        seen.add(item)


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(f"cannot parse {cell!r} as a number at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite value {cell!r} at row {row}, column {col}")
    return value


def load_expression_csv(path, samples_as_rows: bool = True, row_ids: bool = True) -> ExpressionDataset:
    """Read an expression matrix from CSV.

    The first row holds column ids and, with ``row_ids``, the first column
    holds row ids; the header may omit the corner cell. Without ``row_ids``
    rows are named ``s1, s2, ...``. With ``samples_as_rows=False`` the file
    is genes-by-samples and is transposed on load. Rows and columns in error
    messages are 1-based data positions (header row and id column excluded).
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataFormatError(f"cannot read expression file {path}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: empty expression matrix")
    header = [h.strip() for h in rows[0]]
    if len(rows) == 1:
        width = len(header) - 1 if row_ids else len(header)
    else:
        width = len(rows[1]) - 1 if row_ids else len(rows[1])
    if row_ids and len(header) == width + 1:
        header = header[1:]
    if not header:
        raise DataFormatError(f"{path}: header row has no column ids")
    names, values = [], []
    for r, row in enumerate(rows[1:], start=1):
        cells = row[1:] if row_ids else row
        if len(cells) != len(header):
            raise DataFormatError(
                f"{path}: row {r} has {len(cells)} values, expected {len(header)}")
        names.append(row[0].strip() if row_ids else f"s{r}")
        values.append([_parse_float(cell, r, c) for c, cell in enumerate(cells, start=1)])
    matrix = np.array(values, dtype=float).reshape(len(values), len(header))
    if samples_as_rows:
        return ExpressionDataset(matrix, tuple(header), tuple(names))
    return ExpressionDataset(matrix.T, tuple(names), tuple(header))


def write_expression_csv(dataset: ExpressionDataset, path) -> None:
    """Write samples as rows; floats use ``repr`` so reloading is bit-exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *dataset.gene_ids])
        for sid, row in zip(dataset.sample_ids, dataset.values):
            writer.writerow([sid, *(repr(float(v)) for v in row)])


def load_gmt(path, dataset: ExpressionDataset) -> PathwayCollection:
    """Read a GMT gene-set file and map symbols onto dataset columns.

    Symbols missing from the dataset are dropped; gene sets left empty are
    omitted and counted in a warning. Raises if nothing survives.
    """
    path = Path(path)
    index = dataset.gene_index()
    groups: list[tuple[str, list[int]]] = []
    dropped = 0
    try:
        with path.open(encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read pathway file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise DataFormatError(f"{path}: line {lineno} has fewer than 3 tab-separated fields")
        name = fields[0].strip()
        cols = list(dict.fromkeys(index[g.strip()] for g in fields[2:] if g.strip() in index))
        if not cols:
            dropped += 1
            continue
        groups.append((name, cols))
    if dropped:
        logger.warning("%d pathway(s) dropped: no genes present in the expression data", dropped)
    if not groups:
        raise DataFormatError(f"{path}: no pathway shares genes with the expression data")
    return PathwayCollection.from_lists(groups, dataset.n_genes, n_dropped=dropped)


def write_gmt(pathways: PathwayCollection, gene_ids: Sequence[str], path,
              description: str = "na") -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for pw in pathways:
            fh.write("\t".join([pw.name, description, *(gene_ids[i] for i in pw.gene_indices)]))
            fh.write("\n")


_LABEL_MAP = {"1": 1.0, "+1": 1.0, "-1": -1.0, "0": -1.0}


def load_labels(path, dataset: ExpressionDataset) -> LabelVector:
    """Read ``sample_id,label`` rows and reorder them to the dataset's samples.

    Labels may be coded {1, -1} or {0, 1}; 0 maps to -1. A header line is
    tolerated when its label field is not a valid code.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataFormatError(f"cannot read labels file {path}: {exc}") from None
    by_sample: dict[str, float] = {}
    for lineno, row in enumerate(rows, start=1):
        if len(row) != 2:
            raise DataFormatError(f"{path}: line {lineno} must have exactly 2 fields")
        sid, raw = row[0].strip(), row[1].strip()
        code = _normalize_label(raw)
        if code is None:
            if lineno == 1:
                continue
            raise DataFormatError(f"{path}: line {lineno}: label {raw!r} not in {{1,-1}} or {{0,1}}")
        if sid in by_sample:
            raise DataFormatError(f"{path}: duplicate sample {sid!r}")
        by_sample[sid] = code
    unknown = [s for s in by_sample if s not in set(dataset.sample_ids)]
    if unknown:
        raise DataFormatError(f"{path}: unknown sample {unknown[0]!r}")
    missing = [s for s in dataset.sample_ids if s not in by_sample]
    if missing:
        raise DataFormatError(f"{path}: no label for sample {missing[0]!r}")
    return LabelVector(np.array([by_sample[s] for s in dataset.sample_ids]))


def _normalize_label(raw: str):
    if raw in _LABEL_MAP:
        return _LABEL_MAP[raw]
    try:
        value = float(raw)
    except ValueError:
        return None
    return {1.0: 1.0, -1.0: -1.0, 0.0: -1.0}.get(value)


def write_labels(labels: LabelVector, sample_ids: Sequence[str], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for sid, y in zip(sample_ids, labels.y):
            writer.writerow([sid, int(y)])
