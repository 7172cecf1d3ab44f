"""Datasets, group structures and regularization sequences.

Everything needed to assemble a :class:`GroupedProblem`: a LIBSVM reader and
writer, the feature-duplication scheme used to synthesize group structure,
and the OSCAR lambda sequence.

Random draws use numpy's ``PCG64`` bit generator (``np.random.default_rng``)
so that a given integer seed reproduces group sizes bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse


class ParseError(ValueError):
    """Raised when a LIBSVM stream is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


@dataclass(frozen=True)
class Dataset:
    """Design matrix and response.

    ``X`` is either a dense ``ndarray`` or a ``scipy.sparse`` CSR matrix of
    shape ``(n, d0)``. ``true_coef`` is only set for synthetic data.
    """

    X: object
    y: np.ndarray
    labels_kind: str = "regression"
    true_coef: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.ndim != 1 or y.shape[0] != self.X.shape[0]:
            raise ValueError("y must have one entry per row of X")
        if self.labels_kind not in ("regression", "binary"):
            raise ValueError("labels_kind must be 'regression' or 'binary'")
        values = self.X.data if sparse.issparse(self.X) else np.asarray(self.X)
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d0(self) -> int:
        return self.X.shape[1]

    def dense(self) -> np.ndarray:
        if sparse.issparse(self.X):
            return np.asarray(self.X.todense(), dtype=float)
        return np.asarray(self.X, dtype=float)


def parse_libsvm(stream: Iterable[str], n_features: Optional[int] = None) -> Dataset:
    """Read a LIBSVM text stream ``label idx:val idx:val ...``.

    Indices are 1-based in the file and strictly increasing within a line;
    they are stored 0-based. Blank lines are skipped. ``n_features`` forces
    the column count (it must be at least the largest index seen).
    """
    labels = []
    rows, cols, vals = [], [], []
    max_index = 0
    n = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError("bad label %r" % tokens[0], lineno) from None
        last = 0
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise ParseError("malformed token %r" % tok, lineno)
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise ParseError("malformed token %r" % tok, lineno) from None
            if j < 1:
                raise ParseError("index %d is not 1-based" % j, lineno)
            if j <= last:
                raise ParseError("indices not strictly increasing (%d after %d)" % (j, last), lineno)
            if not math.isfinite(v):
                raise ParseError("non-finite value %r" % val, lineno)
            last = j
            rows.append(n)
            cols.append(j - 1)
            vals.append(v)
        max_index = max(max_index, last)
        n += 1
    if n == 0:
        raise ParseError("empty stream")
    d0 = max_index if n_features is None else n_features
    if d0 < max_index:
        raise ParseError("feature index %d exceeds n_features=%d" % (max_index, d0))
    X = sparse.csr_matrix((vals, (rows, cols)), shape=(n, d0), dtype=float)
    y = np.asarray(labels)
    kind = "binary" if np.unique(y).size <= 2 else "regression"
    return Dataset(X, y, labels_kind=kind)


def write_libsvm(dataset: Dataset, stream: IO[str]) -> None:
    """Write ``dataset`` in LIBSVM format (zeros are omitted)."""
    X = sparse.csr_matrix(dataset.X)
    for i in range(dataset.n):
        start, end = X.indptr[i], X.indptr[i + 1]
        items = " ".join(
            "%d:%r" % (j + 1, float(v))
            for j, v in zip(X.indices[start:end], X.data[start:end])
            if v != 0
        )
        label = repr(float(dataset.y[i]))
        stream.write(label + (" " + items if items else "") + "\n")


def standardize(dataset: Dataset) -> Dataset:
    """Rescale every column to unit Euclidean norm (zero columns untouched)."""
    X = dataset.dense()
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    return Dataset(X / norms, dataset.y, dataset.labels_kind, dataset.true_coef)


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint groups of column indices covering ``range(d)``, with weights."""

    groups: tuple
    weights: np.ndarray

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.intp) for g in self.groups)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "weights", weights)
        if len(groups) == 0:
            raise ValueError("partition needs at least one group")
        if weights.shape != (len(groups),):
            raise ValueError("one weight per group is required")
        if not np.all(weights > 0):
            raise ValueError("group weights must be positive")
        if any(g.ndim != 1 or g.size == 0 for g in groups):
            raise ValueError("groups must be non-empty index lists")
        allidx = np.concatenate(groups)
        d = allidx.size
        if not np.array_equal(np.sort(allidx), np.arange(d)):
            raise ValueError("groups must be disjoint and cover 0..d-1")

    @classmethod
    def from_labels(cls, labels: Sequence[int], weights=None) -> "GroupPartition":
        """Build from a per-column group label array (labels 0..m-1)."""
        labels = np.asarray(labels)
        m = int(labels.max()) + 1
        groups = [np.flatnonzero(labels == i) for i in range(m)]
        if weights is None:
            weights = np.ones(m)
        return cls(tuple(groups), weights)

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def d(self) -> int:
        return int(sum(g.size for g in self.groups))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups])

    def labels(self) -> np.ndarray:
        """Group id of every column."""
        out = np.empty(self.d, dtype=np.intp)
        for i, g in enumerate(self.groups):
            out[g] = i
        return out

    def with_weights(self, weights) -> "GroupPartition":
        return GroupPartition(self.groups, weights)


@dataclass(frozen=True)
class LambdaSequence:
    """Non-increasing, non-negative penalty levels, not all zero."""

    values: np.ndarray
    provenance: str = "explicit"

    def __post_init__(self):
        lam = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", lam)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("lambda must be a non-empty vector")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("lambda must be finite and non-negative")
        if np.any(np.diff(lam) > 0):
            raise ValueError("lambda must be non-increasing")
        if not np.any(lam > 0):
            raise ValueError("at least one lambda must be positive")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class GroupedProblem:
    """Least squares with a sorted penalty on weighted group effects.

    ``lambdas`` may be ``None`` right after :func:`expand_groups`; use
    :meth:`with_lambdas` to attach a sequence.
    """

    X: np.ndarray
    y: np.ndarray
    partition: GroupPartition
    lambdas: Optional[LambdaSequence] = None
    true_coef: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if X.ndim != 2 or self.y.shape != (X.shape[0],):
            raise ValueError("X must be n x d and y of length n")
        if self.partition.d != X.shape[1]:
            raise ValueError("partition covers %d columns, X has %d"
                             % (self.partition.d, X.shape[1]))
        if self.lambdas is not None and len(self.lambdas) != self.partition.m:
            raise ValueError("need one lambda per group")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.partition.m

    def with_lambdas(self, lambdas) -> "GroupedProblem":
        if not isinstance(lambdas, LambdaSequence):
            lambdas = LambdaSequence(lambdas)
        return GroupedProblem(self.X, self.y, self.partition, lambdas, self.true_coef)


def expand_groups(dataset: Dataset, max_size: int, seed: int,
                  group_lasso_weights: bool = False) -> GroupedProblem:
    """Turn every original feature into a group of identical replicas.

    Feature ``i`` is copied ``k_i ~ U{1, ..., max_size}`` times; the copies
    are adjacent columns and form group ``i``. Weights are 1, or
    ``sqrt(k_i)`` when ``group_lasso_weights`` is set.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, max_size, size=dataset.d0, endpoint=True)
    X0 = dataset.dense()
    X = np.repeat(X0, sizes, axis=1)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    groups = tuple(np.arange(bounds[i], bounds[i + 1]) for i in range(dataset.d0))
    weights = np.sqrt(sizes) if group_lasso_weights else np.ones(dataset.d0)
    true_coef = None
    if dataset.true_coef is not None:
        # split each original coefficient evenly over its replicas
        true_coef = np.repeat(dataset.true_coef / sizes, sizes)
    return GroupedProblem(X, dataset.y, GroupPartition(groups, weights), None, true_coef)


def sparsity_factor(index: int, tau: float) -> float:
    """``p_i = i * exp(-tau)``."""
    return index * math.exp(-tau)


def oscar_lambdas(problem: GroupedProblem, p: Optional[float] = None, *,
                  tau: Optional[float] = None, index: int = 1) -> LambdaSequence:
    """OSCAR sequence ``lambda_i = a1 + a2 (m - i)``.

    ``a1 = p * ||X^T y||_inf`` on the expanded design and ``a2 = a1 / d``.
    Give ``p`` directly or as ``index * exp(-tau)``.
    """
    if p is None:
        if tau is None:
            raise ValueError("give p or tau")
        p = sparsity_factor(index, tau)
    if not p > 0:
        raise ValueError("p must be positive")
    scale = float(np.max(np.abs(problem.X.T @ problem.y)))
    if scale == 0:
        raise ValueError("X^T y is identically zero")
    a1 = p * scale
    a2 = a1 / problem.d
    m = problem.m
    lam = a1 + a2 * (m - np.arange(1, m + 1))
    return LambdaSequence(lam, provenance="oscar(p=%r)" % p)
