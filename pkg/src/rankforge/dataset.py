"""Query-grouped ranking datasets: LETOR parsing, splitting, filtering and
synthetic generation.

A LETOR line looks like::

    <label> qid:<id> <fid>:<value> <fid>:<value> ... [# comment]

Feature ids are 1-based. Features absent from a line are zero, which is how
the benchmark collections keep their files small.
"""

from __future__ import annotations

import io
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, EmptyDatasetError, ParseError, ValidationError

logger = logging.getLogger(__name__)

__all__ = [
    "QueryGroup",
    "Dataset",
    "parse_letor",
    "load_letor",
    "dump_letor",
    "save_letor",
    "split",
    "filter_no_relevant",
    "synth_dataset",
    "from_arrays",
]


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QueryGroup:
    """One training example: ``m`` documents retrieved for a single query.

    Parameters
    ----------
    query_id : str
        Opaque identifier, kept as the string found in the source file.
    features : ndarray of shape (m, d)
    labels : ndarray of shape (m,)
        Nonnegative relevance grades.
    """

    query_id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if features.ndim != 2:
            raise ValidationError("features must be a 2-d matrix")
        if labels.ndim != 1:
            raise ValidationError("labels must be a 1-d vector")
        if labels.shape[0] < 1:
            raise ValidationError(f"query {self.query_id!r} has no documents")
        if features.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"query {self.query_id!r}: {features.shape[0]} feature rows "
                f"but {labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(labels)) or np.any(labels < 0):
            raise ValidationError(f"query {self.query_id!r} has a negative or non-finite label")
        object.__setattr__(self, "query_id", str(self.query_id))
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def m(self) -> int:
        return self.labels.shape[0]

    def __len__(self):
        return self.m

    def __eq__(self, other):
        if not isinstance(other, QueryGroup):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of query groups sharing ``d`` feature columns.

    Immutable once built, so it can be handed to worker processes freely.
    """

    groups: tuple
    d: int
    removed: int = field(default=0, compare=False)

    def __post_init__(self):
        groups = tuple(self.groups)
        for g in groups:
            if not isinstance(g, QueryGroup):
                raise ValidationError("Dataset.groups must contain QueryGroup objects")
            if g.features.shape[1] != self.d:
                raise ValidationError(
                    f"query {g.query_id!r} has {g.features.shape[1]} features, expected {self.d}"
                )
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return len(self.groups)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.groups)

    def __getitem__(self, i):
        return self.groups[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.d == other.d and self.groups == other.groups

    __hash__ = None

    @cached_property
    def offsets(self) -> np.ndarray:
        """Row offsets of each group into the stacked matrices (length n+1)."""
        sizes = [g.m for g in self.groups]
        return np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).astype(np.int64)

    @cached_property
    def features(self) -> np.ndarray:
        """All documents stacked into one ``(N, d)`` matrix."""
        if not self.groups:
            return np.zeros((0, self.d))
        return _frozen(np.vstack([g.features for g in self.groups]))

    @cached_property
    def labels(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0)
        return _frozen(np.concatenate([g.labels for g in self.groups]))

    @property
    def num_docs(self) -> int:
        return int(self.offsets[-1])

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.groups[i] for i in indices), self.d)


def from_arrays(X, y, qid) -> Dataset:
    """Group flat arrays into a :class:`Dataset`.

    Contiguous runs of equal ``qid`` form one group, the same rule the
    LETOR parser applies.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    qid = np.asarray(qid)
    if X.ndim != 2 or y.ndim != 1 or qid.ndim != 1:
        raise ValidationError("expected X of shape (N, d) and 1-d y and qid")
    if not (X.shape[0] == y.shape[0] == qid.shape[0]):
        raise ValidationError("X, y and qid must have the same number of rows")
    if X.shape[0] == 0:
        raise EmptyDatasetError("no documents")
    change = np.flatnonzero(qid[1:] != qid[:-1]) + 1
    bounds = np.concatenate([[0], change, [len(qid)]])
    groups = tuple(
        QueryGroup(str(qid[a]), X[a:b], y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])
    )
    return Dataset(groups, X.shape[1])


def _parse_lines(lines: Iterable[str], num_features=None) -> Dataset:
    runs = []  # (qid, labels list, sparse rows list)
    d = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"malformed label {tokens[0]!r}", lineno) from None
        if not math.isfinite(label):
            raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
        if label < 0:
            raise ValidationError(f"line {lineno}: negative label {label}")
        if len(tokens) < 2 or not tokens[1].startswith("qid:") or len(tokens[1]) == 4:
            raise ParseError("expected 'qid:<id>' as second token", lineno)
        qid = tokens[1][4:]
        row = {}
        for tok in tokens[2:]:
            fid_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                fid = int(fid_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            if fid < 1:
                raise ParseError(f"feature id must be positive, got {fid}", lineno)
            if not math.isfinite(val):
                raise ParseError(f"non-finite feature value in {tok!r}", lineno)
            if fid in row:
                raise ParseError(f"duplicate feature id {fid}", lineno)
            row[fid] = val
            d = max(d, fid)
        if runs and runs[-1][0] == qid:
            runs[-1][1].append(label)
            runs[-1][2].append(row)
        else:
            runs.append((qid, [label], [row]))
    if not runs:
        raise EmptyDatasetError("input contains no documents")
    if num_features is not None:
        if num_features < d:
            raise ValidationError(f"num_features={num_features} but feature id {d} present")
        d = num_features
    groups = []
    for qid, labels, rows in runs:
        X = np.zeros((len(rows), d))
        for i, row in enumerate(rows):
            for fid, val in row.items():
                X[i, fid - 1] = val
        groups.append(QueryGroup(qid, X, labels))
    return Dataset(tuple(groups), d)


def parse_letor(source, num_features=None) -> Dataset:
    """Parse LETOR/SVMLight ranking data.

    Parameters
    ----------
    source : bytes, str or file-like
        Raw bytes (decoded as UTF-8), text, or an open text/binary stream.
        LF and CRLF line endings are both accepted.
    num_features : int, optional
        Pad the feature matrix to this width. Defaults to the largest
        feature id seen.

    Returns
    -------
    Dataset
        A repeated qid only joins the current group when it is contiguous;
        a later reappearance starts a new group.

    Raises
    ------
    ParseError
        On a malformed token, with the offending line number.
    ValidationError
        On a negative label.
    EmptyDatasetError
        When the input has no documents.
    """
    if isinstance(source, (bytes, bytearray)):
        source = source.decode("utf-8")
    if isinstance(source, str):
        lines = io.StringIO(source)
    else:
        lines = (ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in source)
    return _parse_lines(lines, num_features=num_features)


def load_letor(path, num_features=None) -> Dataset:
    with open(path, "rb") as fh:
        return parse_letor(fh, num_features=num_features)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dump_letor(dataset: Dataset) -> str:
    """Serialize to LETOR text. Zero features are omitted except the last
    column, which is always written so the width survives a round trip."""
    out = []
    for g in dataset.groups:
        for label, row in zip(g.labels, g.features):
            parts = [_fmt(label), f"qid:{g.query_id}"]
            nz = np.flatnonzero(row)
            for j in nz:
                parts.append(f"{j + 1}:{_fmt(row[j])}")
            if dataset.d and (len(nz) == 0 or nz[-1] != dataset.d - 1):
                parts.append(f"{dataset.d}:0")
            out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


def save_letor(dataset: Dataset, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_letor(dataset))
    os.replace(tmp, path)


def split(dataset: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0):
    """Partition query groups into train/valid/test by a seeded shuffle.

    Train size is rounded up, valid is rounded to nearest, and test takes
    whatever remains. Groups are never split across partitions.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("fractions must be three nonnegative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)!r}")
    if dataset.n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    n = dataset.n
    n_train = min(n, math.ceil(fractions[0] * n - 1e-9))
    n_valid = min(n - n_train, int(round(fractions[1] * n)))
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.split(perm, [n_train, n_train + n_valid])
    return tuple(dataset.subset(sorted(p.tolist())) for p in parts)


def filter_no_relevant(dataset: Dataset) -> Dataset:
    """Drop groups whose labels are all zero; ``removed`` records how many."""
    kept = tuple(g for g in dataset.groups if np.any(g.labels > 0))
    removed = dataset.n - len(kept)
    if removed:
        logger.info("discarded %d query groups without relevant documents", removed)
    return Dataset(kept, dataset.d, removed=removed)


# cumulative grade frequencies 0..3; grade 4 takes the rest
_GRADE_CDF = (0.5, 0.75, 0.88, 0.96)


def synth_dataset(n: int, m: int, d: int, seed: int = 0, noise: float = 0.5) -> Dataset:
    """Generate a desk-scale stand-in for the graded benchmark collections.

    Features are uniform on [0, 1]. A latent utility is a fixed random
    positive combination of the first ``min(5, d)`` features plus Gaussian
    noise; grades 0-4 come from cutting the utility at empirical quantiles
    so that higher grades are rarer.
    """
    if min(n, m, d) < 1:
        raise ConfigError("n, m and d must all be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n * m, d))
    k = min(5, d)
    w = rng.uniform(0.5, 1.5, size=k)
    utility = X[:, :k] @ w / np.sqrt(k) + noise * rng.standard_normal(n * m)
    cuts = np.quantile(utility, _GRADE_CDF)
    labels = np.searchsorted(cuts, utility, side="left").astype(np.float64)
    groups = tuple(
        QueryGroup(str(q + 1), X[q * m:(q + 1) * m], labels[q * m:(q + 1) * m]) for q in range(n)
    )
    return Dataset(groups, d)
