"""DCG/NDCG and the pairwise swap deltas used by LambdaMART.

Ranks are 1-based throughout: ``ranks[i]`` is the position of document
``i`` in the list sorted by descending score.
"""

import numpy as np

from .exceptions import EmptyDatasetError, UndefinedNDCGError, ValidationError

__all__ = [
    "ranks_from_scores",
    "ideal_ranks",
    "dcg",
    "ideal_dcg",
    "ndcg",
    "mean_ndcg",
    "delta_ndcg",
    "delta_ndcg_matrix",
    "group_tie_seed",
]


def group_tie_seed(tie_seed, index):
    """Per-group tie-breaking seed derived from a run-level seed."""
    return [int(tie_seed), int(index)]


def ranks_from_scores(scores, tie_seed=0) -> np.ndarray:
    """Rank documents by descending score.

    Tied documents are ordered by a random shuffle drawn from ``tie_seed``,
    so a constant scorer does not inherit whatever order the input had.

    Returns
    -------
    ndarray of int64, shape (m,)
        1-based ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValidationError("scores must be 1-d")
    if np.isnan(scores).any():
        raise ValidationError("scores contain NaN")
    m = scores.shape[0]
    if m > 1 and np.unique(scores).shape[0] < m:
        key = np.random.default_rng(tie_seed).permutation(m)
        order = np.lexsort((key, -scores))
    else:
        order = np.argsort(-scores, kind="stable")
    ranks = np.empty(m, dtype=np.int64)
    ranks[order] = np.arange(1, m + 1)
    return ranks


def ideal_ranks(labels) -> np.ndarray:
    """Ranks of the label-sorted list. Order among equal labels is
    irrelevant to DCG, so a stable sort is used."""
    labels = np.asarray(labels, dtype=np.float64)
    order = np.argsort(-labels, kind="stable")
    ranks = np.empty(labels.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, labels.shape[0] + 1)
    return ranks


def _discounts(ranks, cutoff=None):
    disc = 1.0 / np.log2(1.0 + np.asarray(ranks, dtype=np.float64))
    if cutoff is not None and np.isfinite(cutoff):
        disc = np.where(np.asarray(ranks) <= cutoff, disc, 0.0)
    return disc


def dcg(ranks, labels, cutoff=None) -> float:
    """Sum of ``(2**y - 1) / log2(1 + rank)`` over documents ranked within
    ``cutoff`` (``None`` or ``inf`` means no truncation)."""
    if cutoff is not None and cutoff < 1:
        raise ValidationError("cutoff must be >= 1")
    gains = np.exp2(np.asarray(labels, dtype=np.float64)) - 1.0
    return float(np.dot(gains, _discounts(ranks, cutoff)))


def ideal_dcg(labels, cutoff=None) -> float:
    return dcg(ideal_ranks(labels), labels, cutoff)


def ndcg(scores, labels, cutoff=None, tie_seed=0) -> float:
    """NDCG of the ranking induced by ``scores``.

    Raises
    ------
    UndefinedNDCGError
        If every label is zero.
    """
    ideal = ideal_dcg(labels, cutoff)
    if ideal <= 0:
        raise UndefinedNDCGError("ideal DCG is zero (no relevant documents)")
    return dcg(ranks_from_scores(scores, tie_seed), labels, cutoff) / ideal


def mean_ndcg(dataset, scores_per_group, cutoff=None, tie_seed=0) -> float:
    """Arithmetic mean of per-group NDCG.

    ``scores_per_group`` is either a list of per-group score vectors or a
    flat vector aligned with the dataset's stacked documents.
    """
    if dataset.n == 0:
        raise EmptyDatasetError("mean NDCG of an empty dataset is undefined")
    if isinstance(scores_per_group, np.ndarray) and scores_per_group.ndim == 1:
        off = dataset.offsets
        scores_per_group = [scores_per_group[off[i]:off[i + 1]] for i in range(dataset.n)]
    if len(scores_per_group) != dataset.n:
        raise ValidationError("need one score vector per group")
    total = 0.0
    for i, (g, s) in enumerate(zip(dataset.groups, scores_per_group)):
        total += ndcg(s, g.labels, cutoff, group_tie_seed(tie_seed, i))
    return total / dataset.n


def delta_ndcg(ranks, labels, i, j) -> float:
    """Absolute NDCG change from swapping the ranks of documents i and j
    (untruncated)."""
    m = len(labels)
    if i == j:
        raise ValidationError("i and j must differ")
    if not (0 <= i < m and 0 <= j < m):
        raise ValidationError("document index out of range")
    ideal = ideal_dcg(labels)
    if ideal <= 0:
        raise UndefinedNDCGError("ideal DCG is zero (no relevant documents)")
    y = np.asarray(labels, dtype=np.float64)
    disc = _discounts(ranks)
    return abs(np.exp2(y[i]) - np.exp2(y[j])) * abs(disc[i] - disc[j]) / ideal


def delta_ndcg_matrix(ranks, labels) -> np.ndarray:
    """All pairwise |ΔNDCG| at once, shape (m, m)."""
    ideal = ideal_dcg(labels)
    if ideal <= 0:
        raise UndefinedNDCGError("ideal DCG is zero (no relevant documents)")
    g = np.exp2(np.asarray(labels, dtype=np.float64))
    disc = _discounts(ranks)
    return np.abs(g[:, None] - g[None, :]) * np.abs(disc[:, None] - disc[None, :]) / ideal
