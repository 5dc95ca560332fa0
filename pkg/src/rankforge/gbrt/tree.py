"""Leaf-wise (best-first) histogram regression trees fitted to Newton steps."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

__all__ = ["RegressionTree", "fit_tree"]


@dataclass
class RegressionTree:
    """Array-encoded binary tree. Node 0 is the root.

    Internal nodes have ``feature >= 0`` and send a document left when its
    bin index is ``<= bin`` (equivalently raw value ``<= threshold``).
    Leaves have ``feature == -1`` and carry ``value`` (unshrunk).
    """

    feature: np.ndarray
    bin: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def num_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def num_nodes(self) -> int:
        return self.feature.shape[0]

    @classmethod
    def constant(cls, value=0.0):
        return cls(
            np.array([-1]), np.array([0]), np.array([0.0]),
            np.array([-1]), np.array([-1]), np.array([float(value)]),
        )

    def _route(self, X, use_bins):
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            n = node[active]
            f = self.feature[n]
            x = X[active, f]
            go_left = x <= (self.bin[n] if use_bins else self.threshold[n])
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] >= 0]
        return node

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of raw features."""
        return self._route(np.asarray(X, dtype=np.float64), use_bins=False)

    def apply_binned(self, binned) -> np.ndarray:
        return self._route(binned, use_bins=True)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def _histograms(binned, idx, grad, hess, n_bins_max):
    d = binned.shape[1]
    flat = (binned[idx].astype(np.int64) + np.arange(d) * n_bins_max).ravel()
    size = d * n_bins_max
    hg = np.bincount(flat, weights=np.repeat(grad[idx], d), minlength=size)
    hh = np.bincount(flat, weights=np.repeat(hess[idx], d), minlength=size)
    hc = np.bincount(flat, minlength=size)
    shape = (d, n_bins_max)
    return hg.reshape(shape), hh.reshape(shape), hc.reshape(shape)


def _best_split(binned, idx, grad, hess, n_bins_max, n_bins, min_data, min_hess, lambda_l2):
    """Best (gain, feature, bin) for the documents ``idx``, or None."""
    if idx.shape[0] < 2 * max(1, min_data) or n_bins_max < 2:
        return None
    hg, hh, hc = _histograms(binned, idx, grad, hess, n_bins_max)
    G, H, C = hg[0].sum(), hh[0].sum(), idx.shape[0]
    GL = np.cumsum(hg, axis=1)[:, :-1]
    HL = np.cumsum(hh, axis=1)[:, :-1]
    CL = np.cumsum(hc, axis=1)[:, :-1]
    GR, HR, CR = G - GL, H - HL, C - CL
    denom_l, denom_r = HL + lambda_l2, HR + lambda_l2
    ok = (
        (CL >= max(1, min_data)) & (CR >= max(1, min_data))
        & (HL >= min_hess) & (HR >= min_hess)
        & (denom_l > 0) & (denom_r > 0)
        & (np.arange(n_bins_max - 1)[None, :] < (n_bins - 1)[:, None])
    )
    if not ok.any():
        return None
    parent = G * G / (H + lambda_l2) if H + lambda_l2 > 0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(ok, GL * GL / denom_l + GR * GR / denom_r - parent, -np.inf)
    best = int(np.argmax(gain))
    f, b = divmod(best, n_bins_max - 1)
    g = float(gain[f, b])
    if not g > 0:
        return None
    return g, f, b


def fit_tree(binned, gradients, hessians, num_leaves=31, min_data_in_leaf=20,
             min_sum_hessian_in_leaf=0.0, lambda_l2=0.0, n_bins=None, bin_edges=None):
    """Grow one regression tree best-first.

    The leaf with the largest split gain
    ``G_L^2/H_L + G_R^2/H_R - G^2/H`` is split next until ``num_leaves``
    leaves exist or no admissible split has positive gain. Leaf values are
    the Newton step ``-G/H``. If every Hessian is zero, unit Hessians are
    used, which turns the fit into least squares on the gradients.

    Parameters
    ----------
    binned : ndarray of shape (N, d)
        Bin indices as produced by :func:`~rankforge.gbrt.binning.bin_features`.
    gradients, hessians : ndarray of shape (N,)
    n_bins : ndarray of int, shape (d,), optional
        Bin count per feature; inferred from ``binned`` when omitted.
    bin_edges : list of ndarray, optional
        If given, raw thresholds are filled in so the tree can route raw
        features.

    Returns
    -------
    tree : RegressionTree
    leaf_of : ndarray of int
        Leaf node index for every training row.
    """
    binned = np.asarray(binned)
    grad = np.asarray(gradients, dtype=np.float64)
    hess = np.asarray(hessians, dtype=np.float64)
    N = binned.shape[0]
    if grad.shape != (N,) or hess.shape != (N,):
        raise ValueError("gradients and hessians must have one entry per row")
    if num_leaves < 2:
        raise ValueError("num_leaves must be >= 2")
    if N and not np.any(hess):
        hess = np.ones(N)
    if n_bins is None:
        n_bins = binned.max(axis=0).astype(np.int64) + 1 if N else np.ones(binned.shape[1], np.int64)
    n_bins = np.asarray(n_bins, dtype=np.int64)
    n_bins_max = int(n_bins.max()) if n_bins.size else 1

    feature, bins, left, right, value = [-1], [0], [-1], [-1], [0.0]
    members = {0: np.arange(N)}
    leaf_of = np.zeros(N, dtype=np.int64)
    args = (grad, hess, n_bins_max, n_bins, min_data_in_leaf, min_sum_hessian_in_leaf, lambda_l2)
    heap = []

    def push(node):
        found = _best_split(binned, members[node], *args)
        if found is not None:
            gain, f, b = found
            heapq.heappush(heap, (-gain, node, f, b))

    push(0)
    n_leaves = 1
    while heap and n_leaves < num_leaves:
        _, node, f, b = heapq.heappop(heap)
        idx = members.pop(node)
        mask = binned[idx, f] <= b
        for child_idx in (idx[mask], idx[~mask]):
            members[len(feature)] = child_idx
            feature.append(-1), bins.append(0), left.append(-1), right.append(-1), value.append(0.0)
        feature[node], bins[node] = f, b
        left[node], right[node] = len(feature) - 2, len(feature) - 1
        n_leaves += 1
        push(left[node])
        push(right[node])

    for node, idx in members.items():
        h = hess[idx].sum() + lambda_l2
        value[node] = float(-grad[idx].sum() / h) if h > 0 else 0.0
        leaf_of[idx] = node

    feature = np.array(feature, dtype=np.int64)
    bins = np.array(bins, dtype=np.int64)
    threshold = np.zeros(feature.shape[0])
    if bin_edges is not None:
        for node in np.flatnonzero(feature >= 0):
            threshold[node] = bin_edges[feature[node]][bins[node]]
    tree = RegressionTree(
        feature, bins, threshold,
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value),
    )
    return tree, leaf_of
