"""Quantile histogram binning of raw features."""

import numpy as np

__all__ = ["bin_edges_for_feature", "fit_bin_edges", "apply_bins", "bin_features"]


def bin_edges_for_feature(values, max_bin):
    """Bin boundaries for one feature.

    Edges are midpoints between consecutive distinct values, so with at most
    ``max_bin`` distinct values every value gets its own bin. Otherwise cut
    points are taken at evenly spaced quantiles of the (multiset of) values.
    ``bin(x) = #{edges < x}``, hence ``bin(x) <= b`` iff ``x <= edges[b]``.
    """
    u = np.unique(np.asarray(values, dtype=np.float64))
    if u.shape[0] <= 1:
        return np.zeros(0)
    if u.shape[0] <= max_bin:
        return (u[:-1] + u[1:]) / 2.0
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = (np.arange(1, max_bin) * v.shape[0]) // max_bin
    cut_vals = np.unique(v[pos])
    cut_vals = cut_vals[cut_vals < u[-1]]
    nxt = u[np.searchsorted(u, cut_vals, side="right")]
    return (cut_vals + nxt) / 2.0


def fit_bin_edges(X, max_bin=255):
    X = np.asarray(X, dtype=np.float64)
    return [bin_edges_for_feature(X[:, j], max_bin) for j in range(X.shape[1])]


def apply_bins(X, edges):
    """Map raw features to bin indices (uint16, at most ``max_bin`` bins)."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape, dtype=np.uint16)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, X[:, j], side="left")
    return out


def bin_features(X, max_bin=255):
    """Fit quantile edges on ``X`` and bin it.

    Returns
    -------
    edges : list of ndarray
        Per-feature increasing boundaries; feature ``j`` has
        ``len(edges[j]) + 1`` bins.
    binned : ndarray of uint16, shape (N, d)
    """
    if max_bin < 2:
        raise ValueError("max_bin must be >= 2")
    edges = fit_bin_edges(X, max_bin)
    return edges, apply_bins(X, edges)
