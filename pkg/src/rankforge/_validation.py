"""Input checks shared by the estimator API."""

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length, check_X_y

from .exceptions import ValidationError


def check_ranking_data(X, y, qid):
    """Validate flat ranking arrays; returns float X, float y, 1-d qid."""
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    qid = np.asarray(qid)
    if qid.ndim != 1:
        raise ValidationError("qid must be 1-d")
    check_consistent_length(X, y, qid)
    if np.any(y < 0):
        raise ValidationError("relevance labels must be nonnegative")
    return X, y, qid


def check_features(X, n_features):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValidationError(f"X has {X.shape[1]} features, but the model expects {n_features}")
    return X
