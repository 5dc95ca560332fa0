"""scikit-learn compatible wrapper around :func:`~rankforge.gbrt.train`."""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_features, check_ranking_data
from ..dataset import filter_no_relevant, from_arrays
from ..metrics import mean_ndcg
from .boosting import TrainConfig, train


class GBRTRanker(BaseEstimator):
    """Gradient-boosted regression trees for ranking.

    Parameters mirror :class:`~rankforge.gbrt.TrainConfig`; the defaults
    are the Web30K preset with ``objective="xe_ndcg"``.

    Examples
    --------
    >>> from rankforge import GBRTRanker, synth_dataset
    >>> data = synth_dataset(n=30, m=10, d=5, seed=0)
    >>> ranker = GBRTRanker(num_leaves=8, min_data_in_leaf=5, max_trees=5)
    >>> ranker.fit(data.features, data.labels, qid=[g.query_id for g in data for _ in range(g.m)])
    GBRTRanker(...)
    """

    def __init__(self, objective="xe_ndcg", max_bin=255, num_leaves=400, min_data_in_leaf=50,
                 min_sum_hessian_in_leaf=0.0, lambda_l2=0.0, learning_rate=0.02, sigma=1.0,
                 max_trees=500, early_stopping_rounds=50, eval_at=5, newton_mode="diagonal",
                 epsilon=1e-5, relative_epsilon=True, random_state=0):
        self.objective = objective
        self.max_bin = max_bin
        self.num_leaves = num_leaves
        self.min_data_in_leaf = min_data_in_leaf
        self.min_sum_hessian_in_leaf = min_sum_hessian_in_leaf
        self.lambda_l2 = lambda_l2
        self.learning_rate = learning_rate
        self.sigma = sigma
        self.max_trees = max_trees
        self.early_stopping_rounds = early_stopping_rounds
        self.eval_at = eval_at
        self.newton_mode = newton_mode
        self.epsilon = epsilon
        self.relative_epsilon = relative_epsilon
        self.random_state = random_state

    def _config(self):
        params = self.get_params()
        params["seed"] = int(params.pop("random_state") or 0)
        return TrainConfig(**params)

    def fit(self, X, y, qid, eval_set=None):
        """Fit on documents grouped by contiguous ``qid`` runs.

        Parameters
        ----------
        eval_set : tuple (X_valid, y_valid, qid_valid), optional
            Enables NDCG early stopping. Validation queries with no relevant
            document are dropped.

        Returns
        -------
        self
        """
        X, y, qid = check_ranking_data(X, y, qid)
        train_set = from_arrays(X, y, qid)
        valid_set = None
        if eval_set is not None:
            Xv, yv, qv = check_ranking_data(*eval_set)
            valid_set = filter_no_relevant(from_arrays(Xv, yv, qv))
        self.ensemble_, self.training_log_ = train(train_set, valid_set, self._config())
        self.best_iteration_ = self.training_log_.best_iteration
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Ranking scores; sort descending within each query."""
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.predict(check_features(X, self.n_features_in_))

    def score(self, X, y, qid):
        """Mean NDCG at ``eval_at`` over queries with a relevant document."""
        X, y, qid = check_ranking_data(X, y, qid)
        data = from_arrays(X, y, qid)
        keep = [i for i, g in enumerate(data.groups) if g.labels.max() > 0]
        scores = self.predict(X)
        off = data.offsets
        return mean_ndcg(
            data.subset(keep), [scores[off[i]:off[i + 1]] for i in keep], self.eval_at,
            tie_seed=self.random_state or 0,
        )
