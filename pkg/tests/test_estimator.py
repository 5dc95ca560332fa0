import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rankforge import GBRTRanker, synth_dataset
from rankforge.exceptions import ValidationError
from rankforge.gbrt import dumps_model


def _flat(data):
    qid = np.repeat([g.query_id for g in data], [g.m for g in data])
    return data.features, data.labels, qid


@pytest.fixture(scope="module")
def arrays():
    return _flat(synth_dataset(40, 10, 5, seed=2)), _flat(synth_dataset(15, 10, 5, seed=3))


def _ranker(**kw):
    params = dict(num_leaves=8, min_data_in_leaf=5, learning_rate=0.1, max_trees=10)
    params.update(kw)
    return GBRTRanker(**params)


class TestGBRTRanker:
    def test_fit_predict(self, arrays):
        (X, y, q), _ = arrays
        model = _ranker().fit(X, y, q)
        assert model.predict(X).shape == (X.shape[0],)
        assert model.n_features_in_ == 5

    def test_eval_set_early_stopping(self, arrays):
        (X, y, q), valid = arrays
        model = _ranker(max_trees=30, early_stopping_rounds=3).fit(X, y, q, eval_set=valid)
        assert len(model.ensemble_) == model.best_iteration_ + 1
        assert 0 < model.score(*valid) <= 1

    def test_clone_and_params(self):
        model = _ranker(objective="lambdamart", random_state=7)
        twin = clone(model)
        assert twin.get_params() == model.get_params()
        assert twin.get_params()["objective"] == "lambdamart"

    def test_random_state_feeds_gamma(self, arrays):
        (X, y, q), _ = arrays
        a = _ranker(random_state=1).fit(X, y, q)
        b = _ranker(random_state=1).fit(X, y, q)
        c = _ranker(random_state=2).fit(X, y, q)
        assert dumps_model(a.ensemble_) == dumps_model(b.ensemble_)
        assert dumps_model(a.ensemble_) != dumps_model(c.ensemble_)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            _ranker().predict(np.zeros((1, 5)))

    def test_wrong_width(self, arrays):
        (X, y, q), _ = arrays
        model = _ranker().fit(X, y, q)
        with pytest.raises(ValidationError):
            model.predict(X[:, :3])

    def test_negative_labels(self, arrays):
        (X, y, q), _ = arrays
        with pytest.raises(ValidationError):
            _ranker().fit(X, -y - 1, q)
