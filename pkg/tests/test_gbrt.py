import numpy as np
import pytest

from rankforge import synth_dataset
from rankforge.dataset import Dataset, QueryGroup, filter_no_relevant, split
from rankforge.exceptions import ConfigError, EmptyDatasetError, ModelFormatError, ValidationError
from rankforge.gbrt import (
    Ensemble,
    RegressionTree,
    TrainConfig,
    bin_features,
    dumps_model,
    fit_tree,
    load_model,
    loads_model,
    predict,
    save_model,
    train,
)
from rankforge.metrics import mean_ndcg


def _brute_force_best_split(binned, grad, hess, min_data):
    g_tot, h_tot = grad.sum(), hess.sum()
    best = (0.0, None, None)
    for f in range(binned.shape[1]):
        for b in np.unique(binned[:, f])[:-1]:
            left = binned[:, f] <= b
            nl = left.sum()
            if nl < min_data or len(left) - nl < min_data:
                continue
            gl, hl = grad[left].sum(), hess[left].sum()
            gain = gl ** 2 / hl + (g_tot - gl) ** 2 / (h_tot - hl) - g_tot ** 2 / h_tot
            if gain > best[0]:
                best = (gain, f, b)
    return best


@pytest.fixture(scope="module")
def trained(quick_config):
    data = synth_dataset(60, 10, 5, seed=11)
    tr, va, te = split(data, seed=0)
    va = filter_no_relevant(va)
    ens, log = train(tr, va, quick_config)
    return tr, va, te, ens, log


class TestBinning:
    def test_constant_feature(self):
        edges, binned = bin_features(np.full((10, 1), 3.0))
        assert len(edges[0]) == 0
        assert np.all(binned == 0)

    def test_each_value_own_bin(self):
        X = np.arange(255, dtype=float)[::-1, None]
        edges, binned = bin_features(X, max_bin=255)
        assert len(np.unique(binned)) == 255
        np.testing.assert_array_equal(binned[:, 0], np.arange(255)[::-1])

    def test_bin_count_capped(self, rng):
        edges, binned = bin_features(rng.standard_normal((5000, 2)), max_bin=16)
        assert all(len(e) + 1 <= 16 for e in edges)
        assert binned.max() <= 15

    def test_threshold_equivalence(self, rng):
        X = rng.standard_normal((300, 3))
        edges, binned = bin_features(X, max_bin=20)
        for j in range(3):
            for b in range(len(edges[j])):
                np.testing.assert_array_equal(binned[:, j] <= b, X[:, j] <= edges[j][b])


class TestFitTree:
    def test_single_document(self):
        tree, leaf_of = fit_tree(np.zeros((1, 1), dtype=np.uint16), [0.6], [0.2],
                                 min_data_in_leaf=0)
        assert tree.num_leaves == 1
        assert tree.value[0] == pytest.approx(-3.0)

    def test_two_group_means(self):
        binned = np.repeat([[0], [1]], 5, axis=0).astype(np.uint16)
        grad = np.r_[np.full(5, 2.0), np.full(5, -1.0)] + np.linspace(-0.1, 0.1, 10)
        tree, leaf_of = fit_tree(binned, grad, np.ones(10), num_leaves=2, min_data_in_leaf=1)
        assert tree.num_leaves == 2
        np.testing.assert_allclose(np.sort(tree.value[leaf_of[[0, 9]]]),
                                   np.sort([-grad[:5].mean(), -grad[5:].mean()]))

    def test_budget(self, rng):
        binned = rng.integers(0, 10, (200, 4)).astype(np.uint16)
        tree, _ = fit_tree(binned, rng.standard_normal(200), np.ones(200), num_leaves=2,
                           min_data_in_leaf=1)
        assert tree.num_leaves <= 2 and tree.num_nodes <= 3

    @pytest.mark.parametrize("seed", range(8))
    def test_root_split_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        binned = rng.integers(0, 12, (150, 3)).astype(np.uint16)
        grad, hess = rng.standard_normal(150), rng.uniform(0.1, 1.0, 150)
        tree, _ = fit_tree(binned, grad, hess, num_leaves=2, min_data_in_leaf=5)
        gain, f, b = _brute_force_best_split(binned, grad, hess, 5)
        assert (tree.feature[0], tree.bin[0]) == (f, b)

    def test_leaf_values_are_newton_steps(self, rng):
        binned = rng.integers(0, 6, (100, 2)).astype(np.uint16)
        grad, hess = rng.standard_normal(100), rng.uniform(0.1, 1, 100)
        tree, leaf_of = fit_tree(binned, grad, hess, num_leaves=6, min_data_in_leaf=3)
        for leaf in np.unique(leaf_of):
            idx = leaf_of == leaf
            assert tree.value[leaf] == pytest.approx(-grad[idx].sum() / hess[idx].sum())
            assert idx.sum() >= 3

    def test_zero_hessian_uses_unit(self, rng):
        binned = rng.integers(0, 4, (40, 1)).astype(np.uint16)
        grad = rng.standard_normal(40)
        a, _ = fit_tree(binned, grad, np.zeros(40), num_leaves=4, min_data_in_leaf=2)
        b, _ = fit_tree(binned, grad, np.ones(40), num_leaves=4, min_data_in_leaf=2)
        np.testing.assert_array_equal(a.value, b.value)

    def test_binned_and_raw_routing_agree(self, rng):
        X = rng.standard_normal((200, 3))
        edges, binned = bin_features(X, 32)
        tree, leaf_of = fit_tree(binned, rng.standard_normal(200), np.ones(200), num_leaves=8,
                                 min_data_in_leaf=5, bin_edges=edges)
        np.testing.assert_array_equal(tree.apply(X), leaf_of)
        np.testing.assert_array_equal(tree.apply_binned(binned), leaf_of)


class TestTrainConfig:
    def test_presets(self):
        web = TrainConfig.from_preset("web30k")
        assert (web.max_bin, web.learning_rate, web.num_leaves, web.min_data_in_leaf) == (255, 0.02, 400, 50)
        yahoo = TrainConfig.from_preset("yahoo")
        assert (yahoo.num_leaves, yahoo.min_data_in_leaf) == (200, 100)

    @pytest.mark.parametrize("bad", [
        {"objective": "hinge"}, {"max_bin": 1}, {"learning_rate": -1}, {"epsilon": 0},
        {"newton_mode": "full", "objective": "lambdamart"}, {"max_trees": 0},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_preset("istella")


class TestTrain:
    def test_learns(self, trained):
        tr, va, te, ens, log = trained
        rand = np.random.default_rng(0).standard_normal(va.num_docs)
        assert log.records[log.best_iteration].valid_ndcg > mean_ndcg(va, rand, 5) + 0.05

    def test_truncated_at_best_iteration(self, trained):
        tr, va, te, ens, log = trained
        assert len(ens) == log.best_iteration + 1
        best = max(r.valid_ndcg for r in log.records)
        assert log.records[log.best_iteration].valid_ndcg == best
        assert mean_ndcg(va, ens.predict(va.features), 5) == pytest.approx(best)

    def test_predict_matches_internal_scores(self, trained):
        tr, va, te, ens, log = trained
        np.testing.assert_allclose(predict(ens, tr.features), log.train_scores, atol=1e-12)

    def test_deterministic(self, quick_config, small_data):
        a, la = train(small_data, None, quick_config)
        b, lb = train(small_data, None, quick_config)
        assert dumps_model(a) == dumps_model(b)
        assert la.to_tsv() == lb.to_tsv()

    def test_early_stopping(self, small_data):
        va = filter_no_relevant(synth_dataset(20, 10, 5, seed=99))
        cfg = TrainConfig(num_leaves=4, min_data_in_leaf=5, learning_rate=0.5, max_trees=200,
                          early_stopping_rounds=3)
        ens, log = train(small_data, va, cfg)
        assert len(log.records) < 200
        assert len(log.records) == log.best_iteration + 4

    def test_zero_learning_rate_is_random_baseline(self, small_data):
        va = filter_no_relevant(synth_dataset(20, 10, 5, seed=5))
        cfg = TrainConfig(learning_rate=0.0, max_trees=3, num_leaves=4, min_data_in_leaf=5)
        ens, log = train(small_data, va, cfg)
        np.testing.assert_array_equal(ens.predict(va.features), 0.0)
        baseline = mean_ndcg(va, np.zeros(va.num_docs), 5, tie_seed=cfg.seed)
        assert log.records[0].valid_ndcg == baseline

    @pytest.mark.parametrize("objective", ["xe_ndcg", "listnet"])
    def test_loss_decreases_with_fixed_gamma(self, small_data, objective):
        cfg = TrainConfig(objective=objective, num_leaves=8, min_data_in_leaf=5,
                          learning_rate=0.1, max_trees=40, resample_gamma=False)
        _, log = train(small_data, None, cfg)
        losses = np.array([r.train_loss for r in log.records])
        assert losses[-1] < losses[0]
        assert np.mean(np.diff(losses) > 1e-12) <= 0.01

    @pytest.mark.parametrize("objective,mode", [("lambdamart", "diagonal"), ("xe_ndcg", "full")])
    def test_other_modes_learn(self, objective, mode):
        data = synth_dataset(60, 10, 5, seed=11)
        tr, va, _ = split(data, seed=0)
        va = filter_no_relevant(va)
        cfg = TrainConfig(objective=objective, newton_mode=mode, num_leaves=8,
                          min_data_in_leaf=5, learning_rate=0.1, max_trees=20)
        _, log = train(tr, va, cfg)
        rand = np.random.default_rng(0).standard_normal(va.num_docs)
        assert max(r.valid_ndcg for r in log.records) > mean_ndcg(va, rand, 5)

    def test_empty_train(self):
        with pytest.raises(EmptyDatasetError):
            train(Dataset((), d=2))

    def test_valid_without_relevant(self, small_data):
        bad = Dataset((QueryGroup("z", np.zeros((2, 5)), [0, 0]),), d=5)
        with pytest.raises(ValidationError):
            train(small_data, bad, TrainConfig(max_trees=1))

    def test_log_tsv(self, trained):
        *_, log = trained
        lines = log.to_tsv().splitlines()
        assert lines[0] == "iteration\ttrain_loss\tvalid_ndcg@5"
        assert len(lines) == len(log.records) + 1


class TestPredict:
    def test_empty_ensemble(self):
        ens = Ensemble([], 0.1, [np.zeros(0)] * 2, 2)
        np.testing.assert_array_equal(ens.predict(np.ones((3, 2))), 0.0)

    def test_constant_tree(self):
        ens = Ensemble([RegressionTree.constant(4.0)], 0.25, [np.zeros(0)], 1)
        np.testing.assert_array_equal(ens.predict(np.ones((3, 1))), 1.0)

    def test_dimension_mismatch(self, trained):
        *_, ens, _ = trained
        with pytest.raises(ValidationError):
            ens.predict(np.zeros((2, 3)))


class TestModelIO:
    def test_round_trip(self, trained, tmp_path):
        tr, va, te, ens, _ = trained
        path = tmp_path / "m.txt"
        save_model(ens, path)
        again = load_model(path)
        np.testing.assert_array_equal(again.predict(te.features), ens.predict(te.features))
        assert dumps_model(again) == path.read_text()

    def test_version_mismatch(self, trained):
        *_, ens, _ = trained
        text = dumps_model(ens).replace("rankforge-model 1", "rankforge-model 2", 1)
        with pytest.raises(ModelFormatError, match="version"):
            loads_model(text)

    def test_truncated(self, trained):
        *_, ens, _ = trained
        text = dumps_model(ens)
        with pytest.raises(ModelFormatError):
            loads_model(text[: len(text) // 2])

    def test_garbage(self):
        with pytest.raises(ModelFormatError):
            loads_model("hello world\n")
