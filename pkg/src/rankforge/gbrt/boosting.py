"""Boosting loop: listwise objectives over histogram trees with NDCG@k
early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import numpy as np

from ..dataset import Dataset
from ..exceptions import ConfigError, EmptyDatasetError, ValidationError
from ..losses import draw_gamma, objective_state
from ..metrics import mean_ndcg
from .binning import apply_bins, fit_bin_edges
from .tree import RegressionTree, fit_tree

logger = logging.getLogger(__name__)

__all__ = [
    "OBJECTIVES",
    "PRESETS",
    "TrainConfig",
    "Ensemble",
    "IterationRecord",
    "TrainingLog",
    "train",
    "predict",
]

OBJECTIVES = ("xe_ndcg", "listnet", "lambdamart")
NEWTON_MODES = ("diagonal", "full")

# Overrides on top of the Web30K-style defaults of TrainConfig.
PRESETS = {
    "web30k": {},
    "yahoo": {"num_leaves": 200, "min_data_in_leaf": 100},
}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for :func:`train`.

    ``newton_mode="diagonal"`` hands per-document gradients and diagonal
    Hessians to the tree learner. ``"full"`` (XE_NDCG only) uses the
    approximate Newton step ``H^{-1} grad`` as a pseudo-gradient with unit
    Hessian.

    ``epsilon`` regularizes the score softmax; with ``relative_epsilon`` it
    is added after max-subtraction, i.e. relative to the normalizer scale.
    """

    objective: str = "xe_ndcg"
    max_bin: int = 255
    num_leaves: int = 400
    min_data_in_leaf: int = 50
    min_sum_hessian_in_leaf: float = 0.0
    lambda_l2: float = 0.0
    learning_rate: float = 0.02
    sigma: float = 1.0
    max_trees: int = 500
    early_stopping_rounds: int = 50
    eval_at: int = 5
    newton_mode: str = "diagonal"
    epsilon: float = 1e-5
    relative_epsilon: bool = True
    resample_gamma: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.newton_mode not in NEWTON_MODES:
            raise ConfigError(f"newton_mode must be one of {NEWTON_MODES}")
        if self.newton_mode == "full" and self.objective != "xe_ndcg":
            raise ConfigError("newton_mode='full' is only defined for xe_ndcg")
        if self.max_bin < 2:
            raise ConfigError("max_bin must be >= 2")
        if self.num_leaves < 2:
            raise ConfigError("num_leaves must be >= 2")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.max_trees < 1:
            raise ConfigError("max_trees must be >= 1")
        if self.early_stopping_rounds < 1:
            raise ConfigError("early_stopping_rounds must be >= 1")
        if self.min_data_in_leaf < 0 or self.min_sum_hessian_in_leaf < 0 or self.lambda_l2 < 0:
            raise ConfigError("leaf constraints and lambda_l2 must be nonnegative")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if self.eval_at < 1:
            raise ConfigError("eval_at must be >= 1")

    @classmethod
    def from_preset(cls, name="web30k", **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)


@dataclass
class Ensemble:
    """Additive tree model: ``f(x) = sum_t learning_rate * tree_t(x)``."""

    trees: List[RegressionTree]
    learning_rate: float
    bin_edges: list
    num_features: int
    objective: str = "xe_ndcg"

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.num_features:
            raise ValidationError(
                f"expected a matrix with {self.num_features} features, got shape {X.shape}"
            )
        scores = np.zeros(X.shape[0])
        for tree in self.trees:
            scores += self.learning_rate * tree.predict(X)
        return scores

    def __len__(self):
        return len(self.trees)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    train_loss: float
    valid_ndcg: float


@dataclass
class TrainingLog:
    """Per-iteration history plus the state at the selected iteration.

    ``train_scores`` are the trainer's internal scores for the returned
    (truncated) ensemble.
    """

    records: List[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    train_scores: Optional[np.ndarray] = None

    def to_tsv(self, cutoff=5) -> str:
        lines = [f"iteration\ttrain_loss\tvalid_ndcg@{cutoff}"]
        for r in self.records:
            lines.append(f"{r.iteration}\t{r.train_loss:.17g}\t{r.valid_ndcg:.17g}")
        return "\n".join(lines) + "\n"


def _check_valid(valid_set):
    for g in valid_set.groups:
        if not np.any(g.labels > 0):
            raise ValidationError(
                f"validation query {g.query_id!r} has no relevant documents; "
                "apply filter_no_relevant first"
            )


def _group_states(config, dataset, scores, iteration):
    """Per-document gradient and Hessian for the whole training set, plus
    the gammas drawn this iteration."""
    off = dataset.offsets
    grad = np.empty(scores.shape[0])
    hess = np.empty(scores.shape[0])
    gammas = []
    full = config.newton_mode == "full"
    for gi, g in enumerate(dataset.groups):
        a, b = off[gi], off[gi + 1]
        gamma = None
        if config.objective == "xe_ndcg":
            it = iteration if config.resample_gamma else 0
            gamma = draw_gamma(g.labels, config.seed, it, gi)
        gammas.append(gamma)
        st = objective_state(
            config.objective, g.labels, scores[a:b], gamma=gamma, epsilon=config.epsilon,
            relative=config.relative_epsilon, sigma=config.sigma, newton=full,
            tie_seed=[config.seed, iteration, gi],
        )
        if full:
            grad[a:b] = st.newton_step
            hess[a:b] = 1.0
        else:
            grad[a:b] = st.gradient
            hess[a:b] = st.hessian_diag
    return grad, hess, gammas


def _mean_loss(config, dataset, scores, gammas):
    if config.objective == "lambdamart":
        return 0.0
    off = dataset.offsets
    total = 0.0
    for gi, g in enumerate(dataset.groups):
        st = objective_state(
            config.objective, g.labels, scores[off[gi]:off[gi + 1]], gamma=gammas[gi],
            epsilon=config.epsilon, relative=config.relative_epsilon,
        )
        total += st.value
    return total / dataset.n


def train(train_set: Dataset, valid_set: Optional[Dataset] = None,
          config: Optional[TrainConfig] = None):
    """Fit a boosted tree ensemble minimizing the mean per-query loss.

    Each iteration computes per-query loss states at the current scores
    (XE_NDCG draws a fresh gamma per query), grows one tree on the stacked
    per-document gradients and Hessians, and adds it with shrinkage. When a
    validation set is given, NDCG@``eval_at`` is tracked after every tree and
    training stops once it has not improved for ``early_stopping_rounds``
    iterations; the ensemble is truncated at the best iteration.

    Returns
    -------
    ensemble : Ensemble
    log : TrainingLog
        ``train_loss`` is the mean loss after adding the iteration's tree,
        evaluated with that iteration's gamma (always 0 for LambdaMART).
    """
    config = config or TrainConfig()
    if train_set.n == 0:
        raise EmptyDatasetError("training set is empty")
    if valid_set is not None:
        if valid_set.n == 0:
            raise EmptyDatasetError("validation set is empty")
        if valid_set.d != train_set.d:
            raise ValidationError("train and valid feature dimensions differ")
        _check_valid(valid_set)

    X = train_set.features
    edges = fit_bin_edges(X, config.max_bin)
    binned = apply_bins(X, edges)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    lr = config.learning_rate

    scores = np.zeros(train_set.num_docs)
    valid_scores = np.zeros(valid_set.num_docs) if valid_set is not None else None
    trees, log = [], TrainingLog()
    best_ndcg, best_iter, best_scores = -np.inf, 0, scores.copy()

    for it in range(config.max_trees):
        grad, hess, gammas = _group_states(config, train_set, scores, it)
        tree, leaf_of = fit_tree(
            binned, grad, hess, num_leaves=config.num_leaves,
            min_data_in_leaf=config.min_data_in_leaf,
            min_sum_hessian_in_leaf=config.min_sum_hessian_in_leaf,
            lambda_l2=config.lambda_l2, n_bins=n_bins, bin_edges=edges,
        )
        trees.append(tree)
        scores += lr * tree.value[leaf_of]
        loss = _mean_loss(config, train_set, scores, gammas)

        if valid_set is not None:
            valid_scores += lr * tree.predict(valid_set.features)
            v = mean_ndcg(valid_set, valid_scores, config.eval_at, tie_seed=config.seed)
        else:
            v = float("nan")
        log.records.append(IterationRecord(it, loss, v))
        logger.debug("iter %d loss %.6f valid ndcg@%d %.5f", it, loss, config.eval_at, v)

        if valid_set is None:
            best_iter, best_scores = it, scores
            continue
        if v > best_ndcg:
            best_ndcg, best_iter, best_scores = v, it, scores.copy()
        elif it - best_iter >= config.early_stopping_rounds:
            logger.info("early stopping at iteration %d (best %d)", it, best_iter)
            break

    log.best_iteration = best_iter
    log.train_scores = best_scores.copy()
    ensemble = Ensemble(trees[:best_iter + 1], lr, edges, train_set.d, config.objective)
    return ensemble, log


def predict(ensemble: Ensemble, features) -> np.ndarray:
    """Scores for raw feature rows."""
    return ensemble.predict(features)
