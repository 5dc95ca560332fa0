"""Noise protocols for robustness experiments and the experiment runner.

Three ways of corrupting training data:

* negative augmentation: pad each query with documents from other queries,
  labelled non-relevant;
* label perturbation: redraw a random subset of labels from a skewed grade
  distribution;
* cascade clicks: replace graded labels by simulated single-click
  impressions over randomly shuffled lists.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import stats

from .dataset import Dataset, QueryGroup, filter_no_relevant, split
from .exceptions import ConfigError, ValidationError
from .gbrt import TrainConfig, train
from .metrics import mean_ndcg

logger = logging.getLogger(__name__)

__all__ = [
    "ClickModel",
    "PerturbSpec",
    "augment_negatives",
    "perturb_labels",
    "cascade_clicks",
    "ExperimentRow",
    "SummaryRow",
    "ExperimentResult",
    "run_experiment",
    "PROTOCOLS",
    "MODELS",
]

PROTOCOLS = ("augment", "perturb", "clicks")
MODELS = ("lambdamart", "xe_ndcg")


@dataclass(frozen=True)
class ClickModel:
    """Cascade user: scans top-down, clicks grade ``g`` with
    ``click_prob[g]``, stops at the first click."""

    click_prob: tuple = (0.05, 0.3, 0.5, 0.7, 0.95)
    impressions_per_query: int = 10

    def __post_init__(self):
        probs = tuple(float(p) for p in self.click_prob)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("click probabilities must lie in [0, 1]")
        if self.impressions_per_query < 1:
            raise ConfigError("impressions_per_query must be >= 1")
        object.__setattr__(self, "click_prob", probs)

    def with_noise(self, p0):
        """Same model with the grade-0 click probability replaced."""
        return ClickModel((p0,) + self.click_prob[1:], self.impressions_per_query)


@dataclass(frozen=True)
class PerturbSpec:
    """Each label is redrawn with probability ``fraction`` from
    ``grade_dist`` over grades 0..4."""

    fraction: float
    grade_dist: tuple = (0.5, 0.2, 0.15, 0.1, 0.05)

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("fraction must lie in [0, 1]")
        dist = tuple(float(p) for p in self.grade_dist)
        if any(p < 0 for p in dist) or abs(sum(dist) - 1.0) > 1e-9:
            raise ConfigError("grade_dist must be a probability vector")
        object.__setattr__(self, "grade_dist", dist)


def augment_negatives(train_set: Dataset, percent: float, rng: np.random.Generator) -> Dataset:
    """Append ``ceil(percent * m)`` non-relevant documents to every query.

    Extra documents are drawn uniformly (with replacement) from the pooled
    documents of all *other* queries and labelled 0. ``percent`` is a
    fraction: 0.4 grows a 10-document query to 14.
    """
    if percent < 0:
        raise ConfigError("percent must be >= 0")
    if percent == 0:
        return train_set
    if train_set.n < 2:
        raise ValidationError("augmentation needs at least two query groups")
    X, off = train_set.features, train_set.offsets
    N = train_set.num_docs
    groups = []
    for gi, g in enumerate(train_set.groups):
        k = math.ceil(percent * g.m - 1e-9)
        start = off[gi]
        # draw from the N - m outside rows, then skip over this group's block
        idx = rng.integers(0, N - g.m, size=k)
        idx = np.where(idx >= start, idx + g.m, idx)
        groups.append(QueryGroup(
            g.query_id, np.vstack([g.features, X[idx]]), np.concatenate([g.labels, np.zeros(k)])
        ))
    return Dataset(tuple(groups), train_set.d)


def perturb_labels(train_set: Dataset, spec: PerturbSpec, rng: np.random.Generator) -> Dataset:
    """Redraw a random subset of labels (independent coin flips at rate
    ``spec.fraction``) from ``spec.grade_dist``."""
    if spec.fraction == 0:
        return train_set
    grades = np.arange(len(spec.grade_dist), dtype=np.float64)
    groups = []
    for g in train_set.groups:
        pick = rng.random(g.m) < spec.fraction
        new = rng.choice(grades, size=g.m, p=spec.grade_dist)
        groups.append(QueryGroup(g.query_id, g.features, np.where(pick, new, g.labels)))
    return Dataset(tuple(groups), train_set.d)


def cascade_clicks(train_set: Dataset, model: ClickModel, rng: np.random.Generator,
                   stats_out: dict = None) -> Dataset:
    """Turn graded queries into click impressions.

    For each query and each of ``model.impressions_per_query`` impressions
    the documents are reshuffled, scanned from the top, and each one is
    clicked with the probability of its grade. The scanned prefix up to
    and including the first click becomes a group whose only positive
    label is that click. Impressions without a click are dropped.

    The new query id is ``"<original>:<impression>"``.
    """
    probs = np.asarray(model.click_prob)
    groups, dropped, total = [], 0, 0
    for g in train_set.groups:
        grades = g.labels.astype(np.int64)
        if np.any(grades != g.labels) or grades.max() >= probs.shape[0]:
            raise ValidationError(
                f"query {g.query_id!r}: click simulation needs integer grades 0..{probs.shape[0] - 1}"
            )
        p = probs[grades]
        for imp in range(model.impressions_per_query):
            total += 1
            order = rng.permutation(g.m)
            clicks = rng.random(g.m) < p[order]
            if not clicks.any():
                dropped += 1
                continue
            stop = int(np.argmax(clicks)) + 1
            labels = np.zeros(stop)
            labels[-1] = 1.0
            groups.append(QueryGroup(f"{g.query_id}:{imp}", g.features[order[:stop]], labels))
    if total:
        logger.info("cascade clicks: dropped %d of %d impressions without a click", dropped, total)
    if stats_out is not None:
        stats_out.update(impressions=total, dropped=dropped)
    return Dataset(tuple(groups), train_set.d)


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentRow:
    protocol: str
    sweep_value: float
    trial: int
    model: str
    ndcg_at_5: float


@dataclass(frozen=True)
class SummaryRow:
    protocol: str
    sweep_value: float
    trials: int
    mean_lambdamart: float
    std_lambdamart: float
    mean_xe_ndcg: float
    std_xe_ndcg: float
    mean_diff: float
    t_statistic: float
    p_value: float


@dataclass
class ExperimentResult:
    protocol: str
    sweep: tuple
    rows: List[ExperimentRow] = field(default_factory=list)

    def values(self, model, sweep_value) -> np.ndarray:
        """NDCG@5 per trial, ordered by trial."""
        sel = sorted((r.trial, r.ndcg_at_5) for r in self.rows
                     if r.model == model and r.sweep_value == sweep_value)
        return np.array([v for _, v in sel])

    def summary(self) -> List[SummaryRow]:
        out = []
        for v in self.sweep:
            lm, xe = self.values("lambdamart", v), self.values("xe_ndcg", v)
            diff = xe - lm
            if diff.shape[0] >= 2 and np.any(diff != diff[0]):
                t, p = stats.ttest_rel(xe, lm)
            else:
                t = p = float("nan")
            ddof = 1 if lm.shape[0] > 1 else 0
            out.append(SummaryRow(
                self.protocol, v, lm.shape[0], float(lm.mean()), float(lm.std(ddof=ddof)),
                float(xe.mean()), float(xe.std(ddof=ddof)), float(diff.mean()), float(t), float(p),
            ))
        return out

    def degradation(self, model, clean, noisy) -> np.ndarray:
        """Per-trial NDCG drop from the ``clean`` to the ``noisy`` sweep value."""
        return self.values(model, clean) - self.values(model, noisy)

    def write_tsv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["protocol", "sweep_value", "trial", "model", "ndcg_at_5"])
            for r in self.rows:
                w.writerow([r.protocol, f"{r.sweep_value:g}", r.trial, r.model, f"{r.ndcg_at_5:.6f}"])

    def write_summary_tsv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["protocol", "sweep_value", "trials", "mean_lambdamart", "std_lambdamart",
                        "mean_xe_ndcg", "std_xe_ndcg", "mean_diff", "t_statistic", "p_value"])
            for s in self.summary():
                w.writerow([s.protocol, f"{s.sweep_value:g}", s.trials]
                           + [f"{x:.6f}" if np.isfinite(x) else "nan" for x in (
                               s.mean_lambdamart, s.std_lambdamart, s.mean_xe_ndcg,
                               s.std_xe_ndcg, s.mean_diff, s.t_statistic)]
                           + [f"{s.p_value:.3g}" if np.isfinite(s.p_value) else "nan"])

    def write_plot_data(self, path):
        """x = sweep value; one column per model plus their difference."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["x", "lambdamart", "xe_ndcg", "difference"])
            for s in self.summary():
                w.writerow([f"{s.sweep_value:g}", f"{s.mean_lambdamart:.6f}",
                            f"{s.mean_xe_ndcg:.6f}", f"{s.mean_diff:.6f}"])


def _apply_protocol(protocol, data, value, rng, click_model):
    if protocol == "augment":
        return augment_negatives(data, value, rng)
    if protocol == "perturb":
        return perturb_labels(data, PerturbSpec(value), rng)
    if protocol == "clicks":
        return cascade_clicks(data, click_model.with_noise(value), rng)
    raise ConfigError(f"protocol must be one of {PROTOCOLS}")


def _run_trial(dataset, protocol, sweep, trial, config, seed, click_model):
    rows = []
    train_set, valid_set, test_set = split(dataset, seed=[seed, trial])
    test_set = filter_no_relevant(test_set)
    clean_valid = filter_no_relevant(valid_set)
    for si, v in enumerate(sweep):
        rng = np.random.default_rng([seed, trial, si])
        noisy_train = _apply_protocol(protocol, train_set, v, rng, click_model)
        if protocol == "clicks":
            noisy_valid = filter_no_relevant(
                _apply_protocol(protocol, valid_set, v, rng, click_model))
        else:
            noisy_valid = clean_valid
        for model in MODELS:
            cfg = config.replace(objective=model, seed=trial)
            ens, _ = train(noisy_train, noisy_valid, cfg)
            score = mean_ndcg(test_set, ens.predict(test_set.features), 5, tie_seed=trial)
            rows.append(ExperimentRow(protocol, float(v), trial, model, score))
    return rows


def default_workers():
    env = os.environ.get("RANKFORGE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("RANKFORGE_THREADS must be an integer") from None
        if n < 1:
            raise ConfigError("RANKFORGE_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def run_experiment(dataset: Dataset, protocol: str, sweep: Sequence[float], trials: int,
                   config: TrainConfig = None, seed: int = 0, click_model: ClickModel = None,
                   n_jobs: int = None) -> ExperimentResult:
    """Compare LambdaMART and XE_NDCG-MART under increasing noise.

    Every trial draws a fresh 60/20/20 split. For each sweep value the
    training partition is corrupted (validation too for clicks), both
    models are trained with the same seed, and NDCG@5 is measured on the
    untouched test partition.

    Sweep values are fractions for ``augment`` and ``perturb`` and the
    grade-0 click probability for ``clicks``.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {PROTOCOLS}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    sweep = tuple(float(v) for v in sweep)
    if not sweep:
        raise ConfigError("sweep must contain at least one value")
    config = config or TrainConfig()
    click_model = click_model or ClickModel()
    n_jobs = n_jobs or default_workers()
    args = [(dataset, protocol, sweep, t, config, seed, click_model) for t in range(trials)]
    if n_jobs == 1 or trials == 1:
        parts = [_run_trial(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(n_jobs, trials)) as pool:
            parts = list(pool.map(_run_trial, *zip(*args)))
    result = ExperimentResult(protocol, sweep)
    for rows in parts:
        result.rows.extend(rows)
    return result
