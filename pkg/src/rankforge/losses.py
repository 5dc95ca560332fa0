"""Listwise ranking objectives: XE_NDCG, ListNet and LambdaMART.

Every function works on a single query: ``labels`` and ``scores`` are
length-``m`` vectors. The trainer calls them once per query group.

XE_NDCG is the cross entropy between a softmax score distribution and the
label distribution ``(2**y - gamma) / sum(2**y - gamma)``. For second-order
boosting the score softmax is regularized by a small ``epsilon`` added to
its normalizer, which leaves a residual mass for a phantom document and
makes the Hessian nonsingular.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, DegenerateDistributionError, UndefinedNDCGError
from .metrics import delta_ndcg_matrix, ranks_from_scores

__all__ = [
    "DEFAULT_EPSILON",
    "ScoreDistribution",
    "LossState",
    "sample_gamma",
    "gamma_rng",
    "draw_gamma",
    "xe_phi",
    "xe_rho",
    "xe_loss",
    "xe_gradient",
    "xe_state",
    "xe_hessian_dense",
    "hessian_splitting",
    "xe_newton_step",
    "listnet_phi",
    "listnet_rho",
    "listnet_state",
    "lambdamart_state",
    "log_softmax_eps",
    "objective_state",
]

DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class ScoreDistribution:
    """Regularized softmax of the scores.

    ``rho.sum() + residual_mass == 1``; the residual belongs to a phantom
    document whose label probability is zero.
    """

    rho: np.ndarray
    epsilon: float
    residual_mass: float


@dataclass
class LossState:
    """Per-query objective value and derivatives with respect to the scores."""

    value: float
    gradient: np.ndarray
    hessian_diag: np.ndarray
    newton_step: Optional[np.ndarray] = None


# --------------------------------------------------------------------------
# gamma


def sample_gamma(m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` i.i.d. U[0, 1] entries."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    return rng.uniform(0.0, 1.0, size=m)


def gamma_rng(seed: int, iteration: int, group: int) -> np.random.Generator:
    """Stream keyed on (seed, iteration, group) so that draws do not depend
    on the order in which groups are processed."""
    return np.random.default_rng([int(seed), int(iteration), int(group)])


def draw_gamma(labels, seed: int, iteration: int, group: int) -> np.ndarray:
    """Sample gamma for one query, redrawing until the label distribution
    has positive mass (only all-zero labels can fail)."""
    labels = np.asarray(labels, dtype=np.float64)
    rng = gamma_rng(seed, iteration, group)
    mass = np.exp2(labels)
    while True:
        gamma = sample_gamma(labels.shape[0], rng)
        if np.sum(mass - gamma) > 0:
            return gamma


# --------------------------------------------------------------------------
# distributions


def xe_phi(labels, gamma) -> np.ndarray:
    """Label distribution ``(2**y_i - gamma_i) / sum_j (2**y_j - gamma_j)``."""
    labels = np.asarray(labels, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != labels.shape:
        raise ConfigError("gamma must have one entry per document")
    if np.any(gamma < 0) or np.any(gamma > 1):
        raise ConfigError("gamma entries must lie in [0, 1]")
    w = np.exp2(labels) - gamma
    z = w.sum()
    if not z > 0:
        raise DegenerateDistributionError("label distribution has zero mass")
    return w / z


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def listnet_phi(labels) -> np.ndarray:
    """Top-one probabilities of the labels (softmax)."""
    return _softmax(labels)


def listnet_rho(scores) -> np.ndarray:
    """Top-one probabilities of the scores (softmax)."""
    return _softmax(scores)


def log_softmax_eps(scores, epsilon, relative):
    """Return ``(rho, log_rho, residual_mass)`` for the epsilon-regularized
    softmax, computed after max-subtraction.

    With ``relative=False`` epsilon is rescaled by ``exp(-max)`` so the
    result equals ``exp(f_i) / (sum_j exp(f_j) + epsilon)`` exactly; with
    ``relative=True`` epsilon is added to the shifted normalizer as is.
    """
    f = np.asarray(scores, dtype=np.float64)
    k = int(np.argmax(f))
    shifted = f - f[k]
    e = np.exp(shifted)
    if epsilon == 0:
        eps = 0.0
    elif relative:
        eps = float(epsilon)
    else:
        with np.errstate(over="ignore"):
            eps = float(np.exp(np.log(epsilon) - f[k]))
    # the max term is exactly 1; log1p keeps precision when the rest is small
    e_rest = e.copy()
    e_rest[k] = 0.0
    rest = e_rest.sum() + eps
    log_z = np.log1p(rest)
    denom = 1.0 + rest
    rho = e / denom
    residual = eps / denom if eps else 0.0
    return rho, shifted - log_z, residual


def _check_epsilon(epsilon, allow_zero):
    if not np.isfinite(epsilon) or epsilon < 0 or (epsilon == 0 and not allow_zero):
        raise ConfigError(f"epsilon must be {'>= 0' if allow_zero else '> 0'}, got {epsilon!r}")


def xe_rho(scores, epsilon=DEFAULT_EPSILON, relative=False) -> ScoreDistribution:
    """Score distribution ``exp(f_i) / (sum_j exp(f_j) + epsilon)``."""
    _check_epsilon(epsilon, allow_zero=False)
    rho, _, residual = log_softmax_eps(scores, epsilon, relative)
    return ScoreDistribution(rho, float(epsilon), float(residual))


# --------------------------------------------------------------------------
# XE_NDCG


def xe_state(labels, scores, gamma, epsilon=DEFAULT_EPSILON, relative=False,
             newton=False) -> LossState:
    """Value, gradient ``rho - phi``, diagonal Hessian ``rho (1 - rho)`` and
    optionally the approximate Newton step for one query.

    ``epsilon=0`` gives the plain softmax; the Newton step then needs
    ``epsilon > 0``.
    """
    _check_epsilon(epsilon, allow_zero=not newton)
    phi = xe_phi(labels, gamma)
    rho, log_rho, _ = log_softmax_eps(scores, epsilon, relative)
    value = float(-np.dot(phi, log_rho))
    grad = rho - phi
    hess = rho * (1.0 - rho)
    step = _neumann_step(phi, rho) if newton else None
    return LossState(value, grad, hess, step)


def xe_loss(labels, scores, gamma, epsilon=DEFAULT_EPSILON, relative=False) -> float:
    """Cross entropy ``-sum_i phi_i log rho_i``."""
    return xe_state(labels, scores, gamma, epsilon, relative).value


def xe_gradient(labels, scores, gamma, epsilon=DEFAULT_EPSILON, relative=False) -> np.ndarray:
    """``d loss / d f_r = rho_r - phi_r``."""
    return xe_state(labels, scores, gamma, epsilon, relative).gradient


def xe_hessian_dense(scores, epsilon=DEFAULT_EPSILON, relative=False) -> np.ndarray:
    """Full Hessian: ``rho_i (1 - rho_i)`` on the diagonal, ``-rho_i rho_j``
    elsewhere."""
    rho = xe_rho(scores, epsilon, relative).rho
    H = -np.outer(rho, rho)
    np.fill_diagonal(H, rho * (1.0 - rho))
    return H


def hessian_splitting(rho):
    """Factor ``H = D (I - S)``.

    Returns
    -------
    diag : ndarray
        Diagonal of ``D``, ``rho_i (1 - rho_i)``.
    S : ndarray of shape (m, m)
        ``S_ij = rho_j / (1 - rho_i)`` off the diagonal, zero on it.
    """
    rho = np.asarray(rho, dtype=np.float64)
    S = rho[None, :] / (1.0 - rho)[:, None]
    np.fill_diagonal(S, 0.0)
    return rho * (1.0 - rho), S


def _neumann_step(phi, rho):
    # (I + S + S^2) D^-1 grad in O(m): (S v)_k = (sum_i rho_i v_i - rho_k v_k) / (1 - rho_k)
    one_minus = 1.0 - rho
    a = (rho - phi) / (rho * one_minus)
    b = (np.dot(rho, a) - rho * a) / one_minus
    c = (np.dot(rho, b) - rho * b) / one_minus
    return a + b + c


def xe_newton_step(labels, scores, gamma, epsilon=DEFAULT_EPSILON, relative=False) -> np.ndarray:
    """Three-term Neumann approximation of ``H^{-1} grad``.

    Uses ``H^{-1} = (I - S)^{-1} D^{-1} ~ (I + S + S^2) D^{-1}``, evaluated
    with two shared weighted sums instead of forming ``S``.
    """
    return xe_state(labels, scores, gamma, epsilon, relative, newton=True).newton_step


# --------------------------------------------------------------------------
# ListNet


def listnet_state(labels, scores, epsilon=0.0, relative=False) -> LossState:
    """ListNet cross entropy between label and score softmaxes.

    ``epsilon`` regularizes the score softmax exactly as for XE_NDCG; the
    default of zero is the original ListNet loss.
    """
    _check_epsilon(epsilon, allow_zero=True)
    phi = listnet_phi(labels)
    rho, log_rho, _ = log_softmax_eps(scores, epsilon, relative)
    return LossState(float(-np.dot(phi, log_rho)), rho - phi, rho * (1.0 - rho))


# --------------------------------------------------------------------------
# LambdaMART


def lambdamart_state(labels, scores, sigma=1.0, ranks=None, tie_seed=0) -> LossState:
    """LambdaMART pseudo-gradients for one query.

    For each pair with ``y_i > y_j`` the pair contributes
    ``-sigma |dNDCG_ij| / (1 + exp(sigma (f_i - f_j)))`` to document ``i``
    and the negation to ``j``. Second-order weights are
    ``sigma^2 |dNDCG_ij| s (1 - s)`` with ``s`` the same sigmoid. The loss
    itself has no closed form, so ``value`` is reported as 0.

    Parameters
    ----------
    ranks : array-like of int, optional
        1-based ranks used for the NDCG deltas. Derived from ``scores``
        (ties broken with ``tie_seed``) when omitted.
    """
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    y = np.asarray(labels, dtype=np.float64)
    f = np.asarray(scores, dtype=np.float64)
    if ranks is None:
        ranks = ranks_from_scores(f, tie_seed)
    delta = delta_ndcg_matrix(ranks, y)
    pairs = y[:, None] > y[None, :]
    s = expit(-sigma * (f[:, None] - f[None, :]))
    lam = np.where(pairs, sigma * delta * s, 0.0)
    w = np.where(pairs, sigma * sigma * delta * s * (1.0 - s), 0.0)
    grad = lam.sum(axis=0) - lam.sum(axis=1)
    hess = w.sum(axis=1) + w.sum(axis=0)
    return LossState(0.0, grad, hess)


def objective_state(objective, labels, scores, gamma=None, epsilon=DEFAULT_EPSILON,
                    relative=True, sigma=1.0, newton=False, tie_seed=0) -> LossState:
    """Dispatch used by the trainer. LambdaMART queries without any
    relevant document contribute zero gradient and Hessian."""
    if objective == "xe_ndcg":
        return xe_state(labels, scores, gamma, epsilon, relative, newton=newton)
    if objective == "listnet":
        return listnet_state(labels, scores, epsilon, relative)
    if objective == "lambdamart":
        try:
            return lambdamart_state(labels, scores, sigma, tie_seed=tie_seed)
        except UndefinedNDCGError:
            z = np.zeros(len(labels))
            return LossState(0.0, z, z.copy())
    raise ConfigError(f"unknown objective {objective!r}")
