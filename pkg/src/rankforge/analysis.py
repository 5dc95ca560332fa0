"""Numeric certification of the XE_NDCG theory, plus brute-force oracles.

Each ``*_certify`` / ``verify_*`` function checks one instance and raises
:class:`~rankforge.exceptions.CertificationError` with a witness when a
claimed inequality fails. :func:`run_suite` runs randomized scans
over many seeded instances and summarizes them as :class:`CheckResult`
records; any failing instance can be regenerated from ``(suite, seed,
trial)`` with :func:`replay`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .exceptions import CertificationError, ConfigError, UndefinedNDCGError
from .losses import (
    log_softmax_eps,
    hessian_splitting,
    lambdamart_state,
    listnet_state,
    xe_newton_step,
    xe_phi,
    xe_state,
)
from .metrics import ideal_dcg, ranks_from_scores

__all__ = [
    "TOL",
    "BoundReport",
    "CheckResult",
    "finite_diff",
    "verify_rank_bound",
    "verify_bound",
    "lipschitz_scan",
    "hessian_certify",
    "spectral_certify",
    "newton_oracle",
    "neumann_certify",
    "SUITES",
    "run_suite",
    "replay",
    "format_report",
]

TOL = 1e-9


# --------------------------------------------------------------------------
# oracles


def finite_diff(loss: Callable[[np.ndarray], float], scores, h=1e-6) -> np.ndarray:
    """Central-difference gradient of ``loss`` at ``scores``."""
    f = np.array(scores, dtype=np.float64)
    out = np.empty_like(f)
    for i in range(f.shape[0]):
        orig = f[i]
        f[i] = orig + h
        up = loss(f)
        f[i] = orig - h
        down = loss(f)
        f[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def newton_oracle(scores, gradient, epsilon, relative=False, rtol=1e-10) -> np.ndarray:
    """Exact ``H^{-1} grad`` by LU with partial pivoting on the dense
    Hessian, followed by iterative refinement until the residual satisfies
    ``||H x - grad||_inf <= rtol ||grad||_inf``."""
    rho, _, _ = log_softmax_eps(scores, epsilon, relative)
    H = -np.outer(rho, rho)
    np.fill_diagonal(H, rho * (1.0 - rho))
    g = np.asarray(gradient, dtype=np.float64)
    try:
        x = np.linalg.solve(H, g)
        gnorm = np.abs(g).max()
        for _ in range(4):
            r = g - H @ x
            if np.abs(r).max() <= rtol * gnorm:
                break
            x = x + np.linalg.solve(H, r)
    except np.linalg.LinAlgError as exc:
        raise CertificationError(
            "newton_oracle", {"reason": f"singular Hessian: {exc}", "epsilon": epsilon}
        ) from None
    resid = np.abs(H @ x - g).max()
    if resid > rtol * np.abs(g).max():
        raise CertificationError(
            "newton_oracle", {"residual": float(resid), "gradient_norm": float(np.abs(g).max())}
        )
    return x


# --------------------------------------------------------------------------
# NDCG bound


def verify_rank_bound(scores, tie_seed=0, tol=TOL) -> bool:
    """Check ``1 / rank_r >= softmax(f)_r`` for every document.

    Tied documents are ranked by a seeded shuffle; the bound still holds
    because a tied predecessor contributes ``exp(0) = 1`` to the softmax
    normalizer.
    """
    f = np.asarray(scores, dtype=np.float64)
    ranks = ranks_from_scores(f, tie_seed)
    rho, _, _ = log_softmax_eps(f, 0.0, False)
    excess = rho - 1.0 / ranks
    worst = int(np.argmax(excess))
    if excess[worst] > tol:
        raise CertificationError("rank_bound", {
            "scores": f.tolist(), "doc": worst, "rank": int(ranks[worst]),
            "softmax": float(rho[worst]), "violation": float(excess[worst]),
        })
    return True


@dataclass
class BoundReport:
    """Outcome of :func:`verify_bound`.

    ``lhs`` is the mean XE_NDCG loss and ``rhs`` the negative translated,
    log-transformed mean NDCG; the bound says ``gap = lhs - rhs >= 0``.

    ``per_step`` holds the values along the proof chain, each of which must
    be no smaller than the next: ``ndcg_tilde``, ``after_ideal_dcg_bound``
    (ideal DCG replaced by the gamma-shifted label mass),
    ``pre_jensen`` (DCG replaced by its softmax lower bound) and
    ``post_jensen`` (log moved inside the expectations).

    ``violations`` maps every individually certified inequality to its
    largest violation (positive means broken).
    """

    lhs: float
    rhs: float
    gap: float
    per_step: Dict[str, float]
    violations: Dict[str, float] = field(default_factory=dict)
    tol: float = TOL

    @property
    def max_violation(self) -> float:
        return max(self.violations.values()) if self.violations else -np.inf

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def verify_bound(labels_per_group, scores_per_group, gammas, epsilon=0.0, tie_seed=0,
                 tol=TOL, raise_on_failure=True) -> BoundReport:
    """Certify that mean XE_NDCG loss bounds negative translated
    log-transformed mean NDCG, step by step.

    Parameters
    ----------
    labels_per_group : Dataset or sequence of label vectors
        Every group needs at least one relevant document.
    scores_per_group, gammas : sequence of vectors
        Scores and gamma per group.
    epsilon : float
        Softmax regularizer; 0 (default) is the plain softmax for which the
        bound is stated.
    """
    if hasattr(labels_per_group, "groups"):
        labels_per_group = [g.labels for g in labels_per_group.groups]
    n = len(labels_per_group)
    if n == 0 or len(scores_per_group) != n or len(gammas) != n:
        raise ConfigError("need matching, nonempty label, score and gamma lists")

    worst = {k: -np.inf for k in (
        "rank_bound", "log2_discount", "reciprocal_rank_dcg", "dcg_bound",
        "ideal_dcg_bound", "jensen_within_query",
    )}
    ndcg_sum = inv_ideal_sum = shifted_sum = pre_sum = 0.0
    log_pre_sum = post_sum = 0.0
    for q in range(n):
        y = np.asarray(labels_per_group[q], dtype=np.float64)
        f = np.asarray(scores_per_group[q], dtype=np.float64)
        gam = np.asarray(gammas[q], dtype=np.float64)
        ideal = ideal_dcg(y)
        if ideal <= 0:
            raise UndefinedNDCGError(f"group {q} has no relevant documents")
        ranks = ranks_from_scores(f, [tie_seed, q]).astype(np.float64)
        rho, log_rho, _ = log_softmax_eps(f, epsilon, False)
        phi = xe_phi(y, gam)
        gain = np.exp2(y) - 1.0
        mass = np.exp2(y) - gam
        z = mass.sum()
        dcg_f = float(np.dot(gain, 1.0 / np.log2(1.0 + ranks)))
        dcg_rr = float(np.dot(gain, 1.0 / ranks))
        dcg_soft = float(np.dot(gain, rho))
        dcg_lower = float(np.dot(mass, rho)) - 1.0
        expect = float(np.dot(phi, rho))
        post = float(np.dot(phi, log_rho))

        worst["rank_bound"] = max(worst["rank_bound"], float(np.max(rho - 1.0 / ranks)))
        worst["log2_discount"] = max(worst["log2_discount"], dcg_rr - dcg_f)
        worst["reciprocal_rank_dcg"] = max(worst["reciprocal_rank_dcg"], dcg_soft - dcg_rr)
        worst["dcg_bound"] = max(worst["dcg_bound"], dcg_lower - dcg_f)
        worst["ideal_dcg_bound"] = max(worst["ideal_dcg_bound"], ideal - z)
        worst["jensen_within_query"] = max(worst["jensen_within_query"], post - np.log(expect))

        ndcg_sum += dcg_f / ideal
        inv_ideal_sum += 1.0 / ideal
        shifted_sum += (dcg_f + 1.0) / z
        pre_sum += expect
        log_pre_sum += np.log(expect)
        post_sum += post

    ndcg_tilde = float(np.log(ndcg_sum / n + inv_ideal_sum / n))
    after_ideal = float(np.log(shifted_sum / n))
    pre_jensen = float(np.log(pre_sum / n))
    mean_log_pre = log_pre_sum / n
    post_jensen = post_sum / n
    loss = -post_jensen

    worst["chain_ideal_dcg"] = after_ideal - ndcg_tilde
    worst["chain_dcg"] = pre_jensen - after_ideal
    worst["jensen_across_queries"] = mean_log_pre - pre_jensen
    worst["chain_jensen"] = post_jensen - pre_jensen
    worst["bound"] = -loss - ndcg_tilde

    report = BoundReport(
        lhs=loss, rhs=-ndcg_tilde, gap=loss + ndcg_tilde,
        per_step={
            "ndcg_tilde": ndcg_tilde, "after_ideal_dcg_bound": after_ideal,
            "pre_jensen": pre_jensen, "post_jensen": post_jensen,
        },
        violations={k: float(v) for k, v in worst.items()}, tol=tol,
    )
    if raise_on_failure and not report.passed:
        step = max(report.violations, key=report.violations.get)
        raise CertificationError("bound", {"step": step, "violation": report.violations[step]})
    return report


# --------------------------------------------------------------------------
# Lipschitz constants


@dataclass
class LipschitzReport:
    objective: str
    trials: int
    max_l1: float
    max_l1_ratio: float
    max_component_ratio: float
    passed: bool
    witness: Optional[dict] = None


def _gradient_for(objective, y, f, gamma, sigma, epsilon):
    if objective == "xe_ndcg":
        return xe_state(y, f, gamma, epsilon).gradient
    if objective == "listnet":
        return listnet_state(y, f, epsilon).gradient
    if objective == "lambdamart":
        return lambdamart_state(y, f, sigma).gradient
    raise ConfigError(f"unknown objective {objective!r}")


def lipschitz_scan(objective="xe_ndcg", trials=1000, m_range=(1, 200), seed=0, sigma=1.0,
                   epsilon=1e-5, raise_on_failure=True) -> LipschitzReport:
    """Largest observed L1 gradient norm over random instances.

    The bound is 2 for XE_NDCG and ListNet, and ``sigma m^2`` for LambdaMART
    (with ``sigma m`` per component). Ratios ``observed / bound`` are
    reported so instances of different size are comparable.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    max_l1 = max_ratio = max_comp = 0.0
    witness = None
    for t in range(trials):
        y, f, gamma = _lipschitz_instance(seed, t, m_range, objective)
        m = y.shape[0]
        g = _gradient_for(objective, y, f, gamma, sigma, epsilon)
        l1 = float(np.abs(g).sum())
        if objective == "lambdamart":
            ratio = l1 / (sigma * m * m)
            comp = float(np.abs(g).max()) / (sigma * m)
        else:
            ratio, comp = l1 / 2.0, 0.0
        max_l1 = max(max_l1, l1)
        max_comp = max(max_comp, comp)
        if ratio > max_ratio:
            max_ratio = ratio
        if (ratio > 1.0 or comp > 1.0) and witness is None:
            witness = {"suite": "lipschitz", "objective": objective, "seed": seed, "trial": t,
                       "m": m, "l1": l1, "ratio": ratio, "component_ratio": comp}
    passed = witness is None
    if raise_on_failure and not passed:
        raise CertificationError("lipschitz", witness)
    return LipschitzReport(objective, trials, max_l1, max_ratio, max_comp, passed, witness)


# --------------------------------------------------------------------------
# Hessian structure


@dataclass
class HessianReport:
    m: int
    epsilon: float
    min_dominance_margin: float
    min_diagonal: float
    min_pivot: float
    passed: bool


def hessian_certify(scores, epsilon, relative=False, raise_on_failure=True) -> HessianReport:
    """Check strict diagonal dominance, a positive diagonal and Cholesky
    success of the regularized softmax Hessian.

    ``epsilon=0`` is accepted to exercise the singular case, which is
    expected to fail.
    """
    f = np.asarray(scores, dtype=np.float64)
    rho, _, residual = log_softmax_eps(f, epsilon, relative)
    diag = rho * (1.0 - rho)
    off = rho * (rho.sum() - rho)
    # diag - off equals rho * residual_mass; the subtraction alone is
    # cancellation noise when epsilon is tiny, so it only serves as a cross-check
    margin = rho * residual
    consistent = bool(np.all(np.abs((diag - off) - margin) <= 1e-12))
    H = -np.outer(rho, rho)
    np.fill_diagonal(H, diag)
    try:
        L = np.linalg.cholesky(H)
        pivot = float(np.min(np.diag(L)))
    except np.linalg.LinAlgError:
        pivot = 0.0
    ok = bool(consistent and np.all(margin > 0) and np.all(diag > 0) and pivot > 0)
    rep = HessianReport(f.shape[0], float(epsilon), float(margin.min()), float(diag.min()),
                        pivot, ok)
    if raise_on_failure and not ok:
        raise CertificationError("hessian", asdict(rep))
    return rep


@dataclass
class SpectralReport:
    m: int
    epsilon: float
    estimate: float
    lower_estimate: float
    max_row_sum: float
    row_formula_error: float
    passed: bool


def spectral_certify(scores, epsilon, relative=False, iterations=500,
                     raise_on_failure=True) -> SpectralReport:
    """Bound the spectral radius of ``S`` (with ``H = D (I - S)``).

    Power iteration from the all-ones vector yields Collatz-Wielandt
    bounds ``min_i (Sx)_i/x_i <= r(S) <= max_i (Sx)_i/x_i``; the upper one
    is reported as ``estimate``. It starts at the max row sum and never
    increases. Row sums are also compared to ``1 - eps' / (1 - rho_i)``
    where ``eps'`` is the residual mass.
    """
    f = np.asarray(scores, dtype=np.float64)
    rho, _, residual = log_softmax_eps(f, epsilon, relative)
    _, S = hessian_splitting(rho)
    rows = S.sum(axis=1)
    formula = 1.0 - residual / (1.0 - rho)
    if f.shape[0] == 1:
        formula = np.zeros(1)
    x = np.ones(f.shape[0])
    upper, lower = float(rows.max()), float(rows.min())
    for _ in range(iterations):
        y = S @ x
        if not np.any(y):
            upper = lower = 0.0
            break
        ratio = y / x
        upper_new, lower = float(ratio.max()), float(ratio.min())
        converged = upper_new - lower <= 1e-12 * max(upper_new, 1e-300)
        upper = min(upper, upper_new)
        if converged:
            break
        x = y / y.max()
    row_err = float(np.abs(rows - formula).max())
    ok = bool(upper < 1.0 and rows.max() < 1.0 and upper <= rows.max() * (1 + 1e-12)
              and row_err <= 1e-12 and np.all(formula < 1.0))
    rep = SpectralReport(f.shape[0], float(epsilon), upper, lower, float(rows.max()), row_err, ok)
    if raise_on_failure and not ok:
        raise CertificationError("spectral", asdict(rep))
    return rep


@dataclass
class NeumannReport:
    error: float
    bound: float
    s_norm: float
    oracle_residual: float
    passed: bool


def neumann_certify(labels, scores, gamma, epsilon, relative=False,
                    raise_on_failure=True) -> NeumannReport:
    """Compare the three-term Newton step with the exact solve.

    Truncating ``sum_k S^k`` after ``S^2`` leaves an error of at most
    ``||S||^3 / (1 - ||S||) * ||D^{-1} grad||`` in the infinity norm.
    """
    state = xe_state(labels, scores, gamma, epsilon, relative)
    step = xe_newton_step(labels, scores, gamma, epsilon, relative)
    exact = newton_oracle(scores, state.gradient, epsilon, relative)
    rho, _, _ = log_softmax_eps(scores, epsilon, relative)
    diag, S = hessian_splitting(rho)
    s = float(S.sum(axis=1).max())
    scaled = np.abs(state.gradient / diag).max()
    bound = s ** 3 / (1.0 - s) * scaled
    err = float(np.abs(step - exact).max())
    H = -np.outer(rho, rho)
    np.fill_diagonal(H, diag)
    resid = float(np.abs(H @ exact - state.gradient).max())
    rep = NeumannReport(err, float(bound), s, resid, bool(err <= bound))
    if raise_on_failure and not rep.passed:
        raise CertificationError("neumann", asdict(rep))
    return rep


# --------------------------------------------------------------------------
# randomized suites


@dataclass
class CheckResult:
    """One line of a certification report."""

    name: str
    instances: int
    max_violation: float
    passed: bool
    witness: Optional[dict] = None

    def tsv(self) -> str:
        return f"{self.name}\t{self.instances}\t{self.max_violation:.6g}\t{'pass' if self.passed else 'FAIL'}"


def _rng(seed, trial):
    return np.random.default_rng([int(seed), int(trial)])


def _labels(rng, m, need_relevant=True):
    while True:
        y = rng.integers(0, 5, size=m).astype(np.float64)
        if not need_relevant or y.max() > 0:
            return y


def _lipschitz_instance(seed, trial, m_range, objective):
    rng = _rng(seed, trial)
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    y = _labels(rng, m, need_relevant=objective == "lambdamart")
    scale = 10.0 ** rng.uniform(-1, 1)
    f = rng.standard_normal(m) * scale
    return y, f, rng.uniform(0, 1, size=m)


def _bound_instance(seed, trial, max_groups=4, max_m=30):
    rng = _rng(seed, trial)
    n = int(rng.integers(1, max_groups + 1))
    ys, fs, gs = [], [], []
    for _ in range(n):
        m = int(rng.integers(1, max_m + 1))
        ys.append(_labels(rng, m))
        fs.append(rng.standard_normal(m))
        gs.append(rng.uniform(0, 1, size=m))
    return ys, fs, gs


_EPSILONS = (1e-5, 1e-2, 1.0)


def _matrix_instance(seed, trial, max_m):
    rng = _rng(seed, trial)
    m = int(rng.integers(1, max_m + 1))
    eps = _EPSILONS[int(rng.integers(0, len(_EPSILONS)))]
    return rng.standard_normal(m), eps, rng


def _check_bound(seed, trial, **_):
    ys, fs, gs = _bound_instance(seed, trial)
    rep = verify_bound(ys, fs, gs, tie_seed=trial, raise_on_failure=False)
    return rep.max_violation, None if rep.passed else {
        "step": max(rep.violations, key=rep.violations.get), **rep.violations}


def _check_hessian(seed, trial, inject=False, **_):
    f, eps, _ = _matrix_instance(seed, trial, 100)
    if inject and trial == 0:
        eps = 0.0
    rep = hessian_certify(f, eps, raise_on_failure=False)
    # violation is the shortfall of the weakest of the three conditions
    viol = 0.0 - min(rep.min_dominance_margin, rep.min_diagonal, rep.min_pivot) + 0.0
    return viol, None if rep.passed else asdict(rep)


def _check_spectral(seed, trial, **_):
    f, eps, _ = _matrix_instance(seed, trial, 100)
    rep = spectral_certify(f, eps, raise_on_failure=False)
    return rep.estimate - 1.0, None if rep.passed else asdict(rep)


def _check_neumann(seed, trial, **_):
    f, eps, rng = _matrix_instance(seed, trial, 64)
    y = _labels(rng, f.shape[0], need_relevant=False)
    gamma = rng.uniform(0, 1, size=f.shape[0])
    rep = neumann_certify(y, f, gamma, eps, raise_on_failure=False)
    return rep.error - rep.bound, None if rep.passed else asdict(rep)


def gradient_relative_error(numeric, analytic) -> float:
    """``||numeric - analytic||_inf / max(||numeric||_inf, ||analytic||_inf)``."""
    scale = max(np.abs(numeric).max(), np.abs(analytic).max())
    if scale == 0:
        return 0.0
    return float(np.abs(numeric - analytic).max() / scale)


def gradient_instance(seed, trial, max_m=50):
    rng = _rng(seed, trial)
    m = int(rng.integers(1, max_m + 1))
    y = _labels(rng, m, need_relevant=False)
    return y, rng.standard_normal(m), rng.uniform(0, 1, size=m)


def _check_gradients(seed, trial, **_):
    y, f, gamma = gradient_instance(seed, trial)
    errs = {}
    errs["xe_ndcg"] = gradient_relative_error(
        finite_diff(lambda s: xe_state(y, s, gamma, 1e-5).value, f),
        xe_state(y, f, gamma, 1e-5).gradient)
    errs["listnet"] = gradient_relative_error(
        finite_diff(lambda s: listnet_state(y, s).value, f), listnet_state(y, f).gradient)
    worst = max(errs.values())
    return worst - 1e-6, None if worst < 1e-6 else errs


def _check_lipschitz(seed, trial, **_):
    viol, wit = -np.inf, None
    for obj in ("xe_ndcg", "lambdamart"):
        y, f, gamma = _lipschitz_instance(seed, trial, (1, 200), obj)
        g = _gradient_for(obj, y, f, gamma, 1.0, 1e-5)
        m = y.shape[0]
        if obj == "lambdamart":
            v = max(np.abs(g).sum() - m * m, np.abs(g).max() - m)
        else:
            v = np.abs(g).sum() - 2.0
        if v > 0 and wit is None:
            wit = {"objective": obj, "l1": float(np.abs(g).sum()), "m": m}
        viol = max(viol, float(v))
    return viol, wit


SUITES = {
    "gradients": _check_gradients,
    "bound": _check_bound,
    "lipschitz": _check_lipschitz,
    "hessian": _check_hessian,
    "spectral": _check_spectral,
    "neumann": _check_neumann,
}


def run_suite(name, trials, seed=0, inject_failure=False) -> CheckResult:
    """Run ``trials`` seeded instances of one suite.

    ``max_violation`` is the largest signed slack across instances (positive
    means some inequality broke). ``inject_failure`` forces a known-bad
    first instance (the singular epsilon=0 Hessian) to exercise the failure
    path.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    if inject_failure and name != "hessian":
        raise ConfigError("failure injection is only available for the hessian suite")
    check = SUITES[name]
    worst, witness = -np.inf, None
    for t in range(trials):
        v, wit = check(seed, t, inject=inject_failure)
        worst = max(worst, v)
        if wit is not None and witness is None:
            witness = {"suite": name, "seed": seed, "trial": t, "inject": inject_failure,
                       "detail": _jsonable(wit)}
    return CheckResult(name, trials, float(worst), witness is None, witness)


def replay(witness) -> CheckResult:
    """Re-run the single instance described by a failure witness."""
    if isinstance(witness, str):
        witness = json.loads(witness)
    check = SUITES[witness["suite"]]
    v, wit = check(witness["seed"], witness["trial"], inject=witness.get("inject", False))
    return CheckResult(witness["suite"], 1, float(v), wit is None,
                       None if wit is None else {**witness, "detail": _jsonable(wit)})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def format_report(results: List[CheckResult]) -> str:
    lines = ["check\tinstances\tmax_violation\tstatus"]
    lines += [r.tsv() for r in results]
    return "\n".join(lines) + "\n"
