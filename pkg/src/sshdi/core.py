"""Split-and-smoothing estimation, the resampling variance estimator, and inference.

A single split draws half of the rows for estimation (``d1``) and the rest for
selection (``d2``). The selector picks a set ``S`` on ``d2``; each coefficient
``j`` is then estimated on ``d1`` by least squares of ``y`` on an intercept and
the columns ``{j} | S``. Averaging over many random splits gives the smoothed
estimate, and the split-membership indicators give its variance.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg, stats
from threadpoolctl import threadpool_limits

from .datagen import CovarianceKind, Dataset, build_covariance, draw_truth, generate_dataset
from .errors import DegenerateResamples, RunAborted, SelectionTooLarge, SSHDIError
from .numerics import RANK_TOL, RngStream, cholesky
from .selection import SelectedSet, SelectorConfig, select

MAX_FAILURE_RATE = 0.05
ADJUSTMENTS = ("none", "bonferroni")

Selector = Callable[[Dataset, np.random.Generator], SelectedSet]


@dataclass(frozen=True)
class SplitPlan:
    """Zero-based row indices of the estimation half ``d1`` and selection half ``d2``."""

    d1: np.ndarray
    d2: np.ndarray

    @classmethod
    def draw(cls, n: int, rng: np.random.Generator) -> "SplitPlan":
        perm = rng.permutation(n)
        return cls(d1=np.sort(perm[: n // 2]), d2=np.sort(perm[n // 2:]))

    def membership(self, n: int) -> np.ndarray:
        member = np.zeros(n, dtype=bool)
        member[self.d1] = True
        return member


@dataclass
class OneSplitResult:
    """Estimates from one random split.

    ``beta_tilde`` holds 0 where the focal column was dropped as collinear;
    those positions are marked in ``absent``. ``membership`` marks rows in d1.
    """

    beta_tilde: np.ndarray
    intercept: float
    selected: SelectedSet
    membership: np.ndarray
    absent: np.ndarray


def partial_regressions(x1, y1, selected):
    """Per-coordinate partial least-squares coefficients on the estimation half.

    Column ``j`` is regressed jointly with an intercept and the columns in
    ``selected``. For ``j`` in ``selected`` all share one fit; for the others the
    coefficient is obtained by residualizing ``x_j`` and ``y`` on the
    intercept-plus-selected design, which gives the same number as the full fit.

    Returns ``(beta_tilde, absent, intercept)`` where ``intercept`` belongs to
    the fit on the selected set alone.
    """
    x1 = np.asarray(x1, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    m, p = x1.shape
    sel = np.asarray(selected, dtype=np.int64)
    xbar = x1.mean(axis=0)
    ybar = y1.mean()
    xc = x1 - xbar
    yc = y1 - ybar

    beta = np.zeros(p)
    absent = np.zeros(p, dtype=bool)
    col_norm = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    scale = col_norm.max() if p else 0.0

    if len(sel):
        q, r, piv = linalg.qr(xc[:, sel], mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        top = max(diag[0], scale)
        rank = int(np.sum(diag > RANK_TOL * top)) if top > 0 else 0
        q = q[:, :rank]
        kept = sel[piv[:rank]]
        absent[sel[piv[rank:]]] = True
        if rank:
            beta[kept] = linalg.solve_triangular(r[:rank, :rank], q.T @ yc)
        intercept = ybar - xbar[kept] @ beta[kept]
        others = np.setdiff1d(np.arange(p), sel, assume_unique=True)
        xo = xc[:, others]
        resid = xo - q @ (q.T @ xo)
    else:
        rank = 0
        top = scale
        intercept = ybar
        others = np.arange(p)
        resid = xc

    rss = np.einsum("ij,ij->j", resid, resid)
    ok = np.sqrt(rss) > RANK_TOL * np.maximum(top, col_norm[others])
    beta[others[ok]] = (resid[:, ok].T @ yc) / rss[ok]
    absent[others[~ok]] = True
    return beta, absent, float(intercept)


def one_split(data: Dataset, config: SelectorConfig, stream: RngStream, *,
              selector: Optional[Selector] = None, max_selected: Optional[int] = None) -> OneSplitResult:
    """One random split, selection on d2 and per-coordinate partial regressions on d1.

    ``selector`` replaces the configured selection procedure; it is called as
    ``selector(d2, rng)``. The cap on the selected set defaults to ``n // 4``.
    """
    n, p = data.n, data.p
    if n < 8:
        raise ValueError(f"need at least 8 observations, got {n}")
    rng = stream.generator()
    plan = SplitPlan.draw(n, rng)
    d2 = Dataset(x=data.x[plan.d2], y=data.y[plan.d2])
    if max_selected is None:
        max_selected = config.max_selected if config.max_selected is not None else n // 4
    if selector is None:
        chosen = select(d2, config, rng, max_selected=max_selected)
    else:
        chosen = selector(d2, rng)
    if len(chosen) + 2 >= n // 2:
        raise SelectionTooLarge(
            f"{len(chosen)} covariates selected; partial regressions on {n // 2} rows need |S| + 2 < {n // 2}")
    beta, absent, intercept = partial_regressions(data.x[plan.d1], data.y[plan.d1], chosen.indices)
    return OneSplitResult(beta_tilde=beta, intercept=intercept, selected=chosen,
                          membership=plan.membership(n), absent=absent)


@dataclass
class SSHDIFit:
    """Smoothed estimate and the per-split records it was averaged from.

    ``b`` counts successful splits; failed ones are listed in ``failures`` as
    ``(stream_index, message)`` and excluded from every average.
    """

    beta_hat: np.ndarray
    intercept_hat: float
    resamples: list
    n: int
    p: int
    b: int
    failures: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def beta_tilde(self) -> np.ndarray:
        return np.stack([r.beta_tilde for r in self.resamples])

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([r.intercept for r in self.resamples])

    @property
    def membership(self) -> np.ndarray:
        return np.stack([r.membership for r in self.resamples])


def _run_splits(data, config, master_seed, indices, selector, max_selected):
    out = []
    with threadpool_limits(1):
        for b in indices:
            try:
                res = one_split(data, config, RngStream(master_seed, b), selector=selector,
                                max_selected=max_selected)
            except (SSHDIError, np.linalg.LinAlgError) as exc:
                res = f"{type(exc).__name__}: {exc}"
            out.append((b, res))
    return out


def _chunks(items, k):
    k = max(1, min(k, len(items)))
    size = -(-len(items) // k)
    return [items[i:i + size] for i in range(0, len(items), size)]


def sshdi_fit(data: Dataset, config: SelectorConfig, b: Optional[int] = None, master_seed: int = 0, *,
              workers: int = 1, selector: Optional[Selector] = None, max_selected: Optional[int] = None,
              max_failure_rate: float = MAX_FAILURE_RATE) -> SSHDIFit:
    """Average one-split estimates over ``b`` random splits (default ``b = n``).

    Split ``k`` uses stream ``(master_seed, k)`` for ``k = 1..b``; results are
    reduced in index order so the output does not depend on ``workers``.
    Raises :class:`RunAborted` when more than ``max_failure_rate`` of the
    splits fail.
    """
    b = data.n if b is None else int(b)
    if b < 1:
        raise ValueError("b must be at least 1")
    t0 = time.perf_counter()
    indices = list(range(1, b + 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_splits, data, config, master_seed, chunk, selector, max_selected)
                       for chunk in _chunks(indices, workers)]
            records = [rec for f in futures for rec in f.result()]
    else:
        records = _run_splits(data, config, master_seed, indices, selector, max_selected)
    records.sort(key=lambda rec: rec[0])

    resamples = [r for _, r in records if isinstance(r, OneSplitResult)]
    failures = [(k, r) for k, r in records if isinstance(r, str)]
    if len(failures) > max_failure_rate * b:
        raise RunAborted(f"{len(failures)} of {b} splits failed (limit {max_failure_rate:.0%}); "
                         f"first: {failures[0][1]}")

    beta_tilde = np.stack([r.beta_tilde for r in resamples])
    sizes = np.array([len(r.selected) for r in resamples])
    lambdas = [r.selected.lambda_used for r in resamples]
    diagnostics = {
        "absent_coefficients": int(sum(int(r.absent.sum()) for r in resamples)),
        "selection_size_mean": float(sizes.mean()),
        "selection_size_min": int(sizes.min()),
        "selection_size_max": int(sizes.max()),
        "selection_truncated": int(sum(r.selected.diagnostics.get("raw_size", 0) > len(r.selected)
                                       for r in resamples)),
        "lambda_median": None if lambdas[0] is None else float(np.median(lambdas)),
        "runtime_seconds": time.perf_counter() - t0,
    }
    return SSHDIFit(beta_hat=beta_tilde.mean(axis=0),
                    intercept_hat=float(np.mean([r.intercept for r in resamples])),
                    resamples=resamples, n=data.n, p=data.p, b=len(resamples),
                    failures=failures, diagnostics=diagnostics)


@dataclass
class VarianceEstimate:
    """Bias-corrected variances ``v_b`` with the uncorrected ``v_raw``.

    ``fallback`` marks coordinates whose corrected value was not positive and
    was replaced by ``v_raw``. The ``intercept_*`` fields hold the same for the
    intercept, which is kept out of the coefficient arrays.
    """

    v_b: np.ndarray
    v_raw: np.ndarray
    fallback: np.ndarray
    intercept_v_b: float
    intercept_v_raw: float
    intercept_fallback: bool


def resampling_variance(membership, estimates):
    """Uncorrected and bias-corrected variance of the split average.

    ``membership`` is ``B x n`` (1 when row ``i`` is in d1 of split ``b``) and
    ``estimates`` is ``B x k``. Returns ``(v_raw, correction)``, each of length
    ``k``; the corrected variance is ``v_raw - correction``.
    """
    j = np.asarray(membership, dtype=float)
    est = np.asarray(estimates, dtype=float)
    b_count, n = j.shape
    jc = j - j.mean(axis=0)
    dev = est - est.mean(axis=0)
    # a coordinate that never moves has no spread, not rounding noise
    dev[:, np.all(est == est[:1], axis=0)] = 0.0
    cov = jc.T @ dev / b_count
    v_raw = 4.0 * (n - 1) / n * np.sum(cov * cov, axis=0)
    correction = n / b_count ** 2 * np.sum(dev * dev, axis=0)
    return v_raw, correction


def variance_estimate(fit: SSHDIFit, *, allow_degenerate: bool = False) -> VarianceEstimate:
    """Variance of each smoothed coefficient from split-membership covariances.

    Raises :class:`DegenerateResamples` if every split produced the same
    estimates (and hence zero variance everywhere) unless ``allow_degenerate``.
    """
    if fit.b < 2:
        raise ValueError("variance estimation needs at least 2 successful splits")
    est = np.column_stack([fit.intercepts, fit.beta_tilde])
    v_raw, correction = resampling_variance(fit.membership, est)
    if not allow_degenerate and np.all(v_raw == 0) and np.all(est == est[0]):
        raise DegenerateResamples("all splits returned identical estimates; check the selector")
    v_b = v_raw - correction
    fallback = v_b <= 0
    v_b = np.where(fallback, v_raw, v_b)
    return VarianceEstimate(v_b=v_b[1:], v_raw=v_raw[1:], fallback=fallback[1:],
                            intercept_v_b=float(v_b[0]), intercept_v_raw=float(v_raw[0]),
                            intercept_fallback=bool(fallback[0]))


@dataclass
class InferenceTable:
    """Per-coefficient tests and intervals. ``flags`` holds a tuple of labels per row."""

    names: tuple
    estimate: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_raw: np.ndarray
    p_adjusted: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    flags: list
    alpha: float
    adjustment: str
    m: int

    def __len__(self):
        return len(self.estimate)

    def order(self) -> np.ndarray:
        """Row order by adjusted p, ties by column index."""
        return np.lexsort((np.arange(len(self)), self.p_adjusted))


def z_test(estimate, variance, alpha: float = 0.05, adjustment: str = "bonferroni",
           m: Optional[int] = None):
    """Wald z-statistics, two-sided p-values, adjusted p-values and intervals.

    A zero variance gives ``z = 0, p = 1`` for a zero estimate and an infinite
    ``z`` with ``p = 0`` otherwise; the interval collapses to the estimate.
    Returns a dict of arrays plus ``m``, the number of tests used for the
    adjustment (default: number of estimates).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if adjustment not in ADJUSTMENTS:
        raise ValueError(f"adjustment must be one of {ADJUSTMENTS}")
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    var = np.atleast_1d(np.asarray(variance, dtype=float))
    if np.any(var < 0):
        raise ValueError("variances must be nonnegative")
    m = len(est) if m is None else int(m)
    se = np.sqrt(var)
    zero = se == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(zero, np.where(est == 0, 0.0, np.sign(est) * np.inf), est / np.where(zero, 1.0, se))
    p_raw = 2.0 * stats.norm.sf(np.abs(z))
    p_adj = np.minimum(1.0, m * p_raw) if adjustment == "bonferroni" else p_raw.copy()
    half = stats.norm.ppf(1 - alpha / 2) * se
    return {"se": se, "z": z, "p_raw": p_raw, "p_adjusted": p_adj,
            "ci_low": est - half, "ci_high": est + half, "zero_variance": zero, "m": m}


def infer(fit: SSHDIFit, variances, alpha: float = 0.05, adjustment: str = "bonferroni",
          names=None) -> InferenceTable:
    """Inference table for the smoothed coefficients.

    ``variances`` is a :class:`VarianceEstimate` or a plain array of length p.
    """
    fallback = np.zeros(fit.p, dtype=bool)
    if isinstance(variances, VarianceEstimate):
        fallback = variances.fallback
        var = variances.v_b
    else:
        var = np.asarray(variances, dtype=float)
    res = z_test(fit.beta_hat, var, alpha, adjustment)
    flags = []
    for j in range(fit.p):
        f = []
        if fallback[j]:
            f.append("uncorrected_variance")
        if res["zero_variance"][j]:
            f.append("zero_variance")
        flags.append(tuple(f))
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(fit.p))
    return InferenceTable(names=names, estimate=fit.beta_hat.copy(), variance=var.copy(), se=res["se"],
                          z=res["z"], p_raw=res["p_raw"], p_adjusted=res["p_adjusted"],
                          ci_low=res["ci_low"], ci_high=res["ci_high"], flags=flags,
                          alpha=alpha, adjustment=adjustment, m=res["m"])


@dataclass(frozen=True)
class Scenario:
    """Simulation design for the coverage harness."""

    n: int = 200
    p: int = 500
    covariance: CovarianceKind = field(default_factory=CovarianceKind.identity)
    sparsity: int = 5
    coef_low: float = 0.5
    coef_high: float = 2.0
    noise_sd: float = 1.0
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    b: Optional[int] = None
    alpha: float = 0.05
    adjustment: str = "bonferroni"


@dataclass
class CoverageReport:
    """Monte Carlo bias and coverage for each signal plus the noise average.

    ``signal_rows`` and ``noise_row`` are dicts with one-based ``index``; bias
    is in coefficient units and ``cov_prob`` in percent. ``sd`` is the Monte
    Carlo spread of the estimate and ``se_mean`` the average reported standard
    error. The noise row averages over noise coordinates; its ``bias_sd`` is
    the spread of the per-replicate noise average.
    """

    signal_rows: list
    noise_row: dict
    replicates: int
    truth_active: np.ndarray
    truth_coefficients: np.ndarray
    diagnostics: dict


# covered intervals are allowed this much floating-point slack
_COVER_SLACK = 1e-9


def _replicate(scenario: Scenario, truth, chol, master_seed: int, r: int, selector):
    stream = RngStream(master_seed, r)
    data = generate_dataset(scenario.n, scenario.p, scenario.covariance, truth, stream.child(0),
                            chol_factor=chol)
    fit = sshdi_fit(data, scenario.selector, scenario.b, stream.child(1).derive_seed(), selector=selector)
    var = variance_estimate(fit, allow_degenerate=True)
    table = infer(fit, var, scenario.alpha, "none")
    beta = truth.beta(scenario.p)
    slack = _COVER_SLACK * (1 + np.abs(beta))
    covered = (table.ci_low - slack <= beta) & (beta <= table.ci_high + slack)
    screened = np.mean([set(truth.active_set) <= set(s.selected.indices) for s in fit.resamples])
    return {
        "beta_hat": fit.beta_hat,
        "se": table.se,
        "covered": covered,
        "fallback": int(var.fallback.sum()),
        "failures": len(fit.failures),
        "selection_size_mean": fit.diagnostics["selection_size_mean"],
        "sure_screening_rate": float(screened),
    }


def _replicate_batch(scenario, truth, chol, master_seed, rs, selector):
    with threadpool_limits(1):
        return [(r, _replicate(scenario, truth, chol, master_seed, r, selector)) for r in rs]


def draw_scenario_truth(scenario: Scenario, master_seed: int):
    return draw_truth(scenario.p, scenario.sparsity, scenario.coef_low, scenario.coef_high,
                      RngStream(master_seed, 0), noise_sd=scenario.noise_sd)


def coverage_experiment(scenario: Scenario, replicates: int = 200, master_seed: int = 0, *,
                        workers: int = 1, selector: Optional[Selector] = None,
                        truth=None, progress: Optional[Callable[[int], None]] = None) -> CoverageReport:
    """Bias and confidence-interval coverage over fresh datasets with a fixed truth.

    The truth is drawn once from stream ``(master_seed, 0)`` unless given;
    replicate ``r`` draws its data from ``(master_seed, r)``. Intervals use
    unadjusted level ``1 - alpha``.
    """
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if truth is None:
        truth = draw_scenario_truth(scenario, master_seed)
    chol = cholesky(build_covariance(scenario.covariance, scenario.p))
    rs = list(range(1, replicates + 1))
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replicate_batch, scenario, truth, chol, master_seed, [r], selector)
                       for r in rs]
            for f in futures:
                for r, res in f.result():
                    results[r] = res
                    if progress:
                        progress(r)
    else:
        for r in rs:
            results.update(_replicate_batch(scenario, truth, chol, master_seed, [r], selector))
            if progress:
                progress(r)

    est = np.stack([results[r]["beta_hat"] for r in rs])
    se = np.stack([results[r]["se"] for r in rs])
    cov = np.stack([results[r]["covered"] for r in rs])
    beta = truth.beta(scenario.p)
    bias = est.mean(axis=0) - beta
    mc_sd = est.std(axis=0, ddof=1) if replicates > 1 else np.zeros(scenario.p)
    se_mean = se.mean(axis=0)
    cov_prob = 100.0 * cov.mean(axis=0)

    signal_rows = [{"index": int(j) + 1, "beta_star": float(beta[j]), "bias": float(bias[j]),
                    "cov_prob": float(cov_prob[j]), "sd": float(mc_sd[j]), "se_mean": float(se_mean[j])}
                   for j in truth.active_set]
    noise = np.setdiff1d(np.arange(scenario.p), truth.active_set)
    nan = float("nan")
    if len(noise):
        avg = est[:, noise].mean(axis=1)
        noise_row = {"index": None, "beta_star": 0.0, "bias": float(bias[noise].mean()),
                     "cov_prob": float(cov_prob[noise].mean()),
                     "cov_prob_pooled": float(100.0 * cov[:, noise].sum() / cov[:, noise].size),
                     "sd": float(mc_sd[noise].mean()), "se_mean": float(se_mean[noise].mean()),
                     "bias_sd": float(avg.std(ddof=1)) if replicates > 1 else 0.0,
                     "count": int(len(noise))}
    else:
        noise_row = {"index": None, "beta_star": 0.0, "bias": nan, "cov_prob": nan, "cov_prob_pooled": nan,
                     "sd": nan, "se_mean": nan, "bias_sd": nan, "count": 0}
    diagnostics = {
        "failed_splits": int(sum(results[r]["failures"] for r in rs)),
        "variance_fallbacks": int(sum(results[r]["fallback"] for r in rs)),
        "selection_size_mean": float(np.mean([results[r]["selection_size_mean"] for r in rs])),
        "sure_screening_rate": float(np.mean([results[r]["sure_screening_rate"] for r in rs])),
    }
    return CoverageReport(signal_rows=signal_rows, noise_row=noise_row, replicates=replicates,
                          truth_active=truth.active_set.copy(), truth_coefficients=truth.coefficients.copy(),
                          diagnostics=diagnostics)


def default_workers() -> int:
    return os.cpu_count() or 1
