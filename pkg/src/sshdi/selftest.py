"""Fast built-in oracle checks behind ``sshdi selftest``."""
from __future__ import annotations

import sys
import time

import numpy as np

from .core import resampling_variance, sshdi_fit
from .datagen import CovarianceKind, draw_truth, generate_dataset
from .numerics import RngStream, cholesky, ols_fit
from .oracles import kkt_violation, ols_normal_equations, variance_double_loop
from .selection import SelectorConfig, lasso_fit, lambda_max


def _variance_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        n, k, B = rng.integers(8, 30), rng.integers(1, 6), rng.integers(2, 80)
        member = np.zeros((B, n))
        for b in range(B):
            member[b, rng.permutation(n)[: n // 2]] = 1
        est = rng.normal(size=(B, k))
        v_raw, corr = resampling_variance(member, est)
        o_raw, o_b = variance_double_loop(member, est)
        worst = max(worst, np.max(np.abs(v_raw - o_raw)), np.max(np.abs(v_raw - corr - o_b)))
    return worst <= 1e-12, f"max diff {worst:.2e}"


def _lasso_kkt():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(10):
        x = rng.normal(size=(40, 60))
        x = (x - x.mean(0)) / x.std(0)
        y = x[:, :3] @ np.array([1.0, -0.5, 0.8]) + rng.normal(size=40)
        y -= y.mean()
        lam = lambda_max(x, y) * rng.uniform(0.05, 0.9)
        worst = max(worst, kkt_violation(x, y, lasso_fit(x, y, lam), lam))
    return worst <= 1e-6, f"max KKT violation {worst:.2e}"


def _ols_orthogonality():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(50, 6))
    y = rng.normal(size=50) * 3
    beta = ols_fit(x, y)
    r = y - x @ beta
    ortho = np.max(np.abs(x.T @ r))
    diff = np.max(np.abs(beta - ols_normal_equations(x, y)))
    ok = ortho <= 1e-8 * 50 * np.max(np.abs(y)) and diff <= 1e-8
    return ok, f"max |X'r| {ortho:.2e}, vs normal equations {diff:.2e}"


def _cholesky():
    rng = np.random.default_rng(14)
    m = rng.normal(size=(30, 30))
    a = m.T @ m + np.eye(30)
    L = cholesky(a)
    err = np.max(np.abs(L @ L.T - a)) / np.max(np.abs(a))
    return err <= 1e-10 and np.allclose(L, np.tril(L)), f"relative error {err:.2e}"


def _determinism():
    truth = draw_truth(30, 3, 0.5, 2.0, RngStream(5))
    data = generate_dataset(40, 30, CovarianceKind.ar1(0.5), truth, RngStream(6))
    cfg = SelectorConfig.lasso_cv(folds=5, grid_size=30, grid_ratio=0.01)
    a = sshdi_fit(data, cfg, 12, 99)
    b = sshdi_fit(data, cfg, 12, 99)
    same = np.array_equal(a.beta_hat, b.beta_hat) and np.array_equal(a.beta_tilde, b.beta_tilde)
    return same, "identical estimates from repeated seeded runs" if same else "estimates differ"


CHECKS = [
    ("variance_double_loop_equivalence", _variance_oracle),
    ("lasso_kkt", _lasso_kkt),
    ("ols_orthogonality", _ols_orthogonality),
    ("cholesky_reconstruction", _cholesky),
    ("seeded_determinism", _determinism),
]


def run_checks(stream=None) -> bool:
    stream = stream or sys.stdout
    all_ok = True
    for name, check in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name:<36} {time.perf_counter() - t0:6.2f}s  {detail}",
              file=stream)
    print(f"selftest {'passed' if all_ok else 'FAILED'}", file=stream)
    return all_ok
