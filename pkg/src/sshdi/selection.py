"""Variable selection on the selection half: LASSO (fixed or cross-validated) and SIS.

The LASSO objective is ``(1/2n)||y - x b||^2 + lam * ||b||_1`` solved by cyclic
coordinate descent with active-set cycling. Inputs to :func:`lasso_fit` and
:func:`lasso_path` are expected standardized (centered, unit variance columns,
centered response); :func:`select` takes raw data and standardizes internally.
"""
from __future__ import annotations

import re
import ast
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import NonConvergence

CD_TOL = 1e-8
MAX_SWEEPS = 10_000

METHODS = ("lasso_cv", "lasso", "sis")


@njit(cache=True, nogil=True)
def _coord_update(xt, col_sq, lam, beta, resid, j):
    """Exact minimization over coordinate ``j``; returns the absolute change."""
    n = xt.shape[1]
    xj = xt[j]
    cs = col_sq[j]
    g = 0.0
    for i in range(n):
        g += xj[i] * resid[i]
    old = beta[j]
    z = g / n + cs * old
    if z > lam:
        new = (z - lam) / cs
    elif z < -lam:
        new = (z + lam) / cs
    else:
        new = 0.0
    if new == old:
        return 0.0
    d = new - old
    for i in range(n):
        resid[i] -= d * xj[i]
    beta[j] = new
    return abs(d)


@njit(cache=True, nogil=True)
def _active_solve(xt, y, lam, beta, resid, active, n_active):
    """Replace the active coefficients by the exact solution for their current signs.

    Solves ``X_A' X_A b = X_A' y - n lam sign(b)`` and accepts the result only
    if every coefficient keeps its sign. Returns whether it was accepted.
    """
    n = xt.shape[1]
    idx = active[:n_active].copy()
    xa = np.empty((n_active, n))
    for a in range(n_active):
        xa[a] = xt[idx[a]]
    gram = xa @ xa.T
    rhs = xa @ y
    for a in range(n_active):
        rhs[a] -= n * lam * np.sign(beta[idx[a]])
    # an ill-conditioned active set falls back to plain sweeps
    diag_max = 0.0
    for a in range(n_active):
        diag_max = max(diag_max, gram[a, a])
    for a in range(n_active):
        gram[a, a] += 1e-13 * diag_max
    sol = np.linalg.solve(gram, rhs)
    for a in range(n_active):
        if not np.isfinite(sol[a]) or np.sign(sol[a]) != np.sign(beta[idx[a]]):
            return False
    for a in range(n_active):
        beta[idx[a]] = sol[a]
    fitted = sol @ xa
    for i in range(n):
        resid[i] = y[i] - fitted[i]
    return True


@njit(cache=True, nogil=True)
def _cd_solve(xt, y, col_sq, lam, beta, resid, tol, max_sweeps):
    """Coordinate descent in place on ``beta``/``resid``; returns (sweeps, converged).

    ``xt`` is the transposed design (p x n) so each covariate is contiguous.
    Alternates one full sweep with sweeps over the nonzero coefficients; when
    those stall, the active set is solved exactly for its current signs. Stops
    once a full sweep moves no coefficient by more than ``tol * (1 + max|beta|)``.
    """
    p, n = xt.shape
    sweeps = 0
    active = np.empty(p, dtype=np.int64)
    while sweeps < max_sweeps:
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            d = _coord_update(xt, col_sq, lam, beta, resid, j)
            if d > max_delta:
                max_delta = d
        sweeps += 1
        bmax = 0.0
        n_active = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[n_active] = j
                n_active += 1
                bmax = max(bmax, abs(beta[j]))
        if max_delta <= tol * (1.0 + bmax):
            return sweeps, True
        inner = 0
        while sweeps < max_sweeps:
            max_delta = 0.0
            bmax = 0.0
            for a in range(n_active):
                j = active[a]
                d = _coord_update(xt, col_sq, lam, beta, resid, j)
                if d > max_delta:
                    max_delta = d
                bmax = max(bmax, abs(beta[j]))
            sweeps += 1
            inner += 1
            if max_delta <= tol * (1.0 + bmax):
                break
            if inner % 3 == 0 and n_active < n:
                # drop coefficients zeroed during the inner sweeps
                m = 0
                for a in range(n_active):
                    if beta[active[a]] != 0.0:
                        active[m] = active[a]
                        m += 1
                n_active = m
                if n_active > 0 and _active_solve(xt, y, lam, beta, resid, active, n_active):
                    break
    return sweeps, False


@njit(cache=True, nogil=True)
def _path_kernel(xt, y, lambdas, tol, max_sweeps, stop_saturated):
    """Warm-started path.

    Returns ``(coefs, sweeps, n_done, failed)``: solutions for the first
    ``n_done`` lambdas and whether the last attempted one failed to converge.
    With ``stop_saturated`` the path ends early once the fit explains at least
    99.9% of the response variation or more than ``n - 1`` coefficients are
    nonzero.
    """
    p, n = xt.shape
    n_lam = lambdas.shape[0]
    coefs = np.zeros((n_lam, p))
    sweeps = np.zeros(n_lam, dtype=np.int64)
    col_sq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += xt[j, i] * xt[j, i]
        col_sq[j] = s / n
    tss = 0.0
    for i in range(n):
        tss += y[i] * y[i]
    beta = np.zeros(p)
    resid = y.copy()
    for k in range(n_lam):
        s, ok = _cd_solve(xt, y, col_sq, lambdas[k], beta, resid, tol, max_sweeps)
        sweeps[k] = s
        coefs[k] = beta
        if not ok:
            return coefs, sweeps, k, True
        if stop_saturated:
            rss = 0.0
            for i in range(n):
                rss += resid[i] * resid[i]
            nnz = 0
            for j in range(p):
                if beta[j] != 0.0:
                    nnz += 1
            if rss <= 1e-3 * tss or nnz > n - 1:
                return coefs, sweeps, k + 1, False
    return coefs, sweeps, n_lam, False


def _as_xt(x):
    return np.ascontiguousarray(np.asarray(x, dtype=float).T)


def lambda_max(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(x.T @ y)) / x.shape[0])


def lasso_fit(x, y, lam: float, warm_start=None, *, tol: float = CD_TOL,
              max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """LASSO coefficients at penalty ``lam`` by coordinate descent.

    Raises :class:`NonConvergence` if ``max_sweeps`` sweeps do not reach the
    convergence criterion.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    xt = _as_xt(x)
    y = np.asarray(y, dtype=float)
    p, n = xt.shape
    if warm_start is None and lam >= lambda_max(x, y):
        # the zero vector satisfies the optimality conditions exactly
        return np.zeros(p)
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    resid = y - beta @ xt
    col_sq = np.einsum("ji,ji->j", xt, xt) / n
    sweeps, ok = _cd_solve(xt, y, col_sq, float(lam), beta, resid, tol, max_sweeps)
    if not ok:
        raise NonConvergence(f"coordinate descent did not converge in {sweeps} sweeps at lambda={lam:.6g}")
    return beta


def lambda_grid(lam_max: float, grid_size: int, grid_ratio: float) -> np.ndarray:
    """Log-spaced, descending, from ``lam_max`` to ``grid_ratio * lam_max``."""
    if lam_max <= 0:
        return np.zeros(grid_size)
    return np.geomspace(lam_max, grid_ratio * lam_max, grid_size)


def _solve_path(xt, y, lambdas, tol=CD_TOL, max_sweeps=MAX_SWEEPS, stop_saturated=False):
    """Solutions along ``lambdas``; rows past an early stop are NaN."""
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0):
        # degenerate response (lam_max == 0): zero model everywhere
        return np.zeros((len(lambdas), xt.shape[0]))
    coefs, _, done, failed = _path_kernel(xt, y, lambdas, tol, max_sweeps, stop_saturated)
    if failed:
        raise NonConvergence(
            f"coordinate descent did not converge in {max_sweeps} sweeps at lambda={lambdas[done]:.6g}")
    coefs[done:] = np.nan
    return coefs


def lasso_path(x, y, grid_size: int = 100, grid_ratio: float = 1e-3, lambdas=None):
    """Warm-started solutions along a descending log-spaced grid.

    Returns a list of ``(lambda, coefficients)`` pairs; the first entry is at
    ``lambda_max`` and therefore all zeros.
    """
    xt = _as_xt(x)
    y = np.asarray(y, dtype=float)
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(x, y), grid_size, grid_ratio)
    coefs = _solve_path(xt, y, lambdas)
    return [(float(lam), coefs[k]) for k, lam in enumerate(lambdas)]


def _standardize(x):
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    z = (x - mean) / scale
    z[:, sd == 0] = 0.0
    return z, mean, sd


def _saturated(resid, tss, beta, n):
    return resid @ resid <= 1e-3 * tss or np.count_nonzero(beta) > n - 1


def cv_errors(x, y, folds, grid, rng=None, fold_ids=None, patience=None, info=None):
    """Pooled out-of-fold mean squared prediction error for each grid lambda.

    Each training fold is re-standardized, fit along ``grid`` (warm-started)
    and mapped back to the input scale with an intercept before predicting the
    held-out rows. Folds advance together; evaluation ends at the first lambda
    where some fold saturates (99.9% of variation explained or more than
    ``n_train - 1`` nonzeros) and lambdas past that point, or past a lambda
    whose fit did not converge, get an infinite error. With ``patience`` the
    search also ends once the best error is that many grid points behind.

    Returns ``(errors, fold_ids)``; if ``info`` is a dict it receives
    ``evaluated`` (number of lambdas scored) and ``stop_reason``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    grid = np.asarray(grid, dtype=float)
    if fold_ids is None:
        if folds > n or folds < 2:
            raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
        rng = np.random.default_rng(0) if rng is None else rng
        fold_ids = np.empty(n, dtype=np.int64)
        fold_ids[rng.permutation(n)] = np.arange(n) % folds

    states = []
    for f in range(int(fold_ids.max()) + 1):
        test = fold_ids == f
        z, mean, sd = _standardize(x[~test])
        ytr = y[~test]
        ybar = ytr.mean()
        xt = np.ascontiguousarray(z.T)
        yc = ytr - ybar
        states.append({
            "xt": xt, "y": yc, "col_sq": np.einsum("ji,ji->j", xt, xt) / xt.shape[1],
            "beta": np.zeros(x.shape[1]), "resid": yc.copy(), "tss": yc @ yc,
            "scale": np.where(sd > 0, sd, 1.0), "mean": mean, "ybar": ybar,
            "x_test": x[test], "y_test": y[test],
        })

    errors = np.full(len(grid), np.inf)
    reason = "grid_end"
    k = -1
    for k, lam in enumerate(grid):
        if lam <= 0:
            reason = "degenerate"
            break
        sse = 0.0
        converged = True
        saturated = False
        for st in states:
            _, ok = _cd_solve(st["xt"], st["y"], st["col_sq"], float(lam), st["beta"], st["resid"],
                              CD_TOL, MAX_SWEEPS)
            if not ok:
                converged = False
                break
            b = st["beta"] / st["scale"]
            pred = st["x_test"] @ b + (st["ybar"] - b @ st["mean"])
            sse += np.sum((st["y_test"] - pred) ** 2)
            saturated = saturated or _saturated(st["resid"], st["tss"], st["beta"], st["xt"].shape[1])
        if not converged:
            reason = "nonconvergence"
            k -= 1
            break
        errors[k] = sse / n
        if saturated:
            reason = "saturated"
            break
        if patience is not None and k - int(np.argmin(errors[:k + 1])) >= patience:
            reason = "patience"
            break
    if info is not None:
        info["evaluated"] = k + 1
        info["stop_reason"] = reason
    if k < 0 and len(grid) and grid[0] > 0:
        raise NonConvergence("cross-validation could not fit any lambda on the grid")
    return errors, fold_ids


def cv_select_lambda(x, y, folds, grid, rng=None, fold_ids=None, patience=None) -> float:
    """Grid lambda with the smallest CV error; ties go to the larger lambda."""
    grid = np.asarray(grid, dtype=float)
    errors, _ = cv_errors(x, y, folds, grid, rng=rng, fold_ids=fold_ids, patience=patience)
    best = np.flatnonzero(errors == errors.min())
    return float(grid[best[np.argmax(grid[best])]])


@dataclass(frozen=True)
class SelectedSet:
    """Sorted zero-based covariate indices chosen by a selector."""

    indices: np.ndarray
    method_tag: str
    lambda_used: Optional[float] = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.indices)


def sis_screen(x, y, keep: int) -> SelectedSet:
    """Top ``keep`` covariates by absolute marginal correlation with ``y``.

    Ties are broken toward the lower index; constant columns score zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = x.shape[1]
    if not 1 <= keep <= p:
        raise ValueError(f"keep must be in [1, {p}], got {keep}")
    score = np.abs(_abs_corr(x, y))
    order = np.lexsort((np.arange(p), -score))
    return SelectedSet(indices=np.sort(order[:keep]), method_tag=f"sis(keep={keep})",
                       diagnostics={"ranking": order})


def _abs_corr(x, y):
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    num = xc.T @ yc
    den = np.sqrt(np.sum(xc * xc, axis=0)) * np.sqrt(yc @ yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / den, 0.0)
    return np.abs(r)


@dataclass(frozen=True)
class SelectorConfig:
    """Which selector to run on the selection half, plus its knobs.

    ``max_selected=None`` means the caller picks the cap (``n // 4`` of the full
    sample inside the split estimator).
    """

    method: str = "lasso_cv"
    folds: int = 10
    grid_size: int = 100
    grid_ratio: float = 1e-3
    lam: Optional[float] = None
    keep: Optional[int] = None
    max_selected: Optional[int] = None
    patience: Optional[int] = None

    def __post_init__(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "lasso_cv":
            if self.folds < 2:
                problems.append("folds must be >= 2")
            if self.grid_size < 2:
                problems.append("grid_size must be >= 2")
            if not 0 < self.grid_ratio < 1:
                problems.append("grid_ratio must be in (0, 1)")
            if self.patience is not None and self.patience < 1:
                problems.append("patience must be >= 1")
        if self.method == "lasso" and (self.lam is None or self.lam <= 0):
            problems.append("lasso requires a positive lambda")
        if self.method == "sis" and (self.keep is None or self.keep < 1):
            problems.append("sis requires keep >= 1")
        if self.max_selected is not None and self.max_selected < 1:
            problems.append("max_selected must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def lasso_cv(cls, folds=10, grid_size=100, grid_ratio=1e-3, max_selected=None, patience=None):
        return cls("lasso_cv", folds=folds, grid_size=grid_size, grid_ratio=grid_ratio,
                   max_selected=max_selected, patience=patience)

    @classmethod
    def lasso_fixed(cls, lam, max_selected=None):
        return cls("lasso", lam=lam, max_selected=max_selected)

    @classmethod
    def sis(cls, keep, max_selected=None):
        return cls("sis", keep=keep, max_selected=max_selected)

    def to_string(self) -> str:
        if self.method == "lasso_cv":
            text = f"lasso_cv(folds={self.folds}, grid_size={self.grid_size}, grid_ratio={self.grid_ratio!r}"
            if self.patience is not None:
                text += f", patience={self.patience}"
            return text + ")"
        if self.method == "lasso":
            return f"lasso(lambda={self.lam!r})"
        return f"sis(keep={self.keep})"

    @classmethod
    def parse(cls, text: str, max_selected=None) -> "SelectorConfig":
        """Parse ``lasso_cv(folds=10)``, ``lasso(lambda=0.1)`` or ``sis(keep=50)``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", text)
        if not m:
            raise ValueError(f"cannot parse selector {text!r}")
        name, args = m.group(1), m.group(2) or ""
        kwargs = {}
        for part in filter(None, (a.strip() for a in args.split(","))):
            key, sep, value = part.partition("=")
            if not sep:
                raise ValueError(f"selector argument {part!r} is not key=value")
            try:
                kwargs[key.strip()] = ast.literal_eval(value.strip())
            except (ValueError, SyntaxError):
                raise ValueError(f"bad value for selector argument {key.strip()!r}: {value.strip()!r}")
        allowed = {"lasso_cv": {"folds", "grid_size", "grid_ratio", "patience"},
                   "lasso": {"lambda"}, "sis": {"keep"}}
        if name not in allowed:
            raise ValueError(f"unknown selector {name!r}; expected one of {sorted(allowed)}")
        unknown = set(kwargs) - allowed[name]
        if unknown:
            raise ValueError(f"unknown arguments for {name}: {sorted(unknown)}")
        if name == "lasso":
            if "lambda" not in kwargs:
                raise ValueError("lasso selector needs lambda=...")
            return cls("lasso", lam=float(kwargs["lambda"]), max_selected=max_selected)
        if name == "sis":
            if "keep" not in kwargs:
                raise ValueError("sis selector needs keep=...")
            return cls("sis", keep=int(kwargs["keep"]), max_selected=max_selected)
        return cls("lasso_cv", max_selected=max_selected, **kwargs)


def select(d2, config: SelectorConfig, rng: Optional[np.random.Generator] = None,
           max_selected: Optional[int] = None) -> SelectedSet:
    """Run the configured selector on a data half and return original-scale indices.

    ``d2`` is anything with ``x`` and ``y`` attributes. The selection is
    truncated to ``max_selected`` (argument, else ``config.max_selected``) by
    keeping the largest standardized LASSO coefficients or the top SIS ranks.
    """
    x = np.asarray(d2.x, dtype=float)
    y = np.asarray(d2.y, dtype=float)
    n, p = x.shape
    if n == 0:
        raise ValueError("empty data half")
    cap = max_selected if max_selected is not None else config.max_selected
    if cap is None:
        cap = p

    if config.method == "sis":
        keep = min(config.keep, p)
        chosen = sis_screen(x, y, keep)
        ranking = chosen.diagnostics["ranking"]
        return SelectedSet(indices=np.sort(ranking[:min(keep, cap)]), method_tag=config.to_string(),
                           diagnostics={"raw_size": keep})

    z, _, _ = _standardize(x)
    yc = y - y.mean()
    diag = {}
    if config.method == "lasso":
        lam = float(config.lam)
        if lam >= lambda_max(z, yc):
            beta = np.zeros(p)
        else:
            beta = lasso_fit(z, yc, lam)
    else:
        grid = lambda_grid(lambda_max(z, yc), config.grid_size, config.grid_ratio)
        if grid[0] <= 0:
            beta, lam = np.zeros(p), 0.0
        else:
            info = {}
            errors, fold_ids = cv_errors(z, yc, config.folds, grid, rng=rng,
                                         patience=config.patience, info=info)
            best = int(np.flatnonzero(errors == errors.min())[0])
            lam = float(grid[best])
            beta = _solve_path(np.ascontiguousarray(z.T), yc, grid[:best + 1])[-1]
            diag = {"cv_errors": errors, "fold_ids": fold_ids, **info}

    nz = np.flatnonzero(beta)
    diag["raw_size"] = len(nz)
    if len(nz) > cap:
        mag = np.abs(beta[nz])
        nz = nz[np.lexsort((nz, -mag))[:cap]]
    return SelectedSet(indices=np.sort(nz), method_tag=config.to_string(), lambda_used=lam,
                       diagnostics=diag)


@dataclass(frozen=True)
class FixedSelection:
    """Selector that ignores the data and always returns ``indices``."""

    indices: tuple

    def __call__(self, d2, rng=None) -> SelectedSet:
        return SelectedSet(indices=np.array(sorted(self.indices), dtype=np.int64), method_tag="fixed")
