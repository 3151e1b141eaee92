"""Simulation scenarios: covariance structures, sparse truth, synthetic data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import RngStream, cholesky, mvn_rows

COVARIANCE_KINDS = ("identity", "ar1", "cs")


@dataclass(frozen=True)
class CovarianceKind:
    """Population covariance of the covariates.

    ``tag`` is one of ``"identity"``, ``"ar1"`` (rho in (0, 1)) or ``"cs"``
    (compound symmetry, rho in [0, 1)).
    """

    tag: str
    rho: float = 0.0

    def __post_init__(self):
        if self.tag not in COVARIANCE_KINDS:
            raise ValueError(f"unknown covariance kind {self.tag!r}; expected one of {COVARIANCE_KINDS}")
        if self.tag == "ar1" and not 0.0 < self.rho < 1.0:
            raise ValueError(f"ar1 requires 0 < rho < 1, got {self.rho}")
        if self.tag == "cs" and not 0.0 <= self.rho < 1.0:
            raise ValueError(f"cs requires 0 <= rho < 1, got {self.rho}")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def ar1(cls, rho):
        return cls("ar1", float(rho))

    @classmethod
    def compound_symmetry(cls, rho):
        return cls("cs", float(rho))


@dataclass(frozen=True)
class SimulationTruth:
    """Sparse coefficient vector: zero-based ``active_set`` and its ``coefficients``."""

    active_set: np.ndarray
    coefficients: np.ndarray
    noise_sd: float = 1.0

    def __post_init__(self):
        active = np.asarray(self.active_set, dtype=np.int64)
        coefs = np.asarray(self.coefficients, dtype=float)
        if active.shape != coefs.shape:
            raise ValueError("active_set and coefficients differ in length")
        if len(np.unique(active)) != len(active) or np.any(active < 0):
            raise ValueError("active_set must hold distinct nonnegative indices")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        order = np.argsort(active)
        object.__setattr__(self, "active_set", active[order])
        object.__setattr__(self, "coefficients", coefs[order])

    def beta(self, p: int) -> np.ndarray:
        if len(self.active_set) and self.active_set[-1] >= p:
            raise ValueError(f"active index {self.active_set[-1]} out of range for p={p}")
        out = np.zeros(p)
        out[self.active_set] = self.coefficients
        return out


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    truth: Optional[SimulationTruth] = None
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"incompatible shapes x={x.shape}, y={y.shape}")
        if self.truth is not None and len(self.truth.active_set) and self.truth.active_set[-1] >= x.shape[1]:
            raise ValueError("truth index exceeds number of covariates")
        if self.names is not None and len(self.names) != x.shape[1]:
            raise ValueError("names length does not match number of covariates")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def column_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return tuple(self.names)
        return tuple(f"x{j + 1}" for j in range(self.p))


def build_covariance(kind: CovarianceKind, p: int) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be positive")
    if kind.tag == "identity":
        return np.eye(p)
    if kind.tag == "ar1":
        idx = np.arange(p)
        return kind.rho ** np.abs(idx[:, None] - idx[None, :])
    sigma = np.full((p, p), kind.rho)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def draw_truth(p: int, sparsity: int, coef_low: float, coef_high: float,
               stream: RngStream, noise_sd: float = 1.0) -> SimulationTruth:
    """Uniformly random active set with U[coef_low, coef_high] coefficients."""
    if not 0 <= sparsity <= p:
        raise ValueError(f"sparsity {sparsity} not in [0, {p}]")
    if coef_low > coef_high:
        raise ValueError("coef_low exceeds coef_high")
    rng = stream.generator()
    active = rng.choice(p, size=sparsity, replace=False)
    coefs = rng.uniform(coef_low, coef_high, size=sparsity)
    return SimulationTruth(active_set=active, coefficients=coefs, noise_sd=noise_sd)


def generate_dataset(n: int, p: int, kind: CovarianceKind, truth: SimulationTruth,
                     stream: RngStream, chol_factor=None) -> Dataset:
    """Gaussian design with covariance ``kind`` and ``y = x @ beta + noise``.

    ``chol_factor`` may be passed to reuse a factorization across replicates.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if chol_factor is None:
        chol_factor = cholesky(build_covariance(kind, p))
    rng = stream.generator()
    x = mvn_rows(chol_factor, n, rng)
    noise = rng.standard_normal(n)
    y = x @ truth.beta(p) + truth.noise_sd * noise
    return Dataset(x=x, y=y, truth=truth)
