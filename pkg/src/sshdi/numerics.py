"""Dense linear algebra, seeded random streams and Gaussian sampling.

Everything here is pure: functions take arrays and return new arrays, and
random draws come from an explicit :class:`RngStream`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NotPositiveDefinite, NotSymmetric, RankDeficient

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Independent random stream addressed by ``(master_seed, stream_index)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    stream ``b`` can be built directly without drawing streams ``0..b-1``.
    ``path`` allows further nesting through :meth:`child`.
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.stream_index < 0 or any(k < 0 for k in self.path):
            raise ValueError("stream indices must be nonnegative")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, self.path + (int(index),))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.master_seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_index),) + self.path,
        )

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def derive_seed(self) -> int:
        """64-bit integer seed usable as the master seed of a nested run."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0])


def cholesky(sigma) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == sigma``.

    Raises
    ------
    NotSymmetric
        If ``sigma`` deviates from symmetry by more than ``1e-10`` relative.
    NotPositiveDefinite
        If a nonpositive pivot is met during factorization.
    """
    a = np.asarray(sigma, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    asym = np.max(np.abs(a - a.T))
    if asym > 1e-10 * scale:
        raise NotSymmetric(f"max asymmetry {asym:.3g} exceeds 1e-10 relative")
    try:
        return np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("nonpositive pivot during Cholesky factorization") from exc


@dataclass(frozen=True)
class OLSFit:
    """Least-squares coefficients with columns lost to rank deficiency.

    ``coef`` holds NaN for dropped columns; they are absent, not zero.
    """

    coef: np.ndarray
    rank: int
    dropped: tuple[int, ...]


def ols_fit(xs, y, *, allow_rank_deficient: bool = False):
    """Least squares via Householder QR with column pivoting.

    A column is dropped when its pivot falls below ``1e-10`` times the largest
    pivot. By default any drop raises :class:`RankDeficient`; with
    ``allow_rank_deficient=True`` an :class:`OLSFit` is returned instead of a
    bare vector.
    """
    xs = np.asarray(xs, dtype=float)
    y = np.asarray(y, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    n, k = xs.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if n <= k:
        raise ValueError(f"need more rows than columns, got {n}x{k}")

    q, r, piv = linalg.qr(xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag[0] > 0 else 0
    dropped = tuple(sorted(int(c) for c in piv[rank:]))

    coef = np.full(k, np.nan)
    if rank:
        sol = linalg.solve_triangular(r[:rank, :rank], q[:, :rank].T @ y)
        coef[piv[:rank]] = sol

    if allow_rank_deficient:
        return OLSFit(coef=coef, rank=rank, dropped=dropped)
    if dropped:
        raise RankDeficient(rank, dropped)
    return coef


def mvn_sample(chol_factor, stream: RngStream) -> np.ndarray:
    """One draw ``L @ z`` with ``z`` standard normal from ``stream``."""
    chol_factor = np.asarray(chol_factor, dtype=float)
    p = chol_factor.shape[0]
    z = stream.generator().standard_normal(p)
    return chol_factor @ z


def mvn_rows(chol_factor, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. rows ``L @ z``; row ``i`` equals the ``i``-th of ``n`` sequential draws."""
    chol_factor = np.asarray(chol_factor, dtype=float)
    z = rng.standard_normal((n, chol_factor.shape[0]))
    return z @ chol_factor.T
