"""Gaussian search distributions and their exponential-family coordinates.

A :class:`GaussianState` stores either a full covariance matrix or a vector
of per-coordinate variances.  Precision is a derived view; optimizers that
iterate in precision form build states with :meth:`GaussianState.from_precision`
so that the precision they accumulated is kept as-is rather than recomputed
from an inverted covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import DegenerateVariance, DimensionMismatch, FactorizationFailure

VARIANCE_FLOOR = 1e-12
_PIVOT_MIN = 1e-300
_SYM_RTOL = 1e-12


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising :class:`FactorizationFailure` on failure."""
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(f"matrix is not positive definite: {exc}") from None
    if not np.all(np.isfinite(low)) or np.min(np.diag(low)) ** 2 < _PIVOT_MIN:
        raise FactorizationFailure("matrix is numerically singular")
    return low


def is_pd(m: np.ndarray) -> bool:
    try:
        cholesky(m)
    except FactorizationFailure:
        return False
    return True


def spd_inverse(m: np.ndarray) -> np.ndarray:
    d = np.diagonal(m)
    if np.count_nonzero(m - np.diag(d)) == 0:
        # diagonal input: plain reciprocals keep results bit-identical with the diagonal variant
        if not np.all(np.isfinite(d)) or np.any(d <= 0) or np.min(d) < _PIVOT_MIN:
            raise FactorizationFailure("matrix is not positive definite")
        return np.diag(1.0 / d)
    low = cholesky(m)
    inv = linalg.cho_solve((low, True), np.eye(m.shape[0]))
    return symmetrize(inv)


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Keys index the stream (iteration, sample block, purpose tag ...), so
    draws for one key never depend on how many draws another key made.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Gaussian ``N(mean, cov)`` with full or diagonal storage.

    Exactly one of ``cov`` (D x D) or ``var`` (length D) is set.  ``prec``
    optionally carries the precision the state was built from.
    """

    mean: np.ndarray
    cov: np.ndarray | None = None
    var: np.ndarray | None = None
    prec: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(_frozen(self.mean))
        if mean.ndim != 1 or mean.size < 1:
            raise DimensionMismatch(f"mean must be a non-empty vector, got shape {mean.shape}")
        object.__setattr__(self, "mean", mean)
        d = mean.size
        if (self.cov is None) == (self.var is None):
            raise ValueError("exactly one of cov or var must be given")
        if self.cov is not None:
            cov = _frozen(self.cov).reshape(d, d) if np.size(self.cov) == d * d else None
            if cov is None:
                raise DimensionMismatch(f"cov must be {d}x{d}")
            scale = max(float(np.max(np.abs(cov))), _PIVOT_MIN)
            if np.max(np.abs(cov - cov.T)) > _SYM_RTOL * scale:
                raise ValueError("cov is not symmetric")
            if not np.all(np.isfinite(cov)):
                raise FactorizationFailure("cov has non-finite entries")
            object.__setattr__(self, "cov", cov)
            if self.prec is None:
                cholesky(cov)
        else:
            var = np.atleast_1d(_frozen(self.var))
            if var.shape != (d,):
                raise DimensionMismatch(f"var must have length {d}")
            if not np.all(np.isfinite(var)) or np.any(var <= 0):
                raise DegenerateVariance("variances must be positive and finite")
            object.__setattr__(self, "var", var)
        if self.prec is not None:
            object.__setattr__(self, "prec", _frozen(self.prec))

    @classmethod
    def full(cls, mean, cov) -> GaussianState:
        return cls(mean=mean, cov=cov)

    @classmethod
    def diagonal(cls, mean, var) -> GaussianState:
        return cls(mean=mean, var=var)

    @classmethod
    def isotropic(cls, mean, sigma: float = 1.0, diagonal: bool = False) -> GaussianState:
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if diagonal:
            return cls(mean=mean, var=np.full(mean.size, sigma**2))
        return cls(mean=mean, cov=sigma**2 * np.eye(mean.size))

    @classmethod
    def from_precision(cls, mean, prec) -> GaussianState:
        """Build from a precision matrix (full) or precision vector (diagonal).

        Raises FactorizationFailure if the precision is not positive definite.
        """
        prec = np.asarray(prec, dtype=np.float64)
        if prec.ndim == 1:
            if not np.all(np.isfinite(prec)) or np.any(prec <= 0):
                raise FactorizationFailure("precisions must be positive and finite")
            var = np.maximum(1.0 / prec, VARIANCE_FLOOR)
            return cls(mean=mean, var=var, prec=prec)
        prec = symmetrize(prec)
        return cls(mean=mean, cov=spd_inverse(prec), prec=prec)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_diagonal(self) -> bool:
        return self.var is not None

    @cached_property
    def cov_matrix(self) -> np.ndarray:
        return np.diag(self.var) if self.is_diagonal else self.cov

    @property
    def variances(self) -> np.ndarray:
        return self.var if self.is_diagonal else np.diag(self.cov)

    @cached_property
    def precision(self) -> np.ndarray:
        """Precision vector (diagonal states) or matrix (full states)."""
        if self.prec is not None:
            return self.prec
        if self.is_diagonal:
            return 1.0 / self.var
        return spd_inverse(self.cov)

    @cached_property
    def precision_matrix(self) -> np.ndarray:
        return np.diag(self.precision) if self.is_diagonal else self.precision

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance (square-root variances when diagonal)."""
        if self.is_diagonal:
            return np.sqrt(self.var)
        return cholesky(self.cov)

    @cached_property
    def logdet_cov(self) -> float:
        if self.is_diagonal:
            return float(np.sum(np.log(self.var)))
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def entropy(self) -> float:
        return 0.5 * self.dim * (1.0 + np.log(2.0 * np.pi)) + 0.5 * self.logdet_cov

    def trace_cov(self) -> float:
        return float(np.sum(self.variances))

    def with_mean(self, mean) -> GaussianState:
        if self.is_diagonal:
            return GaussianState(mean=mean, var=self.var, prec=self.prec)
        return GaussianState(mean=mean, cov=self.cov, prec=self.prec)

    def to_full(self) -> GaussianState:
        if not self.is_diagonal:
            return self
        return GaussianState(mean=self.mean, cov=np.diag(self.var), prec=None if self.prec is None else np.diag(self.prec))

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        diff = theta - self.mean
        if self.is_diagonal:
            maha = np.sum(diff**2 / self.var, axis=-1)
        else:
            z = linalg.solve_triangular(self.chol, np.atleast_2d(diff).T, lower=True)
            maha = np.sum(z**2, axis=0).reshape(diff.shape[:-1])
        return -0.5 * (self.dim * np.log(2.0 * np.pi) + self.logdet_cov + maha)


class MeanParams(NamedTuple):
    m1: np.ndarray
    M2: np.ndarray


class NaturalParams(NamedTuple):
    lam1: np.ndarray
    Lam2: np.ndarray


def to_mean_params(g: GaussianState) -> MeanParams:
    return MeanParams(g.mean.copy(), g.cov_matrix + np.outer(g.mean, g.mean))


def from_mean_params(m: MeanParams) -> GaussianState:
    m1 = np.asarray(m.m1, dtype=float)
    cov = symmetrize(np.asarray(m.M2, dtype=float) - np.outer(m1, m1))
    return GaussianState.full(m1, cov)


def to_natural_params(g: GaussianState) -> NaturalParams:
    """``lam1 = inv(cov) @ mean`` and ``Lam2 = -inv(cov) / 2`` via Cholesky solves."""
    if g.prec is not None:
        prec = g.precision_matrix
    else:
        low = cholesky(g.cov_matrix)
        prec = symmetrize(linalg.cho_solve((low, True), np.eye(g.dim)))
    return NaturalParams(prec @ g.mean, -0.5 * prec)


def from_natural_params(n: NaturalParams) -> GaussianState:
    prec = symmetrize(-2.0 * np.asarray(n.Lam2, dtype=float))
    low = cholesky(prec)
    mean = linalg.cho_solve((low, True), np.asarray(n.lam1, dtype=float))
    return GaussianState.from_precision(mean, prec)


def kl_divergence(q: GaussianState, q_ref: GaussianState) -> float:
    """Closed-form ``KL[q || q_ref]`` for Gaussians."""
    if q.dim != q_ref.dim:
        raise DimensionMismatch(f"dimensions differ: {q.dim} vs {q_ref.dim}")
    diff = q_ref.mean - q.mean
    if q.is_diagonal and q_ref.is_diagonal:
        trace_term = np.sum(q.var / q_ref.var)
        maha = np.sum(diff**2 / q_ref.var)
    else:
        low = q_ref.chol if not q_ref.is_diagonal else np.diag(q_ref.chol)
        a = linalg.solve_triangular(low, q.cov_matrix, lower=True)
        trace_term = np.trace(linalg.solve_triangular(low, a.T, lower=True))
        z = linalg.solve_triangular(low, diff, lower=True)
        maha = z @ z
    kl = 0.5 * (trace_term + maha - q.dim + q_ref.logdet_cov - q.logdet_cov)
    return max(float(kl), 0.0)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng_stream(int(rng))


def sample(g: GaussianState, rng, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterized draws ``theta = mean + L @ eps``.

    ``rng`` is a Generator or an integer seed.  Returns ``(theta, eps)``,
    both ``count x D``; ``eps`` is kept so estimators can reuse the noise.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    eps = _as_rng(rng).standard_normal((count, g.dim))
    return reparameterize(g, eps), eps


def reparameterize(g: GaussianState, eps: np.ndarray) -> np.ndarray:
    if g.is_diagonal:
        return g.mean + eps * g.chol
    return g.mean + eps @ g.chol.T
