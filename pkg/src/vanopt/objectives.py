"""Benchmark objectives and their closed-form Gaussian expectations.

Pointwise methods (``value``, ``grad``, ``hess``, ``hess_diag``) accept
``theta`` of shape ``(..., D)`` and broadcast over the leading axes, so one
call evaluates a whole batch of Monte-Carlo draws.

Data objectives are sums over examples.  A minibatch view multiplies its
data term by ``N / M`` so that it stays unbiased for the full sum; the
regularizer is never rescaled.
"""

from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import BadLabels, CapabilityMissing, EmptySplit, NegativeRegularization, NotPD
from .gaussian import GaussianState, is_pd, symmetrize


class Capability(enum.Enum):
    VALUE = "value"
    GRAD = "grad"
    HESS = "hess"
    HESS_DIAG = "hess_diag"
    EXACT = "exact_expectation"
    GLM = "glm_structure"
    MINIBATCH = "minibatch"
    NONSMOOTH = "nonsmooth"


class Expectation(NamedTuple):
    """``E_q[f]`` and its gradients with respect to the mean and the covariance."""

    value: float
    grad_mean: np.ndarray
    grad_cov: np.ndarray


SMOOTH = frozenset({Capability.VALUE, Capability.GRAD, Capability.HESS, Capability.HESS_DIAG})


class Objective:
    """Target function contract.

    Subclasses set ``dim`` and ``capabilities`` and implement the methods
    matching the capabilities they declare.
    """

    dim: int
    capabilities: frozenset = frozenset({Capability.VALUE})
    name = "objective"

    def has(self, cap: Capability) -> bool:
        return cap in self.capabilities

    def require(self, *caps: Capability) -> None:
        missing = [c.value for c in caps if c not in self.capabilities]
        if missing:
            raise CapabilityMissing(f"{self.name} lacks {', '.join(missing)}")

    def value(self, theta):
        raise CapabilityMissing(f"{self.name} lacks value")

    def grad(self, theta):
        raise CapabilityMissing(f"{self.name} lacks grad")

    def hess(self, theta):
        raise CapabilityMissing(f"{self.name} lacks hess")

    def hess_diag(self, theta):
        self.require(Capability.HESS)
        return np.diagonal(self.hess(theta), axis1=-2, axis2=-1).copy()

    def expectation(self, q: GaussianState) -> Expectation:
        raise CapabilityMissing(f"{self.name} lacks exact_expectation")

    def expectation_offset(self, q: GaussianState) -> Expectation | None:
        """Terms of the expected loss that depend on ``q`` directly rather than through ``f``."""
        return None

    @property
    def n_examples(self) -> int:
        return 0

    def minibatch(self, indices) -> Objective:
        raise CapabilityMissing(f"{self.name} lacks minibatch")


def _theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (dim,):
        raise ValueError(f"theta must end in dimension {dim}, got shape {theta.shape}")
    return theta


# -- sinc ---------------------------------------------------------------------

_SINC_SERIES = 1e-3


class Sinc(Objective):
    """Normalized ``sign * sin(pi t) / (pi t)`` on a scalar parameter.

    ``sign = -1`` turns minimization into a search for the central peak
    at ``t = 0``.
    """

    dim = 1
    capabilities = SMOOTH
    name = "sinc"

    def __init__(self, sign: float = 1.0):
        if sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        self.sign = float(sign)

    def value(self, theta):
        t = _theta(theta, 1)[..., 0]
        return self.sign * np.sinc(t)

    def grad(self, theta):
        t = _theta(theta, 1)
        u = np.pi * t
        small = np.abs(u) < _SINC_SERIES
        us = np.where(small, 1.0, u)
        exact = (us * np.cos(us) - np.sin(us)) / us**2
        series = -u / 3.0 + u**3 / 30.0
        return self.sign * np.pi * np.where(small, series, exact)

    def hess(self, theta):
        t = _theta(theta, 1)
        u = np.pi * t
        small = np.abs(u) < _SINC_SERIES
        us = np.where(small, 1.0, u)
        exact = ((2.0 - us**2) * np.sin(us) - 2.0 * us * np.cos(us)) / us**3
        series = -1.0 / 3.0 + u**2 / 10.0
        return (self.sign * np.pi**2 * np.where(small, series, exact))[..., None]


def make_sinc(negate: bool = False) -> Sinc:
    return Sinc(-1.0 if negate else 1.0)


# -- quadratic ----------------------------------------------------------------


class Quadratic(Objective):
    """``f(theta) = 0.5 (theta - a)^T A (theta - a)``."""

    capabilities = SMOOTH | {Capability.EXACT}
    name = "quadratic"

    def __init__(self, A, a):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if A.shape != (a.size, a.size) or np.max(np.abs(A - A.T)) > 1e-12 * max(np.max(np.abs(A)), 1e-300):
            raise NotPD("A must be a symmetric matrix matching a")
        if not is_pd(A):
            raise NotPD("A is not positive definite")
        self.A = symmetrize(A)
        self.a = a
        self.dim = a.size

    def value(self, theta):
        diff = _theta(theta, self.dim) - self.a
        return 0.5 * np.einsum("...i,ij,...j->...", diff, self.A, diff)

    def grad(self, theta):
        return (_theta(theta, self.dim) - self.a) @ self.A

    def hess(self, theta):
        theta = _theta(theta, self.dim)
        return np.broadcast_to(self.A, theta.shape[:-1] + self.A.shape).copy()

    def expectation(self, q):
        diff = q.mean - self.a
        value = 0.5 * diff @ self.A @ diff + 0.5 * np.sum(self.A * q.cov_matrix)
        return Expectation(float(value), self.A @ diff, 0.5 * self.A)


def make_quadratic(A, a) -> Quadratic:
    return Quadratic(A, a)


class SumObjective(Objective):
    """Pointwise sum of objectives sharing one parameter space."""

    name = "sum"

    def __init__(self, *parts: Objective):
        if not parts or len({p.dim for p in parts}) != 1:
            raise ValueError("parts must be non-empty and share a dimension")
        self.parts = parts
        self.dim = parts[0].dim
        self.capabilities = frozenset.intersection(*(frozenset(p.capabilities) for p in parts)) - {
            Capability.GLM,
            Capability.MINIBATCH,
        }

    def value(self, theta):
        return sum(p.value(theta) for p in self.parts)

    def grad(self, theta):
        return sum(p.grad(theta) for p in self.parts)

    def hess(self, theta):
        return sum(p.hess(theta) for p in self.parts)

    def expectation(self, q):
        self.require(Capability.EXACT)
        parts = [p.expectation(q) for p in self.parts]
        return Expectation(
            sum(e.value for e in parts), sum(e.grad_mean for e in parts), sum(e.grad_cov for e in parts)
        )


# -- lasso --------------------------------------------------------------------


def expected_abs(mu, sigma):
    """``E|t|`` for ``t ~ N(mu, sigma^2)`` and its derivatives in ``mu`` and ``sigma^2``.

    Returns ``(value, d_mu, d_var)``; ``d_var`` is the density ``N(0 | mu, sigma^2)``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r = mu / sigma
    dens = np.exp(-0.5 * r**2) / (sigma * np.sqrt(2.0 * np.pi))
    erf = special.erf(r / np.sqrt(2.0))
    value = 2.0 * sigma**2 * dens + mu * erf
    return value, erf, dens


def _check_reg(reg_strength):
    if reg_strength < 0:
        raise NegativeRegularization(f"reg_strength must be >= 0, got {reg_strength}")
    return float(reg_strength)


class Lasso(Objective):
    """``f(theta) = sum_i (y_i - x_i^T theta)^2 + reg * sum_d |theta_d|``.

    Pointwise gradients use ``sign(0) = 0`` and are only valid away from the
    coordinate axes; the exact expectation engine is smooth everywhere.
    """

    capabilities = frozenset(
        {Capability.VALUE, Capability.GRAD, Capability.HESS, Capability.HESS_DIAG, Capability.EXACT,
         Capability.MINIBATCH, Capability.NONSMOOTH}
    )
    name = "lasso"

    def __init__(self, X, y, reg_strength: float, scale: float = 1.0):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.reg = _check_reg(reg_strength)
        self.scale = float(scale)
        self.dim = self.X.shape[1]
        self._gram = self.X.T @ self.X
        self._xty = self.X.T @ self.y

    @property
    def n_examples(self):
        return self.X.shape[0]

    def value(self, theta):
        theta = _theta(theta, self.dim)
        resid = self.y - theta @ self.X.T
        return self.scale * np.sum(resid**2, axis=-1) + self.reg * np.sum(np.abs(theta), axis=-1)

    def grad(self, theta):
        theta = _theta(theta, self.dim)
        return 2.0 * self.scale * (theta @ self._gram - self._xty) + self.reg * np.sign(theta)

    def hess(self, theta):
        theta = _theta(theta, self.dim)
        h = 2.0 * self.scale * self._gram
        return np.broadcast_to(h, theta.shape[:-1] + h.shape).copy()

    def expectation(self, q):
        mu, cov = q.mean, q.cov_matrix
        resid = self.y - self.X @ mu
        ea, ea_mu, ea_var = expected_abs(mu, np.sqrt(np.diag(cov)))
        value = self.scale * (resid @ resid + np.sum(self._gram * cov)) + self.reg * np.sum(ea)
        grad_mean = -2.0 * self.scale * (self.X.T @ resid) + self.reg * ea_mu
        grad_cov = self.scale * self._gram + np.diag(self.reg * ea_var)
        return Expectation(float(value), grad_mean, grad_cov)

    def minibatch(self, indices):
        idx = np.asarray(indices)
        return Lasso(self.X[idx], self.y[idx], self.reg, self.scale * self.n_examples / idx.size)


def make_lasso(data, reg_strength: float, split: str | None = "train") -> Lasso:
    X, y = _xy(data, split)
    return Lasso(X, y, reg_strength)


# -- logistic -----------------------------------------------------------------


class Logistic(Objective):
    """``f(theta) = sum_i log(1 + exp(-y_i x_i^T theta)) + reg * ||theta||^2``.

    Each data term depends on ``theta`` only through ``z_i = x_i^T theta``;
    ``link_grad`` and ``link_hess`` are the first two derivatives in ``z``.
    """

    capabilities = SMOOTH | {Capability.GLM, Capability.MINIBATCH}
    name = "logistic"

    def __init__(self, X, y, reg_strength: float, scale: float = 1.0):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise BadLabels("logistic labels must be -1 or +1")
        self.reg = _check_reg(reg_strength)
        self.scale = float(scale)
        self.dim = self.X.shape[1]

    @property
    def n_examples(self):
        return self.X.shape[0]

    def link_loss(self, z):
        return np.logaddexp(0.0, -self.y * z)

    def link_grad(self, z):
        return -self.y * special.expit(-self.y * z)

    def link_hess(self, z):
        s = special.expit(z)
        return s * (1.0 - s)

    def reg_expectation(self, q: GaussianState) -> Expectation:
        """Exact expectation of the ridge penalty (it is quadratic)."""
        value = self.reg * (q.mean @ q.mean + q.trace_cov())
        return Expectation(float(value), 2.0 * self.reg * q.mean, self.reg * np.eye(self.dim))

    def value(self, theta):
        theta = _theta(theta, self.dim)
        z = theta @ self.X.T
        return self.scale * np.sum(self.link_loss(z), axis=-1) + self.reg * np.sum(theta**2, axis=-1)

    def grad(self, theta):
        theta = _theta(theta, self.dim)
        z = theta @ self.X.T
        return self.scale * (self.link_grad(z) @ self.X) + 2.0 * self.reg * theta

    def hess(self, theta):
        theta = _theta(theta, self.dim)
        w = self.scale * self.link_hess(theta @ self.X.T)
        return np.einsum("...n,nd,ne->...de", w, self.X, self.X) + 2.0 * self.reg * np.eye(self.dim)

    def hess_diag(self, theta):
        theta = _theta(theta, self.dim)
        w = self.scale * self.link_hess(theta @ self.X.T)
        return w @ self.X**2 + 2.0 * self.reg

    def minibatch(self, indices):
        idx = np.asarray(indices)
        return Logistic(self.X[idx], self.y[idx], self.reg, self.scale * self.n_examples / idx.size)


def make_logistic(data, reg_strength: float, split: str | None = "train") -> Logistic:
    X, y = _xy(data, split)
    return Logistic(X, y, reg_strength)


def test_log_loss(model_mean, data, split: str | None = "test") -> float:
    """Mean per-example logistic loss at the point estimate ``model_mean``."""
    X, y = _xy(data, split)
    if X.shape[0] == 0:
        raise EmptySplit(f"split {split!r} is empty")
    z = X @ np.asarray(model_mean, dtype=float)
    return float(np.mean(np.logaddexp(0.0, -y * z)))


test_log_loss.__test__ = False


def _xy(data, split):
    if isinstance(data, tuple):
        X, y = data
        return np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    if split is None:
        return data.features, data.labels
    return data.split_arrays(split)


# -- variational inference ----------------------------------------------------


class VIObjective(Objective):
    """Variational objective ``E_q[neg_log_joint] - H(q)``.

    Pointwise evaluation is that of ``neg_log_joint``; the entropy enters only
    through :meth:`expectation_offset`, which estimators fold into their
    averaged gradient and Hessian (it adds ``-inv(cov)`` to the Hessian).
    """

    name = "vi"

    def __init__(self, neg_log_joint: Objective):
        neg_log_joint.require(Capability.GRAD)
        self.inner = neg_log_joint
        self.dim = neg_log_joint.dim
        self.capabilities = frozenset(neg_log_joint.capabilities)

    @property
    def n_examples(self):
        return self.inner.n_examples

    def value(self, theta):
        return self.inner.value(theta)

    def grad(self, theta):
        return self.inner.grad(theta)

    def hess(self, theta):
        return self.inner.hess(theta)

    def hess_diag(self, theta):
        return self.inner.hess_diag(theta)

    def __getattr__(self, name):
        # GLM hooks (X, scale, link_*) come from the wrapped model.
        if name in {"X", "y", "scale", "link_loss", "link_grad", "link_hess", "reg_expectation", "reg"}:
            return getattr(self.inner, name)
        raise AttributeError(name)

    def expectation_offset(self, q):
        return Expectation(-q.entropy(), np.zeros(self.dim), -0.5 * q.precision_matrix)

    def expectation(self, q):
        inner = self.inner.expectation(q)
        off = self.expectation_offset(q)
        return Expectation(inner.value + off.value, inner.grad_mean, inner.grad_cov + off.grad_cov)

    def minibatch(self, indices):
        return VIObjective(self.inner.minibatch(indices))


def make_vi_objective(neg_log_joint: Objective) -> VIObjective:
    return VIObjective(neg_log_joint)
