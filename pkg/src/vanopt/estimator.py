"""Estimates of ``E_q[grad f]`` and ``E_q[hess f]`` under a Gaussian ``q``.

Three routes are available: closed-form engines supplied by the objective,
Gauss-Hermite quadrature for objectives whose data terms depend on the
parameter only through a scalar ``x_i^T theta``, and Monte-Carlo with
reparameterized draws.  All Monte-Carlo reductions run over fixed-size
chunks in sample order, so results are bit-reproducible for a given seed.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CapabilityMissing, DegenerateVariance, NonFiniteValue
from .gaussian import VARIANCE_FLOOR, GaussianState, cholesky, reparameterize, rng_stream, symmetrize
from .objectives import Capability, Objective

CHUNK = 4096
DEFAULT_GH_ORDER = 20


class Method(enum.Enum):
    EXACT = "exact"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "mc"
    GAUSS_NEWTON = "gauss-newton"


class HessianMode(enum.Enum):
    FULL = "full"
    DIAG = "diag"
    REPARAM_DIAG = "reparam-diag"
    GAUSS_NEWTON = "gauss-newton"
    NONE = "none"


@dataclass(frozen=True, eq=False)
class ExpectationEstimate:
    avg_grad: np.ndarray
    avg_hess: np.ndarray | None = None
    hess_diag: np.ndarray | None = None
    method: Method = Method.EXACT
    samples_used: int = 0
    seed: int | None = None
    value: float = float("nan")

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.avg_grad))


def _seeded(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return rng_stream(int(rng)), int(rng)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteValue("objective returned NaN or Inf at a sampled point")


def _apply_offset(obj: Objective, q: GaussianState, est: ExpectationEstimate) -> ExpectationEstimate:
    off = obj.expectation_offset(q)
    if off is None:
        return est
    avg_hess = est.avg_hess
    hess_diag = est.hess_diag
    if avg_hess is not None:
        avg_hess = avg_hess + 2.0 * off.grad_cov
    if hess_diag is not None:
        hess_diag = hess_diag + 2.0 * np.diag(off.grad_cov)
    return ExpectationEstimate(
        est.avg_grad + off.grad_mean, avg_hess, hess_diag, est.method, est.samples_used, est.seed,
        est.value + off.value,
    )


def estimate_exact(obj: Objective, q: GaussianState, hessian_mode: HessianMode = HessianMode.FULL) -> ExpectationEstimate:
    """Closed-form estimate; the Hessian is twice the covariance gradient of ``E_q[f]``."""
    obj.require(Capability.EXACT)
    if hessian_mode is HessianMode.GAUSS_NEWTON:
        raise CapabilityMissing("Gauss-Newton expectations need Monte-Carlo samples")
    e = obj.expectation(q)
    hess = symmetrize(2.0 * np.asarray(e.grad_cov))
    avg_hess = hess if hessian_mode is HessianMode.FULL else None
    hess_diag = np.diag(hess).copy() if hessian_mode in (HessianMode.DIAG, HessianMode.REPARAM_DIAG) else None
    return ExpectationEstimate(np.asarray(e.grad_mean, dtype=float), avg_hess, hess_diag, Method.EXACT, 0, None, e.value)


def estimate_mc(
    obj: Objective,
    q: GaussianState,
    samples: int,
    rng=0,
    hessian_mode: HessianMode = HessianMode.FULL,
) -> ExpectationEstimate:
    """Monte-Carlo averages over ``samples`` reparameterized draws from ``q``.

    One batch of draws feeds the gradient, the Hessian and the value
    estimate.  ``GAUSS_NEWTON`` averages ``grad grad^T`` instead of the
    Hessian; ``REPARAM_DIAG`` estimates the Hessian diagonal from gradients
    alone (see :func:`estimate_hess_diag_reparam`).
    """
    obj.require(Capability.GRAD)
    if hessian_mode is HessianMode.FULL:
        obj.require(Capability.HESS)
    elif hessian_mode is HessianMode.DIAG:
        if not (obj.has(Capability.HESS_DIAG) or obj.has(Capability.HESS)):
            raise CapabilityMissing(f"{obj.name} lacks hess_diag")
    elif hessian_mode is HessianMode.REPARAM_DIAG:
        sd = np.sqrt(q.variances)
        if np.any(sd < np.sqrt(VARIANCE_FLOOR)):
            raise DegenerateVariance("reparameterized Hessian needs every sigma_d above the floor")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    gen, seed = _seeded(rng)
    d = q.dim
    with_value = obj.has(Capability.VALUE)

    g_sum = np.zeros(d)
    h_sum = np.zeros((d, d)) if hessian_mode in (HessianMode.FULL, HessianMode.GAUSS_NEWTON) else None
    hd_sum = np.zeros(d) if hessian_mode in (HessianMode.DIAG, HessianMode.REPARAM_DIAG) else None
    v_sum = 0.0
    inv_sd = 1.0 / np.sqrt(q.variances) if hessian_mode is HessianMode.REPARAM_DIAG else None

    for start in range(0, samples, CHUNK):
        # chunked draws consume the stream exactly like one (samples, d) draw
        e = gen.standard_normal((min(CHUNK, samples - start), d))
        theta = reparameterize(q, e)
        g = obj.grad(theta)
        _check_finite(g)
        g_sum += g.sum(axis=0)
        if hessian_mode is HessianMode.FULL:
            h = obj.hess(theta)
            _check_finite(h)
            h_sum += h.sum(axis=0)
        elif hessian_mode is HessianMode.GAUSS_NEWTON:
            h_sum += g.T @ g
        elif hessian_mode is HessianMode.DIAG:
            hd = obj.hess_diag(theta)
            _check_finite(hd)
            hd_sum += hd.sum(axis=0)
        elif hessian_mode is HessianMode.REPARAM_DIAG:
            hd_sum += (g * e).sum(axis=0) * inv_sd
        if with_value:
            v = obj.value(theta)
            _check_finite(v)
            v_sum += float(np.sum(v))

    method = Method.GAUSS_NEWTON if hessian_mode is HessianMode.GAUSS_NEWTON else Method.MONTE_CARLO
    est = ExpectationEstimate(
        g_sum / samples,
        None if h_sum is None else symmetrize(h_sum / samples),
        None if hd_sum is None else hd_sum / samples,
        method,
        samples,
        seed,
        v_sum / samples if with_value else float("nan"),
    )
    return _apply_offset(obj, q, est)


def estimate_hess_diag_reparam(obj: Objective, q: GaussianState, samples: int, rng=0) -> np.ndarray:
    """Unbiased estimate of ``E_q[diag hess f]`` from gradients only.

    Uses ``E_q[d^2 f / d theta_d^2] = 2 d/d(sigma_d^2) E[f(mu + sigma * eps)]``
    with the pathwise derivative ``d f / d(sigma_d^2) = grad_d f * eps_d / (2 sigma_d)``.
    """
    obj.require(Capability.GRAD)
    est = estimate_mc(obj, q, samples, rng, HessianMode.REPARAM_DIAG)
    return est.hess_diag


# -- Gauss-Hermite ------------------------------------------------------------


def hermgauss_normal(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights so that ``sum(w * f(x)) ~ E[f(z)]`` for ``z ~ N(0, 1)``."""
    x, w = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def estimate_quadrature_glm(
    obj: Objective,
    q: GaussianState,
    order: int = DEFAULT_GH_ORDER,
    hessian_mode: HessianMode = HessianMode.FULL,
) -> ExpectationEstimate:
    """Sampling-free estimate for objectives with per-example scalar links.

    Each data term depends on ``theta`` through ``z_i = x_i^T theta``, which is
    ``N(x_i^T mu, x_i^T cov x_i)`` under ``q``, so every expectation reduces
    to a 1-D Gauss-Hermite rule.
    """
    if not obj.has(Capability.GLM):
        raise CapabilityMissing(f"{obj.name} lacks glm_structure")
    if order < 3:
        raise ValueError("quadrature order must be >= 3")
    X = obj.X
    m = X @ q.mean
    if q.is_diagonal:
        v = (X**2) @ q.var
    else:
        v = np.einsum("nd,de,ne->n", X, q.cov, X)
    nodes, weights = hermgauss_normal(order)
    # (order, N): per-example labels broadcast along the last axis
    z = m[None, :] + nodes[:, None] * np.sqrt(v)[None, :]
    e_loss = weights @ obj.link_loss(z)
    e_grad = weights @ obj.link_grad(z)
    e_hess = weights @ obj.link_hess(z)
    reg = obj.reg_expectation(q)

    avg_grad = obj.scale * (X.T @ e_grad) + reg.grad_mean
    hess = obj.scale * (X.T * e_hess) @ X + 2.0 * reg.grad_cov
    value = obj.scale * float(np.sum(e_loss)) + reg.value
    est = ExpectationEstimate(
        avg_grad,
        symmetrize(hess) if hessian_mode is HessianMode.FULL else None,
        np.diag(hess).copy() if hessian_mode in (HessianMode.DIAG, HessianMode.REPARAM_DIAG) else None,
        Method.QUADRATURE,
        0,
        None,
        value,
    )
    return _apply_offset(obj, q, est)


def estimate(
    obj: Objective,
    q: GaussianState,
    method: Method,
    hessian_mode: HessianMode = HessianMode.FULL,
    samples: int = 1,
    rng=0,
    order: int = DEFAULT_GH_ORDER,
) -> ExpectationEstimate:
    """Dispatch to the exact, quadrature or Monte-Carlo route."""
    if method is Method.EXACT:
        return estimate_exact(obj, q, hessian_mode)
    if method is Method.QUADRATURE:
        if hessian_mode is HessianMode.GAUSS_NEWTON:
            raise CapabilityMissing("Gauss-Newton expectations need Monte-Carlo samples")
        return estimate_quadrature_glm(obj, q, order, hessian_mode)
    return estimate_mc(obj, q, samples, rng, hessian_mode)


# -- identity check -----------------------------------------------------------


class BonnetPriceReport(NamedTuple):
    mean_discrepancy: float
    cov_discrepancy: float


def _tensor_gh(q: GaussianState, order: int):
    nodes, weights = hermgauss_normal(order)
    d = q.dim
    grid = np.array(list(itertools.product(nodes, repeat=d)))
    w = np.prod(np.array(list(itertools.product(weights, repeat=d))), axis=1)
    return grid, w


def check_bonnet_price(
    obj: Objective,
    q: GaussianState,
    samples: int | None = None,
    fd_step: float = 1e-4,
    rng=0,
    order: int = DEFAULT_GH_ORDER,
) -> BonnetPriceReport:
    """Compare finite differences of ``E_q[f]`` with ``E_q[grad f]`` and ``E_q[hess f] / 2``.

    With ``samples=None`` the left side uses the objective's closed-form
    expectation when it has one (tensor Gauss-Hermite otherwise) and the
    right side uses tensor Gauss-Hermite.  With ``samples`` set, both sides
    use one shared batch of standard-normal noise.

    Returns the maximum absolute discrepancy for the mean identity and for
    the covariance identity.
    """
    obj.require(Capability.VALUE, Capability.GRAD, Capability.HESS)
    d = q.dim
    if d > 4:
        raise ValueError("check_bonnet_price is limited to D <= 4")
    mu0 = q.mean.copy()
    cov0 = q.cov_matrix.copy()

    if samples is None:
        eps, w = _tensor_gh(q, order)
    else:
        gen, _ = _seeded(rng)
        eps = gen.standard_normal((samples, d))
        w = np.full(samples, 1.0 / samples)

    def draws(mu, cov):
        return mu + eps @ cholesky(cov).T

    def objective_mean(mu, cov):
        if samples is None and obj.has(Capability.EXACT):
            return obj.expectation(GaussianState.full(mu, cov)).value
        return float(w @ obj.value(draws(mu, cov)))

    theta = draws(mu0, cov0)
    rhs_mean = w @ obj.grad(theta)
    rhs_cov = 0.5 * np.einsum("s,sij->ij", w, obj.hess(theta))

    lhs_mean = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = fd_step
        lhs_mean[i] = (objective_mean(mu0 + e, cov0) - objective_mean(mu0 - e, cov0)) / (2 * fd_step)

    lhs_cov = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = fd_step
            diff = (objective_mean(mu0, cov0 + e) - objective_mean(mu0, cov0 - e)) / (2 * fd_step)
            lhs_cov[i, j] = lhs_cov[j, i] = diff if i == j else 0.5 * diff

    return BonnetPriceReport(
        float(np.max(np.abs(lhs_mean - rhs_mean))), float(np.max(np.abs(lhs_cov - rhs_cov)))
    )
