"""VAN-family optimizers, baselines, and the iteration driver.

The distribution-based methods keep a :class:`GaussianState`; VAN and VAG
accumulate the precision directly and take mean steps scaled by the new
precision.  The point-based baselines (Newton, AdaGrad, iRidge) keep a plain
parameter vector.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import linalg

from .errors import CapabilityMissing, ConfigError, FactorizationFailure, MaxItersExceeded, SafeguardExhausted
from .estimator import ExpectationEstimate, HessianMode, Method, estimate
from .gaussian import (
    VARIANCE_FLOOR,
    GaussianState,
    NaturalParams,
    cholesky,
    from_natural_params,
    rng_stream,
    symmetrize,
    to_natural_params,
)
from .objectives import Capability, Lasso, Objective

MAX_HALVINGS = 30
EIGEN_FLOOR = 1e-8

# rng stream tags
_MC_STREAM = 0
_BATCH_STREAM = 1


class OptMethod(enum.Enum):
    VAN = "van"
    VAN_NATURAL = "van-natural"
    VAG = "vag"
    VAN_D = "van-d"
    VAG_D = "vag-d"
    VSGD = "vsgd"
    NEWTON = "newton"
    ADAGRAD = "adagrad"
    IRIDGE = "iridge"


DISTRIBUTION_METHODS = {
    OptMethod.VAN, OptMethod.VAN_NATURAL, OptMethod.VAG, OptMethod.VAN_D, OptMethod.VAG_D, OptMethod.VSGD,
}
DIAGONAL_METHODS = {OptMethod.VAN_D, OptMethod.VAG_D}


class Safeguard(enum.Enum):
    BACKTRACK = "backtrack"
    EIGEN_FLOOR = "eigen-floor"


@dataclass(frozen=True)
class StepSchedule:
    """``base / (1 + t) ** power``; ``power = 0`` is a constant step."""

    base: float
    power: float = 0.0

    def __call__(self, t: int) -> float:
        if self.power == 0.0:
            return self.base
        return self.base / (1.0 + t) ** self.power


def default_step(method: OptMethod) -> float:
    if method in (OptMethod.VSGD, OptMethod.ADAGRAD):
        return 0.01
    if method in (OptMethod.NEWTON, OptMethod.IRIDGE):
        return 1.0
    return 0.1


@dataclass
class OptimizerConfig:
    method: OptMethod = OptMethod.VAN
    schedule: StepSchedule | None = None
    mc_samples: int = 10
    estimator: Method | None = None
    max_iters: int = 10_000
    tol_grad: float = 1e-6
    tol_step: float = 1e-10
    seed: int = 0
    minibatch_size: int | None = None
    safeguard: Safeguard = Safeguard.BACKTRACK
    eigen_floor: float = EIGEN_FLOOR
    sigma0: float = 1.0
    quadrature_order: int = 20
    reparam_hess_diag: bool = True
    adagrad_eps: float = 1e-8
    iridge_floor: float = 1e-8
    record_time: bool = False

    def __post_init__(self):
        self.method = OptMethod(self.method)
        self.safeguard = Safeguard(self.safeguard)
        if self.estimator is not None:
            self.estimator = Method(self.estimator)
        if self.schedule is None:
            self.schedule = StepSchedule(default_step(self.method))
        self.validate()

    def validate(self):
        if not self.schedule.base > 0:
            raise ConfigError("step size must be > 0")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if not (self.tol_grad > 0 and self.tol_step > 0):
            raise ConfigError("tolerances must be > 0")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if self.sigma0 <= 0:
            raise ConfigError("sigma0 must be > 0")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    epoch_fraction: float
    f_at_mean: float
    L_estimate: float
    grad_norm: float
    step_norm: float
    trace_Sigma: float
    samples_used: int
    wallclock_ns: int


# -- single steps -------------------------------------------------------------


def _solve_pd(prec: np.ndarray, g: np.ndarray) -> np.ndarray:
    d = np.diagonal(prec)
    if np.count_nonzero(prec - np.diag(d)) == 0:
        return g / d
    return linalg.cho_solve((cholesky(prec), True), g)


def _eigen_floor(m: np.ndarray, floor: float) -> np.ndarray:
    w, v = np.linalg.eigh(symmetrize(m))
    return symmetrize((v * np.maximum(w, floor)) @ v.T)


def _precision_update(prec, increment, beta, safeguard, floor, max_halvings):
    """``prec + beta * increment`` made positive definite; returns it with the beta used."""
    b = beta
    for _ in range(max_halvings + 1):
        new = symmetrize(prec + b * increment)
        if safeguard is Safeguard.EIGEN_FLOOR:
            try:
                cholesky(new)
            except FactorizationFailure:
                new = _eigen_floor(new, floor)
            return new, b
        try:
            cholesky(new)
            return new, b
        except FactorizationFailure:
            b *= 0.5
    raise SafeguardExhausted(f"precision not positive definite after {max_halvings} step halvings")


def _van_update(q, avg_grad, avg_hess, beta, safeguard, floor, max_halvings):
    q = q.to_full()
    prec, b = _precision_update(q.precision_matrix, avg_hess, beta, safeguard, floor, max_halvings)
    mean = q.mean - b * _solve_pd(prec, avg_grad)
    return GaussianState.from_precision(mean, prec), b


def van_step(
    q: GaussianState,
    est: ExpectationEstimate,
    beta: float,
    safeguard: Safeguard = Safeguard.BACKTRACK,
    eigen_floor: float = EIGEN_FLOOR,
    max_halvings: int = MAX_HALVINGS,
) -> GaussianState:
    """One VAN step: precision first, then a mean step scaled by the new precision.

    ``P_new = P + beta * E[hess]`` and ``mu_new = mu - beta * inv(P_new) @ E[grad]``.
    If ``P_new`` is not positive definite the safeguard either halves ``beta``
    (up to ``max_halvings`` times) or floors its eigenvalues.
    """
    if est.avg_hess is None:
        raise ValueError("van_step needs a full averaged Hessian")
    return _van_update(q, est.avg_grad, est.avg_hess, beta, Safeguard(safeguard), eigen_floor, max_halvings)[0]


def vag_step(q: GaussianState, est: ExpectationEstimate, beta: float) -> GaussianState:
    """VAN step with the averaged gradient outer product in place of the Hessian."""
    if est.method is not Method.GAUSS_NEWTON or est.avg_hess is None:
        raise ValueError("vag_step needs a Gauss-Newton estimate")
    return _van_update(q, est.avg_grad, est.avg_hess, beta, Safeguard.BACKTRACK, EIGEN_FLOOR, MAX_HALVINGS)[0]


def _natural_update(q, grad_mu, grad_sigma, beta, safeguard, floor, max_halvings):
    q = q.to_full()
    grad_sigma = np.asarray(grad_sigma, dtype=float)
    lam = to_natural_params(q)
    # gradients in mean-parameter coordinates (m1 = mu, M2 = Sigma + mu mu^T)
    g_m1 = np.asarray(grad_mu, dtype=float) - 2.0 * grad_sigma @ q.mean
    g_m2 = grad_sigma
    b = beta
    for _ in range(max_halvings + 1):
        new = NaturalParams(lam.lam1 - b * g_m1, symmetrize(lam.Lam2 - b * g_m2))
        try:
            return from_natural_params(new), b
        except FactorizationFailure:
            if safeguard is Safeguard.EIGEN_FLOOR:
                prec = _eigen_floor(-2.0 * new.Lam2, floor)
                return from_natural_params(NaturalParams(new.lam1, -0.5 * prec)), b
            b *= 0.5
    raise SafeguardExhausted(f"precision not positive definite after {max_halvings} step halvings")


def van_step_natural(
    q: GaussianState,
    grad_mu,
    grad_Sigma,
    beta: float,
    safeguard: Safeguard = Safeguard.BACKTRACK,
    eigen_floor: float = EIGEN_FLOOR,
    max_halvings: int = MAX_HALVINGS,
) -> GaussianState:
    """VAN step taken literally in natural parameters.

    Maps the ``(mu, Sigma)`` gradients of the expected loss to mean-parameter
    gradients, subtracts ``beta`` times them from the natural parameters and
    converts back.
    """
    return _natural_update(q, grad_mu, grad_Sigma, beta, Safeguard(safeguard), eigen_floor, max_halvings)[0]


def _van_d_update(q, avg_grad, hess_diag, beta, safeguard, floor, max_halvings):
    s = q.precision if q.is_diagonal else np.diag(q.precision_matrix)
    b = beta
    for _ in range(max_halvings + 1):
        s_new = s + b * np.asarray(hess_diag, dtype=float)
        if safeguard is Safeguard.EIGEN_FLOOR:
            s_new = np.maximum(s_new, floor)
            break
        if np.all(s_new > 0) and np.all(np.isfinite(s_new)):
            break
        b *= 0.5
    else:
        raise SafeguardExhausted(f"precision not positive after {max_halvings} step halvings")
    mean = q.mean - b * (np.asarray(avg_grad, dtype=float) / s_new)
    return GaussianState.from_precision(mean, s_new), b


def van_d_step(
    q: GaussianState,
    avg_grad,
    hess_diag,
    beta: float,
    safeguard: Safeguard = Safeguard.BACKTRACK,
    eigen_floor: float = EIGEN_FLOOR,
    max_halvings: int = MAX_HALVINGS,
) -> GaussianState:
    """Diagonal VAN: per-coordinate precisions ``s`` accumulate ``beta * E[diag hess]``."""
    return _van_d_update(q, avg_grad, hess_diag, beta, Safeguard(safeguard), eigen_floor, max_halvings)[0]


def vsgd_step(q: GaussianState, grad_mu, grad_Sigma, rho: float, floor: float = VARIANCE_FLOOR) -> GaussianState:
    """Plain gradient step on ``(mu, Sigma)``; the covariance is eigenvalue-floored."""
    mean = q.mean - rho * np.asarray(grad_mu, dtype=float)
    grad_Sigma = np.asarray(grad_Sigma, dtype=float)
    if q.is_diagonal:
        g = np.diag(grad_Sigma) if grad_Sigma.ndim == 2 else grad_Sigma
        return GaussianState.diagonal(mean, np.maximum(q.var - rho * g, floor))
    cov = symmetrize(q.cov - rho * grad_Sigma)
    w = np.linalg.eigvalsh(cov)
    if w[0] < floor:
        cov = _eigen_floor(cov, floor)
    return GaussianState.full(mean, cov)


def newton_step(theta, grad, hess, rho: float, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """``theta - rho * solve(hess, grad)``.

    Eigenvalues of ``hess`` smaller than ``floor`` in magnitude are pushed
    out to ``+-floor`` so the solve is always defined.
    """
    theta = np.asarray(theta, dtype=float)
    hess = np.atleast_2d(np.asarray(hess, dtype=float))
    grad = np.asarray(grad, dtype=float)
    if not (np.all(np.isfinite(hess)) and np.all(np.isfinite(grad))):
        raise SafeguardExhausted("non-finite gradient or Hessian")
    w, v = np.linalg.eigh(symmetrize(hess))
    if np.min(np.abs(w)) >= floor:
        direction = np.linalg.solve(hess, grad)
    else:
        w = np.where(w >= 0, np.maximum(w, floor), np.minimum(w, -floor))
        direction = v @ ((v.T @ grad) / w)
    return theta - rho * direction


def adagrad_step(theta, s, grad, rho: float, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    grad = np.asarray(grad, dtype=float)
    s_new = np.asarray(s, dtype=float) + grad * grad
    theta_new = np.asarray(theta, dtype=float) - rho * grad / (np.sqrt(s_new) + eps)
    return theta_new, s_new


# -- iterative ridge ----------------------------------------------------------


def _iridge_iterates(X, y, reg_strength, floor) -> Iterator[np.ndarray]:
    gram = X.T @ X
    xty = X.T @ y
    theta = np.linalg.lstsq(X, y, rcond=None)[0]
    yield theta
    while True:
        # |t| ~ t^2 / (2|t_old|) around the current iterate
        weights = 0.5 * reg_strength / np.maximum(np.abs(theta), floor)
        theta = np.linalg.solve(gram + np.diag(weights), xty)
        yield theta


def iridge_solve(data, reg_strength: float, max_iters: int = 1000, tol: float = 1e-10, floor: float = 1e-8,
                 split: str | None = "train") -> np.ndarray:
    """Lasso reference solution by iteratively reweighted ridge regression.

    Minimizes ``sum_i (y_i - x_i^T theta)^2 + reg * sum_d |theta_d|``.  Starts
    from least squares and stops once successive iterates differ by less
    than ``tol``.  Coordinates that end at or below ``floor`` in magnitude
    are set to exactly zero.
    """
    if floor <= 0:
        raise ValueError("floor must be > 0")
    if isinstance(data, Lasso):
        X, y = data.X, data.y
    elif isinstance(data, tuple):
        X, y = (np.asarray(a, dtype=float) for a in data)
    else:
        X, y = data.split_arrays(split) if split else (data.features, data.labels)
    it = _iridge_iterates(X, y, float(reg_strength), floor)
    prev = next(it)
    for _ in range(max_iters):
        theta = next(it)
        if np.linalg.norm(theta - prev) < tol:
            return np.where(np.abs(theta) <= floor, 0.0, theta)
        prev = theta
    raise MaxItersExceeded(f"iRidge did not converge in {max_iters} iterations")


# -- driver -------------------------------------------------------------------


@dataclass
class RunResult:
    state: GaussianState | np.ndarray
    trace: list[IterationRecord]
    status: str

    @property
    def mean(self) -> np.ndarray:
        return self.state.mean if isinstance(self.state, GaussianState) else self.state

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class StepInfo:
    state: object
    grad_norm: float
    step_norm: float
    value_estimate: float
    samples: int


def default_estimator(obj: Objective) -> Method:
    if obj.has(Capability.EXACT):
        return Method.EXACT
    if obj.has(Capability.GLM):
        return Method.QUADRATURE
    return Method.MONTE_CARLO


def check_compatible(obj: Objective, config: OptimizerConfig) -> None:
    m = config.method
    if m is OptMethod.NEWTON:
        if obj.has(Capability.NONSMOOTH):
            raise CapabilityMissing(f"newton needs a smooth objective; {obj.name} is non-smooth")
        obj.require(Capability.GRAD, Capability.HESS)
    if m is OptMethod.IRIDGE and not isinstance(obj, Lasso):
        raise CapabilityMissing("iridge only applies to the lasso objective")
    if m in (OptMethod.VAG, OptMethod.VAG_D) and (config.estimator or Method.MONTE_CARLO) is not Method.MONTE_CARLO:
        raise ConfigError("Gauss-Newton variants need the Monte-Carlo estimator")
    if m in DISTRIBUTION_METHODS:
        est = config.estimator or default_estimator(obj)
        if est is Method.EXACT:
            obj.require(Capability.EXACT)
        elif est is Method.QUADRATURE:
            obj.require(Capability.GLM)
        else:
            obj.require(Capability.GRAD)
    if config.minibatch_size is not None and config.minibatch_size < obj.n_examples:
        obj.require(Capability.MINIBATCH)


class Stepper:
    """Applies one iteration of the configured method to a given objective.

    The objective passed to :meth:`step` may be a minibatch view; the
    stepper itself only carries the method state (AdaGrad's accumulator).
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.method = config.method
        self._adagrad_s = None

    def initial_state(self, obj: Objective, init=None):
        cfg = self.config
        if isinstance(init, GaussianState):
            if self.method in DISTRIBUTION_METHODS:
                if self.method in DIAGONAL_METHODS and not init.is_diagonal:
                    return GaussianState.diagonal(init.mean, init.variances)
                return init
            return init.mean.copy()
        mean = np.zeros(obj.dim) if init is None else np.atleast_1d(np.asarray(init, dtype=float)).copy()
        if self.method in DISTRIBUTION_METHODS:
            return GaussianState.isotropic(mean, cfg.sigma0, diagonal=self.method in DIAGONAL_METHODS)
        if self.method is OptMethod.ADAGRAD:
            self._adagrad_s = np.zeros(obj.dim)
        if self.method is OptMethod.IRIDGE and init is None:
            # reweighting never leaves an exact zero, so start from least squares
            return np.linalg.lstsq(obj.X, obj.y, rcond=None)[0]
        return mean

    def _estimate(self, obj, q, t, hessian_mode):
        cfg = self.config
        method = cfg.estimator or default_estimator(obj)
        rng = rng_stream(cfg.seed, _MC_STREAM, t)
        return estimate(obj, q, method, hessian_mode, cfg.mc_samples, rng, cfg.quadrature_order)

    def step(self, obj: Objective, state, t: int) -> StepInfo:
        cfg = self.config
        beta = cfg.schedule(t)
        m = self.method
        sg = (cfg.safeguard, cfg.eigen_floor, MAX_HALVINGS)

        if m in DISTRIBUTION_METHODS:
            q = state
            if m in (OptMethod.VAN, OptMethod.VAN_NATURAL, OptMethod.VSGD):
                est = self._estimate(obj, q, t, HessianMode.FULL)
            elif m is OptMethod.VAG:
                est = self._estimate(obj, q, t, HessianMode.GAUSS_NEWTON)
            elif m is OptMethod.VAG_D:
                est = self._estimate(obj, q, t, HessianMode.GAUSS_NEWTON)
                est = replace(est, hess_diag=np.diag(est.avg_hess).copy(), avg_hess=None)
            else:
                method = cfg.estimator or default_estimator(obj)
                mode = HessianMode.REPARAM_DIAG if (method is Method.MONTE_CARLO and cfg.reparam_hess_diag) else HessianMode.DIAG
                est = self._estimate(obj, q, t, mode)
            gnorm = est.grad_norm
            if gnorm < cfg.tol_grad:
                return StepInfo(q, gnorm, 0.0, est.value, est.samples_used)
            if m in (OptMethod.VAN, OptMethod.VAG):
                new, _ = _van_update(q, est.avg_grad, est.avg_hess, beta, *sg)
            elif m is OptMethod.VAN_NATURAL:
                new, _ = _natural_update(q, est.avg_grad, 0.5 * est.avg_hess, beta, *sg)
            elif m is OptMethod.VSGD:
                new = vsgd_step(q, est.avg_grad, 0.5 * est.avg_hess, beta)
            else:
                new, _ = _van_d_update(q, est.avg_grad, est.hess_diag, beta, *sg)
            return StepInfo(new, gnorm, float(np.linalg.norm(new.mean - q.mean)), est.value, est.samples_used)

        theta = state
        if m is OptMethod.IRIDGE:
            weights = 0.5 * obj.reg / np.maximum(np.abs(theta), cfg.iridge_floor)
            new = np.linalg.solve(obj._gram + np.diag(weights / obj.scale), obj._xty)
            return StepInfo(new, math.nan, float(np.linalg.norm(new - theta)), float(obj.value(theta)), 0)
        g = obj.grad(theta)
        gnorm = float(np.linalg.norm(g))
        value = float(obj.value(theta)) if obj.has(Capability.VALUE) else math.nan
        if gnorm < cfg.tol_grad:
            return StepInfo(theta, gnorm, 0.0, value, 0)
        if m is OptMethod.NEWTON:
            new = newton_step(theta, g, obj.hess(theta), beta, cfg.eigen_floor)
        else:
            if self._adagrad_s is None:
                self._adagrad_s = np.zeros_like(theta)
            new, self._adagrad_s = adagrad_step(theta, self._adagrad_s, g, beta, cfg.adagrad_eps)
        return StepInfo(new, gnorm, float(np.linalg.norm(new - theta)), value, 0)


def minibatches(n: int, size: int | None, seed: int) -> Iterator[np.ndarray | None]:
    """Endless stream of index batches: one seeded shuffle per epoch, no replacement.

    Yields ``None`` forever when ``size`` covers the whole data set.
    """
    if size is None or size >= n:
        while True:
            yield None
    epoch = 0
    while True:
        perm = rng_stream(seed, _BATCH_STREAM, epoch).permutation(n)
        for start in range(0, n, size):
            yield np.sort(perm[start:start + size])
        epoch += 1


def run(
    objective: Objective,
    config: OptimizerConfig,
    init=None,
    callbacks: Sequence[Callable[[IterationRecord, object], bool | None]] = (),
) -> RunResult:
    """Iterate the configured method until a stopping rule fires.

    Stops when the averaged-gradient norm drops below ``tol_grad`` or the
    mean moves less than ``tol_step`` (status ``"converged"``), after
    ``max_iters`` iterations (``"max_iters"``), or when a callback returns
    True (``"stopped"``).  Errors from steps or estimators are re-raised
    with the iteration number attached.
    """
    check_compatible(objective, config)
    stepper = Stepper(config)
    state = stepper.initial_state(objective, init)
    n = objective.n_examples
    batches = minibatches(n, config.minibatch_size, config.seed)
    seen = 0
    trace: list[IterationRecord] = []
    status = "max_iters"
    start_ns = time.perf_counter_ns()

    for t in range(config.max_iters):
        idx = next(batches)
        obj_t = objective if idx is None else objective.minibatch(idx)
        try:
            info = stepper.step(obj_t, state, t)
        except Exception as exc:
            exc.iteration = t + 1
            if hasattr(exc, "add_note"):
                exc.add_note(f"while running {config.method.value} at iteration {t + 1}")
            raise
        if info.grad_norm < config.tol_grad:
            status = "converged"
            break
        state = info.state
        seen += n if idx is None else idx.size
        mean = state.mean if isinstance(state, GaussianState) else state
        record = IterationRecord(
            iter=t + 1,
            epoch_fraction=seen / n if n else float(t + 1),
            f_at_mean=float(objective.value(mean)),
            L_estimate=float(info.value_estimate),
            grad_norm=float(info.grad_norm),
            step_norm=info.step_norm,
            trace_Sigma=state.trace_cov() if isinstance(state, GaussianState) else 0.0,
            samples_used=int(info.samples),
            wallclock_ns=time.perf_counter_ns() - start_ns if config.record_time else 0,
        )
        trace.append(record)
        if any(cb(record, state) for cb in callbacks):
            status = "stopped"
            break
        if info.step_norm < config.tol_step:
            status = "converged"
            break
    if stepper.method is OptMethod.IRIDGE and status == "converged":
        state = np.where(np.abs(state) <= config.iridge_floor, 0.0, state)
    return RunResult(state, trace, status)
