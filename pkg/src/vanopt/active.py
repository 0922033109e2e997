"""Pool-based active learning driven by the predictive entropy under ``q``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import OutOfRange, PoolTooSmall
from .gaussian import GaussianState, rng_stream, sample
from .objectives import Logistic, test_log_loss
from .optim import OptimizerConfig, Stepper

DEFAULT_PREDICTIVE_SAMPLES = 100

# rng stream tags
_ACQ_STREAM = 20
_RANDOM_STREAM = 21


def predictive_prob(x, q: GaussianState, S: int = DEFAULT_PREDICTIVE_SAMPLES, rng=0):
    """Monte-Carlo ``p(y=+1 | x) = mean_s sigmoid(x^T theta_s)`` with ``theta_s ~ q``.

    ``x`` is one feature vector or a matrix of them (one per row); all rows
    share the same parameter draws.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    theta, _ = sample(q, rng, S)
    x = np.asarray(x, dtype=float)
    return np.mean(special.expit(theta @ x.T), axis=0)


def entropy_score(p):
    """Binary entropy in nats, with ``0 log 0 = 0``.

    The larger of ``p`` and ``1 - p`` is taken as the reference value so
    that ``entropy_score(p) == entropy_score(1 - p)`` holds exactly.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~(p >= 0.0) | ~(p <= 1.0)):
        raise OutOfRange("probabilities must lie in [0, 1]")
    hi = np.where(p >= 0.5, p, 1.0 - p)
    lo = 1.0 - hi
    h = -(special.xlogy(hi, hi) + special.xlogy(lo, lo))
    return np.maximum(h, 0.0)


def top_m(scores, M: int) -> np.ndarray:
    """Indices of the ``M`` largest scores; ties go to the smaller index."""
    scores = np.asarray(scores, dtype=float)
    if M > scores.size:
        raise PoolTooSmall(f"cannot select {M} from a pool of {scores.size}")
    return np.argsort(-scores, kind="stable")[:M]


@dataclass(frozen=True)
class AcquisitionResult:
    scores: np.ndarray
    selected_indices: list
    predictive_probs: np.ndarray


def acquire(probs, M: int) -> AcquisitionResult:
    """Rank pool points with known predictive probabilities."""
    probs = np.asarray(probs, dtype=float)
    scores = entropy_score(probs)
    return AcquisitionResult(scores, top_m(scores, M).tolist(), probs)


def _pool_features(pool):
    if hasattr(pool, "features"):
        return pool.features
    return np.atleast_2d(np.asarray(pool, dtype=float))


def select_batch(pool, q: GaussianState, M: int, S: int = DEFAULT_PREDICTIVE_SAMPLES, rng=0) -> AcquisitionResult:
    """Pick the ``M`` pool points with the highest predictive entropy."""
    X = _pool_features(pool)
    if M > X.shape[0]:
        raise PoolTooSmall(f"cannot select {M} from a pool of {X.shape[0]}")
    return acquire(predictive_prob(X, q, S, rng), M)


@dataclass(frozen=True)
class ActiveRecord:
    round: int
    examples_seen: int
    test_loss: float
    trace_sigma: float


@dataclass
class ActiveTrace:
    records: list = field(default_factory=list)
    state: GaussianState | None = None

    @property
    def examples_seen(self) -> np.ndarray:
        return np.array([r.examples_seen for r in self.records])

    @property
    def test_losses(self) -> np.ndarray:
        return np.array([r.test_loss for r in self.records])

    def examples_to_reach(self, loss: float) -> float:
        """Examples seen when the test loss first drops to ``loss`` (inf if never)."""
        for r in self.records:
            if r.test_loss <= loss:
                return float(r.examples_seen)
        return math.inf


def active_loop(
    train_pool,
    test,
    config: OptimizerConfig,
    M: int,
    rounds: int,
    reg_strength: float = 1.0,
    replace: bool = False,
    strategy: str = "entropy",
    S: int = DEFAULT_PREDICTIVE_SAMPLES,
    pool_split: str = "train",
    test_split: str = "test",
    init: GaussianState | None = None,
) -> ActiveTrace:
    """Alternate acquisition and optimizer steps on the acquired minibatch.

    Each round scores the remaining pool under the current ``q``, selects
    ``M`` points (``strategy`` is ``"entropy"`` or ``"random"``), takes one
    step of ``config.method`` on the logistic loss of those points scaled by
    ``N / M``, and records the test log-loss.  Selected points leave the
    pool unless ``replace`` is set.
    """
    if strategy not in ("entropy", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    X, y = train_pool.split_arrays(pool_split) if hasattr(train_pool, "split_arrays") else train_pool
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if M < 1 or (not replace and rounds * M > n) or M > n:
        raise PoolTooSmall(f"{rounds} rounds of {M} need more than {n} pool points")
    full = Logistic(X, y, reg_strength)
    stepper = Stepper(config)
    q = stepper.initial_state(full, init)
    remaining = np.arange(n)
    seen = 0

    def loss(state):
        return test_log_loss(state.mean, test, test_split)

    trace = ActiveTrace([ActiveRecord(0, 0, loss(q), q.trace_cov())], q)
    for r in range(rounds):
        if strategy == "entropy":
            picked = select_batch(X[remaining], q, M, S, rng_stream(config.seed, _ACQ_STREAM, r)).selected_indices
        else:
            picked = rng_stream(config.seed, _RANDOM_STREAM, r).choice(remaining.size, size=M, replace=False)
        batch = np.sort(remaining[np.asarray(picked, dtype=np.intp)])
        q = stepper.step(full.minibatch(batch), q, r).state
        seen += M
        if not replace:
            remaining = np.setdiff1d(remaining, batch)
        trace.records.append(ActiveRecord(r + 1, seen, loss(q), q.trace_cov()))
    trace.state = q
    return trace
