"""Datasets: LIBSVM text I/O, synthetic generators, standardization and splits.

Features are stored dense.  Every dataset carries named ``train`` /
``validation`` / ``test`` index arrays; files without split information get
a seeded 70/10/20 shuffle.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BadParams, EmptySplit, LabelDomainError, ParseError
from .gaussian import rng_stream

SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")
_INDEX = re.compile(r"\d+\Z")
_TOKEN = re.compile(r"\S+")

# rng stream tags
_SPLIT_STREAM = 10
_REGRESSION_STREAM = 11
_BLOBS_STREAM = 12


class Task(enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    splits: dict = field(default_factory=dict)
    feature_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, ndmin=2)
        y = np.array(self.labels, dtype=np.float64).reshape(-1)
        if X.shape[0] != y.size:
            raise BadParams(f"{X.shape[0]} feature rows but {y.size} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise BadParams("features and labels must be finite")
        if self.meta.get("task") == Task.CLASSIFICATION.value and not np.all(np.isin(y, (-1.0, 1.0))):
            raise LabelDomainError("classification labels must be -1 or +1")
        n = y.size
        splits = {}
        seen = np.zeros(n, dtype=bool)
        for name, idx in dict(self.splits).items():
            idx = np.asarray(idx, dtype=np.intp).reshape(-1)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise BadParams(f"split {name!r} has indices outside [0, {n})")
            if np.any(seen[idx]) or np.unique(idx).size != idx.size:
                raise BadParams(f"split {name!r} overlaps another split")
            seen[idx] = True
            idx.setflags(write=False)
            splits[name] = idx
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "splits", splits)
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def split_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        if split not in self.splits:
            raise EmptySplit(f"dataset has no split {split!r}")
        idx = self.splits[split]
        return self.features[idx], self.labels[idx]

    def subset(self, split: str) -> Dataset:
        """The rows of one split as a dataset whose only split is ``train``."""
        X, y = self.split_arrays(split)
        return Dataset(X, y, {"train": np.arange(y.size)}, self.feature_names, dict(self.meta))


def default_splits(n: int, seed: int = 0, fractions=DEFAULT_FRACTIONS) -> dict:
    """Seeded shuffle into train/validation/test by ``fractions``."""
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    perm = rng_stream(seed, _SPLIT_STREAM).permutation(n)
    cuts = np.cumsum([n_train, n_val])
    parts = np.split(perm, cuts)
    return {name: np.sort(p) for name, p in zip(SPLIT_NAMES, parts)}


# -- LIBSVM -------------------------------------------------------------------


def _parse_number(tok: str, line: int, col: int, what: str) -> float:
    if not _NUMBER.match(tok):
        raise ParseError(line, col, f"{what} {tok!r} is not a number")
    val = float(tok)
    if not math.isfinite(val):
        raise ParseError(line, col, f"{what} {tok!r} overflows")
    return val


def _normalize_labels(labels: np.ndarray) -> np.ndarray:
    values = set(np.unique(labels).tolist())
    if values <= {-1.0, 1.0}:
        return labels
    if values <= {0.0, 1.0}:
        return np.where(labels == 0.0, -1.0, 1.0)
    raise LabelDomainError(f"classification labels must be {{0, 1}} or {{-1, +1}}, got {sorted(values)}")


def parse_libsvm(text_lines, expect: Task | str = Task.CLASSIFICATION, split_seed: int = 0) -> Dataset:
    """Parse LIBSVM lines ``<label> <idx>:<val> ...`` into a dense :class:`Dataset`.

    Indices are 1-based and strictly increasing within a line; ``D`` is the
    largest index seen.  Blank lines are skipped.  Column numbers in errors
    are 1-based character offsets.
    """
    expect = Task(expect)
    labels: list[float] = []
    rows: list[tuple[list[int], list[float]]] = []
    width = 0
    for lineno, raw in enumerate(text_lines, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(lineno, exc.start + 1, "invalid UTF-8") from None
        tokens = list(_TOKEN.finditer(raw))
        if not tokens:
            continue
        first = tokens[0]
        labels.append(_parse_number(first.group(), lineno, first.start() + 1, "label"))
        cols: list[int] = []
        vals: list[float] = []
        for m in tokens[1:]:
            tok, col = m.group(), m.start() + 1
            head, sep, tail = tok.partition(":")
            if not sep:
                raise ParseError(lineno, col, f"expected index:value, got {tok!r}")
            if not _INDEX.match(head) or int(head) < 1:
                raise ParseError(lineno, col, f"index {head!r} is not a positive integer")
            idx = int(head)
            if cols and idx <= cols[-1]:
                raise ParseError(lineno, col, f"index {idx} does not increase (previous {cols[-1]})")
            vals.append(_parse_number(tail, lineno, col + len(head) + 1, "value"))
            cols.append(idx)
        if cols:
            width = max(width, cols[-1])
        rows.append((cols, vals))
    if not rows:
        raise ParseError(1, 1, "no examples")
    X = np.zeros((len(rows), width))
    for i, (cols, vals) in enumerate(rows):
        X[i, np.asarray(cols, dtype=np.intp) - 1] = vals
    y = np.asarray(labels)
    if expect is Task.CLASSIFICATION:
        y = _normalize_labels(y)
    return Dataset(X, y, default_splits(len(rows), split_seed), meta={"task": expect.value})


def read_libsvm(path, expect: Task | str = Task.CLASSIFICATION, split_seed: int = 0) -> Dataset:
    with open(path, "rb") as fh:
        data = parse_libsvm(fh, expect, split_seed)
    return replace(data, meta={**data.meta, "source": str(path)})


def _fmt(x: float) -> str:
    return "%.17g" % x


def format_libsvm(d: Dataset) -> str:
    out = []
    for row, label in zip(d.features, d.labels):
        nz = np.flatnonzero(row)
        out.append(" ".join([_fmt(label), *(f"{j + 1}:{_fmt(row[j])}" for j in nz)]))
    return "\n".join(out) + "\n"


def write_libsvm(d: Dataset, path) -> None:
    """Write in LIBSVM format with 17 significant digits, omitting zeros.

    Trailing all-zero columns cannot be represented and are lost on reading.
    """
    Path(path).write_text(format_libsvm(d), encoding="utf-8")


def export_csv(d: Dataset, path) -> None:
    """One row per example: features, label, and the split it belongs to."""
    names = np.full(d.n, "", dtype=object)
    for name, idx in d.splits.items():
        names[idx] = name
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.feature_names, "label", "split"])
        for row, label, split in zip(d.features, d.labels, names):
            w.writerow([*map(_fmt, row), _fmt(label), split])


# -- standardization ----------------------------------------------------------


class ScaleRecord(NamedTuple):
    mean: np.ndarray
    scale: np.ndarray


def standardize(d: Dataset, stats_from: str = "train") -> tuple[Dataset, ScaleRecord]:
    """Center and scale every feature with statistics from one split only.

    Columns with (numerically) zero spread there are centered and given
    scale 1.
    """
    X, _ = d.split_arrays(stats_from)
    if X.shape[0] == 0:
        raise EmptySplit(f"split {stats_from!r} is empty")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.max(np.abs(X), axis=0))
    scale = np.where(flat, 1.0, std)
    out = replace(d, features=(d.features - mean) / scale, meta=dict(d.meta))
    return out, ScaleRecord(mean, scale)


# -- synthetic data -----------------------------------------------------------


def _check_sizes(N, D):
    if int(N) != N or int(D) != D or N < 1 or D < 1:
        raise BadParams(f"N and D must be positive integers, got N={N}, D={D}")


def make_synthetic_regression(N: int, D: int, sparsity: float, noise_sd: float, seed: int = 0):
    """``y = X theta + noise`` with ``ceil(sparsity * D)`` nonzero coefficients.

    Rows of ``X`` are standard normal; nonzero coefficients have magnitude
    in [0.5, 2] with random sign.  Returns ``(dataset, theta_true)``.
    """
    _check_sizes(N, D)
    if not 0.0 <= sparsity <= 1.0:
        raise BadParams(f"sparsity must lie in [0, 1], got {sparsity}")
    if not noise_sd >= 0.0:
        raise BadParams(f"noise_sd must be >= 0, got {noise_sd}")
    rng = rng_stream(seed, _REGRESSION_STREAM)
    X = rng.standard_normal((N, D))
    k = math.ceil(sparsity * D)
    theta = np.zeros(D)
    support = np.sort(rng.choice(D, size=k, replace=False))
    theta[support] = rng.uniform(0.5, 2.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    y = X @ theta + noise_sd * rng.standard_normal(N)
    meta = {"task": Task.REGRESSION.value, "generator": "regression"}
    return Dataset(X, y, default_splits(N, seed), meta=meta), theta


def make_synthetic_blobs(N: int, D: int, separation: float, seed: int = 0) -> Dataset:
    """Two unit-variance Gaussian classes centered at ``+-separation/2`` along a random direction."""
    _check_sizes(N, D)
    if not separation >= 0.0:
        raise BadParams(f"separation must be >= 0, got {separation}")
    rng = rng_stream(seed, _BLOBS_STREAM)
    direction = rng.standard_normal(D)
    direction /= np.linalg.norm(direction)
    y = rng.choice([-1.0, 1.0], size=N)
    X = 0.5 * separation * y[:, None] * direction + rng.standard_normal((N, D))
    meta = {"task": Task.CLASSIFICATION.value, "generator": "blobs", "direction": direction}
    return Dataset(X, y, default_splits(N, seed), meta=meta)
