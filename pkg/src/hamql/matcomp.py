"""Nuclear-norm matrix completion by singular-value soft thresholding.

:func:`complete` approximately solves

    min ||X||_*   subject to   X agrees with the observed entries,

with a soft-impute style iteration: threshold the singular values, then
overwrite the observed entries with their data values.  The threshold starts
at a fraction of the filled warm start's top singular value and decays
geometrically; driving it toward zero removes the shrinkage bias of a fixed
threshold, which would otherwise leave an O(threshold) error on the
unobserved block.  Observed entries of the returned matrix are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray

#: singular values below this multiple of the largest count as zero
RANK_EPS = 1e-10


@dataclass(frozen=True)
class ObservedSet:
    """Observed (row, column, value) entries of a partially known matrix."""

    rows: Array
    cols: Array
    values: Array
    shape: tuple[int, int]

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, values must be matching vectors")
        m, n = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= m):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n):
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        flat = rows * n + cols
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate (row, column) observations")
        for arr in (rows, cols, values):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", (int(m), int(n)))

    def __len__(self) -> int:
        return self.rows.size

    @classmethod
    def from_triples(
        cls, entries: Iterable[tuple[int, int, float]], shape: Sequence[int]
    ) -> "ObservedSet":
        triples = list(entries)
        rows = np.array([t[0] for t in triples], dtype=np.int64)
        cols = np.array([t[1] for t in triples], dtype=np.int64)
        values = np.array([t[2] for t in triples], dtype=float)
        return cls(rows, cols, values, (int(shape[0]), int(shape[1])))

    @classmethod
    def from_mask(cls, matrix: Array, mask: Array) -> "ObservedSet":
        matrix = np.asarray(matrix, dtype=float)
        rows, cols = np.nonzero(mask)
        return cls(rows, cols, matrix[rows, cols], matrix.shape)


@dataclass(frozen=True)
class CompletionConfig:
    """Solver knobs.  ``shrinkage=None`` resolves, once, to 0.1 times the top
    singular value of the observed-filled warm start; the threshold then
    decays by ``shrinkage_decay`` per iteration (1.0 keeps it fixed)."""

    max_iterations: int = 500
    rel_tolerance: float = 1e-4
    shrinkage: float | None = None
    shrinkage_decay: float = 0.9
    warm_start: Array | None = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.shrinkage is not None and not self.shrinkage > 0:
            raise ValueError("shrinkage must be positive when given")
        if not 0.0 < self.shrinkage_decay <= 1.0:
            raise ValueError("shrinkage_decay must lie in (0, 1]")


@dataclass(frozen=True)
class CompletionResult:
    matrix: Array
    converged: bool
    iterations: int


def nuclear_norm(matrix: Array) -> float:
    """Sum of singular values from a full SVD."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix must be finite")
    return float(np.linalg.svd(matrix, compute_uv=False).sum())


def approx_rank(matrix: Array, fraction: float = 0.99) -> int:
    """Smallest k whose top-k singular values reach ``fraction`` of the nuclear norm."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    s = s[s > RANK_EPS * s[0]]
    total = s.sum()
    cum = np.cumsum(s)
    # tiny slack so fraction=1.0 is not defeated by rounding in the cumsum
    return int(np.argmax(cum >= fraction * total - 1e-12 * total)) + 1


def soft_threshold_singular_values(matrix: Array, tau: float) -> Array:
    """SVD shrink: subtract ``tau`` from every singular value, clip at zero."""
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def complete(obs: ObservedSet, cfg: CompletionConfig = CompletionConfig()) -> CompletionResult:
    """Fill a partial matrix with an approximately minimal-nuclear-norm completion.

    Iterates {SVD soft threshold; overwrite observed entries} from the
    (observed-filled) warm start until the relative Frobenius change drops
    below ``cfg.rel_tolerance``.  Non-convergence is reported through the
    ``converged`` flag, never raised; the training loop tolerates approximate
    completions.
    """
    if len(obs) == 0:
        raise ValueError("observed set is empty")
    if cfg.warm_start is not None:
        x = np.array(cfg.warm_start, dtype=float)
        if x.shape != obs.shape:
            raise ValueError("warm start shape does not match the observed set")
    else:
        x = np.zeros(obs.shape)
    x[obs.rows, obs.cols] = obs.values

    tau = cfg.shrinkage
    if tau is None:
        top = np.linalg.svd(x, compute_uv=False)
        tau = 0.1 * float(top[0]) if top.size else 0.0

    converged = False
    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        prev = x
        x = soft_threshold_singular_values(x, tau)
        x[obs.rows, obs.cols] = obs.values
        change = np.linalg.norm(x - prev) / max(1.0, np.linalg.norm(prev))
        if change < cfg.rel_tolerance:
            converged = True
            break
        tau *= cfg.shrinkage_decay
    return CompletionResult(x, converged, iterations)
