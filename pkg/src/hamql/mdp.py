"""Grid-discretized MDPs with Gaussian transition kernels.

A :class:`DiscreteMdp` couples evenly spaced state/action grids with a
Gaussian next-state model ``N(mu(s, a), Sigma)`` and a bounded deterministic
reward.  The transition kernel over the finite state set assigns each grid
point a probability proportional to the Gaussian density evaluated there
(normalized over the grid).  This module also provides the exact
(exhaustive-expectation) Bellman update, an IID-sampling approximation of it,
greedy policies, error norms, and a plain-text Q-table persistence format.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

#: absolute tolerance when matching a vector to a grid point
GRID_SNAP_TOL = 1e-9

#: largest |S| * |S| * |A| for which the dense transition tensor is cached
_DENSE_KERNEL_LIMIT = 50_000_000

_CHUNK = 4096


@dataclass(frozen=True)
class Grid:
    """Evenly spaced rectangular grid over a product of closed intervals.

    Indices map to coordinates in row-major order: dimension 0 varies
    slowest.  Endpoints are always included when a dimension has >= 2 points.
    """

    ranges: tuple[tuple[float, float], ...]
    points_per_dim: tuple[int, ...]

    def __post_init__(self) -> None:
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        points = tuple(int(n) for n in self.points_per_dim)
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "points_per_dim", points)
        if len(ranges) == 0 or len(ranges) != len(points):
            raise ValueError("ranges and points_per_dim must be nonempty and equal length")
        for (lo, hi), n in zip(ranges, points):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad interval [{lo}, {hi}]")
            if n < 1:
                raise ValueError("points_per_dim entries must be >= 1")

    @property
    def dims(self) -> int:
        return len(self.ranges)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.points_per_dim)

    @cached_property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axes(self) -> tuple[Array, ...]:
        out = []
        for (lo, hi), n in zip(self.ranges, self.points_per_dim):
            ax = np.linspace(lo, hi, n) if n > 1 else np.array([lo])
            ax.setflags(write=False)
            out.append(ax)
        return tuple(out)

    @cached_property
    def lower(self) -> Array:
        v = np.array([lo for lo, _ in self.ranges])
        v.setflags(write=False)
        return v

    @cached_property
    def upper(self) -> Array:
        v = np.array([hi for _, hi in self.ranges])
        v.setflags(write=False)
        return v

    @cached_property
    def spacing(self) -> Array:
        h = np.array(
            [(hi - lo) / (n - 1) if n > 1 else np.inf
             for (lo, hi), n in zip(self.ranges, self.points_per_dim)]
        )
        h.setflags(write=False)
        return h

    @cached_property
    def all_points(self) -> Array:
        """All grid coordinates, shape (size, dims), row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    def point_of_index(self, i: int) -> Array:
        if not 0 <= i < self.size:
            raise ValueError(f"index {i} out of range [0, {self.size})")
        multi = np.unravel_index(int(i), self.shape)
        return np.array([ax[k] for ax, k in zip(self.axes, multi)])

    def index_of_point(self, x: Sequence[float]) -> int:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dims,):
            raise ValueError(f"expected a {self.dims}-vector, got shape {x.shape}")
        multi = []
        for ax, xi in zip(self.axes, x):
            k = int(np.argmin(np.abs(ax - xi)))
            if abs(ax[k] - xi) > GRID_SNAP_TOL:
                raise ValueError(f"{xi} is not a grid coordinate (nearest {ax[k]})")
            multi.append(k)
        return int(np.ravel_multi_index(multi, self.shape))

    def nearest_index(self, x: Sequence[float]) -> int:
        """Index of the grid point nearest to ``x`` in Euclidean distance.

        Out-of-range coordinates clamp to the interval ends; exact
        mid-cell ties resolve to the lower grid value.
        """
        return int(self.nearest_indices(np.asarray(x, dtype=float)[None, :])[0])

    def nearest_indices(self, xs: Array) -> Array:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.dims:
            raise ValueError(f"expected (n, {self.dims}) array, got {xs.shape}")
        if not np.all(np.isfinite(xs)):
            raise ValueError("non-finite coordinates")
        flat = np.zeros(len(xs), dtype=np.int64)
        for d in range(self.dims):
            n = self.points_per_dim[d]
            if n == 1:
                k = np.zeros(len(xs), dtype=np.int64)
            else:
                u = (xs[:, d] - self.lower[d]) / self.spacing[d]
                # ceil(u - 1/2) sends exact half-way ties to the lower point
                k = np.ceil(u - 0.5).astype(np.int64)
                np.clip(k, 0, n - 1, out=k)
            flat = flat * n + k
        return flat


class StateSpace(Grid):
    pass


class ActionSpace(Grid):
    pass


@dataclass(frozen=True)
class TransitionModel:
    """Gaussian next-state model: mean map ``mu(s, a)`` plus fixed SPD covariance."""

    mean_fn: Callable[[Array, Array], Array]
    covariance: Array

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)

    @property
    def dims(self) -> int:
        return self.covariance.shape[0]

    @cached_property
    def is_diagonal(self) -> bool:
        off = self.covariance - np.diag(np.diag(self.covariance))
        return bool(np.all(off == 0.0))

    @cached_property
    def covariance_inv(self) -> Array:
        inv = np.linalg.inv(self.covariance)
        inv.setflags(write=False)
        return inv

    def mean(self, state: Array, action: Array) -> Array:
        mu = np.asarray(self.mean_fn(state, action), dtype=float)
        if mu.shape != (self.dims,):
            raise ValueError(f"mean_fn returned shape {mu.shape}, expected ({self.dims},)")
        return mu


@dataclass(frozen=True)
class RewardModel:
    """Deterministic bounded reward ``r(s, a)``; bounds are verified on the grid."""

    reward_fn: Callable[[Array, Array], float]
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        if not self.r_min <= self.r_max:
            raise ValueError("r_min must not exceed r_max")


@dataclass(frozen=True)
class QTable:
    """Dense |S| x |A| matrix of action values (immutable, finite)."""

    values: Array

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("Q table must be a matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("Q table entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class DiscreteMdp:
    state_space: StateSpace
    action_space: ActionSpace
    transition: TransitionModel
    reward: RewardModel
    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.transition.dims != self.state_space.dims:
            raise ValueError("covariance dimension does not match the state grid")
        # touching reward_table enumerates all pairs and checks the bounds
        self.reward_table

    @property
    def n_states(self) -> int:
        return self.state_space.size

    @property
    def n_actions(self) -> int:
        return self.action_space.size

    @cached_property
    def reward_table(self) -> Array:
        states = self.state_space.all_points
        actions = self.action_space.all_points
        table = np.empty((self.n_states, self.n_actions))
        for j, a in enumerate(actions):
            for i, s in enumerate(states):
                table[i, j] = self.reward.reward_fn(s, a)
        if not np.all(np.isfinite(table)):
            raise ValueError("reward function produced non-finite values on the grid")
        lo, hi = table.min(), table.max()
        if lo < self.reward.r_min or hi > self.reward.r_max:
            raise ValueError(
                f"grid rewards [{lo}, {hi}] escape the declared bounds "
                f"[{self.reward.r_min}, {self.reward.r_max}]"
            )
        table.setflags(write=False)
        return table

    # -- index plumbing ----------------------------------------------------

    def state_of_index(self, i: int) -> Array:
        return self.state_space.point_of_index(i)

    def index_of_state(self, s: Sequence[float]) -> int:
        return self.state_space.index_of_point(s)

    def action_of_index(self, j: int) -> Array:
        return self.action_space.point_of_index(j)

    def nearest_grid_state(self, x: Sequence[float]) -> int:
        return self.state_space.nearest_index(x)

    def transition_mean(self, s: int, a: int) -> Array:
        return self.transition.mean(
            self.state_space.all_points[s], self.action_space.all_points[a]
        )


def discrete_transition_distribution(m: DiscreteMdp, s: int, a: int) -> Array:
    """Probability vector over all grid states for the pair ``(s, a)``.

    Entry ``j`` is proportional to the Gaussian density at grid point ``j``;
    the vector is normalized over the grid, which makes it invariant under
    any positive rescaling of the unnormalized density.
    """
    if not 0 <= s < m.n_states:
        raise ValueError(f"state index {s} out of range")
    if not 0 <= a < m.n_actions:
        raise ValueError(f"action index {a} out of range")
    mu = m.transition_mean(s, a)
    if m.transition.is_diagonal:
        weights = _dim_weights(m, mu)
        row = weights[0]
        for w in weights[1:]:
            row = np.multiply.outer(row, w)
        return row.reshape(-1)
    diff = m.state_space.all_points - mu
    logw = -0.5 * np.einsum("ni,ij,nj->n", diff, m.transition.covariance_inv, diff)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def _dim_weights(m: DiscreteMdp, mu: Array) -> list[Array]:
    """Per-dimension normalized Gaussian weights (diagonal covariance only)."""
    var = np.diag(m.transition.covariance)
    out = []
    for d, ax in enumerate(m.state_space.axes):
        logw = -0.5 * (ax - mu[d]) ** 2 / var[d]
        w = np.exp(logw - logw.max())
        out.append(w / w.sum())
    return out


def _pair_means(m: DiscreteMdp, rows: Array, cols: Array) -> Array:
    states = m.state_space.all_points
    actions = m.action_space.all_points
    mus = np.empty((len(rows), m.state_space.dims))
    for k, (i, j) in enumerate(zip(rows, cols)):
        mus[k] = m.transition.mean(states[i], actions[j])
    return mus


def expected_next_values(m: DiscreteMdp, v: Array, rows: Array, cols: Array) -> Array:
    """``E[v(s') | s, a]`` under the discrete kernel for each listed pair.

    Uses the per-dimension factorization of the kernel when the covariance
    is diagonal (the product grid makes the normalized row a tensor product),
    otherwise falls back to dense rows.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty(len(rows))
    if m.transition.is_diagonal:
        v_grid = v.reshape(m.state_space.shape)
        axes = m.state_space.axes
        var = np.diag(m.transition.covariance)
        for start in range(0, len(rows), _CHUNK):
            sl = slice(start, min(start + _CHUNK, len(rows)))
            mus = _pair_means(m, rows[sl], cols[sl])
            acc = None
            for d in range(m.state_space.dims):
                logw = -0.5 * (axes[d][None, :] - mus[:, d : d + 1]) ** 2 / var[d]
                w = np.exp(logw - logw.max(axis=1, keepdims=True))
                w /= w.sum(axis=1, keepdims=True)
                if acc is None:
                    acc = np.tensordot(w, v_grid, axes=(1, 0))
                else:
                    acc = np.einsum("nd,nd...->n...", w, acc)
            out[sl] = acc
    else:
        pts = m.state_space.all_points
        inv = m.transition.covariance_inv
        for start in range(0, len(rows), _CHUNK):
            sl = slice(start, min(start + _CHUNK, len(rows)))
            mus = _pair_means(m, rows[sl], cols[sl])
            diff = pts[None, :, :] - mus[:, None, :]
            logw = -0.5 * np.einsum("nki,ij,nkj->nk", diff, inv, diff)
            w = np.exp(logw - logw.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            out[sl] = w @ v
    return out


def exhaustive_update(m: DiscreteMdp, q: QTable) -> QTable:
    """One exact Bellman sweep: full expectation over next states, all pairs."""
    if q.shape != (m.n_states, m.n_actions):
        raise ValueError("Q table shape does not match the MDP grids")
    v = q.values.max(axis=1)
    rows, cols = np.divmod(np.arange(m.n_states * m.n_actions), m.n_actions)
    ev = expected_next_values(m, v, rows, cols).reshape(m.n_states, m.n_actions)
    return QTable(m.reward_table + m.gamma * ev)


def draw_next_state_indices(
    m: DiscreteMdp, s: int, a: int, n: int, rng: np.random.Generator
) -> Array:
    """Draw ``n`` next-state indices from the discrete kernel of ``(s, a)``.

    Diagonal covariances sample each dimension independently (the kernel is
    a product measure on the grid), which keeps large state spaces cheap.
    """
    if m.transition.is_diagonal:
        mu = m.transition_mean(s, a)
        weights = _dim_weights(m, mu)
        flat = np.zeros(n, dtype=np.int64)
        u = rng.random((n, m.state_space.dims))
        for d, w in enumerate(weights):
            cdf = np.cumsum(w)
            k = np.searchsorted(cdf, u[:, d], side="right")
            np.clip(k, 0, len(w) - 1, out=k)
            flat = flat * len(w) + k
        return flat
    p = discrete_transition_distribution(m, s, a)
    cdf = np.cumsum(p)
    k = np.searchsorted(cdf, rng.random(n), side="right")
    return np.clip(k, 0, m.n_states - 1)


def iid_update(m: DiscreteMdp, q: QTable, n_samples: int, seed: int) -> QTable:
    """Bellman sweep with the expectation replaced by an IID sample mean.

    Every pair draws ``n_samples`` next states from its discrete kernel;
    pairs are visited in row-major order from a single seeded stream, so the
    result is bitwise reproducible.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if q.shape != (m.n_states, m.n_actions):
        raise ValueError("Q table shape does not match the MDP grids")
    rng = np.random.default_rng(seed)
    v = q.values.max(axis=1)
    out = np.empty((m.n_states, m.n_actions))
    for s in range(m.n_states):
        for a in range(m.n_actions):
            idx = draw_next_state_indices(m, s, a, n_samples, rng)
            out[s, a] = m.reward_table[s, a] + m.gamma * v[idx].mean()
    return QTable(out)


def greedy_policy(q: QTable) -> Array:
    """Per-state greedy action index; ties resolve to the lowest index."""
    return np.argmax(q.values, axis=1)


def _values(q: QTable | Array) -> Array:
    return q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)


def sup_error(q1: QTable | Array, q2: QTable | Array) -> float:
    a, b = _values(q1), _values(q2)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


def frobenius_error(q1: QTable | Array, q2: QTable | Array) -> float:
    a, b = _values(q1), _values(q2)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def value_iteration(
    m: DiscreteMdp, tol: float = 1e-8, max_sweeps: int = 10_000
) -> QTable:
    """Reference optimal Q: exhaustive sweeps from zero until the sup change < tol."""
    q = QTable(np.zeros((m.n_states, m.n_actions)))
    for _ in range(max_sweeps):
        nxt = exhaustive_update(m, q)
        if sup_error(nxt, q) < tol:
            return nxt
        q = nxt
    return q


# -- persistence -----------------------------------------------------------

_QTABLE_MAGIC = "qtable v1"


def qtable_to_text(q: QTable) -> str:
    """Serialize with round-trip (shortest %.17g) precision."""
    ns, na = q.shape
    lines = [f"{_QTABLE_MAGIC} {ns} {na}"]
    for row in q.values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def qtable_from_text(text: str) -> QTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty Q table file")
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != _QTABLE_MAGIC:
        raise ValueError(f"bad Q table header: {lines[0]!r}")
    ns, na = int(head[2]), int(head[3])
    if len(lines) - 1 != ns:
        raise ValueError(f"expected {ns} rows, found {len(lines) - 1}")
    values = np.empty((ns, na))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != na:
            raise ValueError(f"row {i} has {len(parts)} values, expected {na}")
        values[i] = [float(p) for p in parts]
    return QTable(values)


def save_qtable(q: QTable, path: str | Path) -> None:
    Path(path).write_text(qtable_to_text(q))


def load_qtable(path: str | Path) -> QTable:
    return qtable_from_text(Path(path).read_text())
