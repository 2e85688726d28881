"""Hamiltonian Monte Carlo for smoothly box-truncated Gaussian targets.

The target is a multivariate Gaussian multiplied, per dimension, by a pair of
logistic sigmoids that suppress density outside a box; the sharpness ``kappa``
controls how hard the cutoff is.  The potential is the negative log of that
(unnormalized) density, the kinetic energy is ``v' Sigma v / 2`` (mass matrix
``Sigma^{-1}``), and proposals integrate the resulting dynamics with a
leapfrog scheme followed by a Metropolis-Hastings test.

Under this mass matrix the interior dynamics reduce to a unit-frequency
harmonic oscillator in every coordinate, so a trajectory length near 2 gives
well-decorrelated draws regardless of the covariance scale.

:func:`sample_chain_batch` runs many chains (one per state-action pair)
vectorized; each chain consumes its own seeded stream, so results are
identical whether chains run alone, batched, or chunked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

Array = np.ndarray


class DivergentTrajectory(RuntimeError):
    """Leapfrog produced a non-finite state; callers treat it as a rejection."""


def _softplus(x: Array) -> Array:
    """log(1 + exp(x)) without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: Array) -> Array:
    """Logistic sigmoid via exp(-softplus(-x)); stable at both tails."""
    return np.exp(-_softplus(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class TargetDensity:
    """Box-truncated Gaussian target ``N(mu, sigma)`` with sigmoid cutoffs."""

    mu: Array
    sigma: Array
    bounds: tuple[tuple[float, float], ...]
    kappa: float

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if mu.ndim != 1:
            raise ValueError("mu must be a vector")
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise ValueError("sigma shape does not match mu")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise ValueError("sigma must be positive definite")
        if len(bounds) != d or any(lo >= hi for lo, hi in bounds):
            raise ValueError("bounds must be well-ordered, one interval per dimension")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dims(self) -> int:
        return self.mu.shape[0]

    @cached_property
    def sigma_inv(self) -> Array:
        inv = np.linalg.inv(self.sigma)
        inv.setflags(write=False)
        return inv

    @cached_property
    def chol(self) -> Array:
        c = np.linalg.cholesky(self.sigma)
        c.setflags(write=False)
        return c

    @cached_property
    def lower(self) -> Array:
        v = np.array([lo for lo, _ in self.bounds])
        v.setflags(write=False)
        return v

    @cached_property
    def upper(self) -> Array:
        v = np.array([hi for _, hi in self.bounds])
        v.setflags(write=False)
        return v

    @cached_property
    def log_norm(self) -> float:
        """0.5 * log((2 pi)^d det sigma), the Gaussian normalization term."""
        _, logdet = np.linalg.slogdet(self.sigma)
        return 0.5 * (self.dims * math.log(2.0 * math.pi) + logdet)


@dataclass(frozen=True)
class HmcConfig:
    trajectory_steps: int = 100
    step_size: float = 0.02
    n_samples: int = 100
    burn_in: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trajectory_steps < 1:
            raise ValueError("trajectory_steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


@dataclass(frozen=True)
class PhasePoint:
    position: Array
    momentum: Array

    def __post_init__(self) -> None:
        pos = np.array(self.position, dtype=float)
        mom = np.array(self.momentum, dtype=float)
        if pos.shape != mom.shape or pos.ndim != 1:
            raise ValueError("position and momentum must be matching vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mom))):
            raise ValueError("phase point components must be finite")
        pos.setflags(write=False)
        mom.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "momentum", mom)


@dataclass(frozen=True)
class ChainResult:
    samples: Array  # (n_samples, dims)
    acceptance_rate: float
    mean_abs_energy_error: float


def potential(t: TargetDensity, s: Array) -> float | Array:
    """Negative log of the unnormalized target density.

    Quadratic Gaussian part plus the normalization constant plus one softplus
    barrier per box face; accepts a single position or an (n, dims) batch.
    """
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    pts = s[None, :] if single else s
    diff = pts - t.mu
    quad = 0.5 * np.einsum("ni,ij,nj->n", diff, t.sigma_inv, diff)
    barrier = _softplus(-t.kappa * (t.upper - pts)) + _softplus(-t.kappa * (pts - t.lower))
    u = quad + t.log_norm + barrier.sum(axis=1)
    return float(u[0]) if single else u


def grad_potential(t: TargetDensity, s: Array) -> Array:
    """Analytic gradient of :func:`potential` (validated by finite differences)."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    pts = s[None, :] if single else s
    g = (pts - t.mu) @ t.sigma_inv
    g = g + t.kappa * (_sigmoid(-t.kappa * (t.upper - pts)) - _sigmoid(-t.kappa * (pts - t.lower)))
    return g[0] if single else g


def kinetic(t: TargetDensity, v: Array) -> float | Array:
    """0.5 * v' Sigma v (mass matrix Sigma^{-1})."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    vs = v[None, :] if single else v
    k = 0.5 * np.einsum("ni,ij,nj->n", vs, t.sigma, vs)
    return float(k[0]) if single else k


def hamiltonian(t: TargetDensity, p: PhasePoint) -> float:
    return potential(t, p.position) + kinetic(t, p.momentum)


def leapfrog(t: TargetDensity, p: PhasePoint, steps: int, step_size: float) -> PhasePoint:
    """Stoermer-Verlet integration of the target's Hamiltonian dynamics.

    Position drift uses ``ds/dt = Sigma v``; inner half-kicks are fused.
    Raises :class:`DivergentTrajectory` on non-finite intermediates, which
    callers count as a rejected proposal.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    s = p.position.copy()
    v = p.momentum.copy()
    v -= 0.5 * step_size * grad_potential(t, s)
    for i in range(steps):
        s += step_size * (t.sigma @ v)
        if not np.all(np.isfinite(s)):
            raise DivergentTrajectory("position diverged during leapfrog")
        kick = grad_potential(t, s)
        v -= (step_size if i < steps - 1 else 0.5 * step_size) * kick
        if not np.all(np.isfinite(v)):
            raise DivergentTrajectory("momentum diverged during leapfrog")
    return PhasePoint(s, v)


def mh_accept(h_current: float, h_proposal: float, u: float) -> bool:
    """Metropolis-Hastings test: accept iff ``u < min(1, exp(h_cur - h_prop))``.

    The momentum flip in the formal acceptance ratio is absorbed because the
    kinetic energy is even in ``v``.  Non-finite proposal energies reject.
    """
    if not math.isfinite(h_proposal):
        return False
    if h_proposal <= h_current:
        return True
    return u < math.exp(h_current - h_proposal)


def recommended_sample_count(
    xi: float, gamma: float, omega_size: int, horizon: int, delta: float
) -> int:
    """Advisory per-pair sample budget from the chain's spectral-gap bound.

    ``ceil((1+xi)/(1-xi) * (2/gamma^2) * log(2 * omega_size * horizon / delta))``
    where ``1 - xi`` is the spectral gap of the sampling chain.  ``gamma = 1``
    is admitted so the undiscounted formula reduction is expressible.
    """
    if not 0.0 <= xi < 1.0:
        raise ValueError("xi must lie in [0, 1)")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if omega_size < 1 or horizon < 1:
        raise ValueError("omega_size and horizon must be >= 1")
    bound = ((1.0 + xi) / (1.0 - xi)) * (2.0 / gamma**2) * math.log(
        2.0 * omega_size * horizon / delta
    )
    return int(math.ceil(bound))


@dataclass(frozen=True)
class BatchChains:
    """Results of many independent chains over a shared geometry."""

    samples: Array  # (n_chains, n_samples, dims)
    acceptance_rates: Array  # (n_chains,)
    mean_abs_energy_errors: Array  # (n_chains,)


def sample_chain(t: TargetDensity, c: HmcConfig) -> ChainResult:
    """Run one chain against ``t``; fully deterministic given ``c.seed``.

    The initial position is drawn from the untruncated Gaussian, each
    proposal refreshes the momentum from ``N(0, Sigma^{-1})``, and rejected
    proposals re-record the current position.
    """
    batch = sample_chain_batch(
        t.mu[None, :],
        sigma=t.sigma,
        bounds=t.bounds,
        kappa=t.kappa,
        config=c,
        seeds=[c.seed],
    )
    return ChainResult(
        samples=batch.samples[0],
        acceptance_rate=float(batch.acceptance_rates[0]),
        mean_abs_energy_error=float(batch.mean_abs_energy_errors[0]),
    )


def sample_chain_batch(
    mus: Array,
    *,
    sigma: Array,
    bounds: Sequence[tuple[float, float]],
    kappa: float,
    config: HmcConfig,
    seeds: Sequence[int],
    chunk: int = 4096,
) -> BatchChains:
    """Run one chain per row of ``mus`` (shared covariance/box/kappa).

    Each chain has its own generator seeded from ``seeds``; the random layout
    per chain is (initial-position normals, per-proposal momentum normals,
    per-proposal uniform), so output is independent of batch composition.
    """
    mus = np.asarray(mus, dtype=float)
    if mus.ndim != 2:
        raise ValueError("mus must be (n_chains, dims)")
    n_chains, d = mus.shape
    if len(seeds) != n_chains:
        raise ValueError("one seed per chain required")
    geom = TargetDensity(np.zeros(d), sigma, tuple(bounds), kappa)

    samples = np.empty((n_chains, config.n_samples, d))
    acc_rates = np.empty(n_chains)
    energy_errs = np.empty(n_chains)
    for start in range(0, n_chains, chunk):
        stop = min(start + chunk, n_chains)
        (
            samples[start:stop],
            acc_rates[start:stop],
            energy_errs[start:stop],
        ) = _run_chain_chunk(geom, mus[start:stop], config, seeds[start:stop])
    return BatchChains(samples, acc_rates, energy_errs)


def _run_chain_chunk(
    geom: TargetDensity, mus: Array, config: HmcConfig, seeds: Sequence[int]
) -> tuple[Array, Array, Array]:
    n, d = mus.shape
    n_prop = config.burn_in + config.n_samples
    z0 = np.empty((n, d))
    zv = np.empty((n, n_prop, d))
    us = np.empty((n, n_prop))
    for i, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        z0[i] = rng.standard_normal(d)
        zv[i] = rng.standard_normal((n_prop, d))
        us[i] = rng.random(n_prop)

    sigma = geom.sigma
    sigma_inv = geom.sigma_inv
    lower, upper, kappa = geom.lower, geom.upper, geom.kappa
    chol = geom.chol
    chol_inv = np.linalg.inv(chol)

    def u_of(pos: Array) -> Array:
        diff = pos - mus
        quad = 0.5 * np.einsum("ni,ij,nj->n", diff, sigma_inv, diff)
        barrier = _softplus(-kappa * (upper - pos)) + _softplus(-kappa * (pos - lower))
        return quad + geom.log_norm + barrier.sum(axis=1)

    def grad_u(pos: Array) -> Array:
        g = (pos - mus) @ sigma_inv
        return g + kappa * (_sigmoid(-kappa * (upper - pos)) - _sigmoid(-kappa * (pos - lower)))

    def k_of(vel: Array) -> Array:
        return 0.5 * np.einsum("ni,ij,nj->n", vel, sigma, vel)

    pos = mus + z0 @ chol.T  # N(mu, Sigma) start
    out = np.empty((n, config.n_samples, d))
    accepted = np.zeros(n)
    abs_dh = np.zeros(n)
    dh_count = np.zeros(n)

    dl = config.step_size
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_prop):
            vel = zv[:, k, :] @ chol_inv  # N(0, Sigma^{-1})
            h_cur = u_of(pos) + k_of(vel)
            s_new = pos.copy()
            v_new = vel - 0.5 * dl * grad_u(s_new)
            for step in range(config.trajectory_steps):
                s_new = s_new + dl * (v_new @ sigma)
                kick = grad_u(s_new)
                v_new = v_new - (dl if step < config.trajectory_steps - 1 else 0.5 * dl) * kick
            h_prop = u_of(s_new) + k_of(v_new)
            # NaN-safe: any non-finite proposal energy fails the comparison
            acc = us[:, k] < np.exp(np.minimum(0.0, h_cur - h_prop))
            pos = np.where(acc[:, None], s_new, pos)
            accepted += acc
            dh = np.abs(h_prop - h_cur)
            finite = np.isfinite(dh)
            abs_dh += np.where(finite, dh, 0.0)
            dh_count += finite
            if k >= config.burn_in:
                out[:, k - config.burn_in, :] = pos

    with np.errstate(invalid="ignore"):
        mean_err = np.where(dh_count > 0, abs_dh / np.maximum(dh_count, 1), np.nan)
    return out, accepted / n_prop, mean_err
