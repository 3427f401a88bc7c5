"""Weighted particle representation of the Bayesian posterior.

The ensemble is value-like: every operation returns a new ensemble and never
mutates its input, so independent episodes can be processed in parallel.

The numerical kernels (`weighted_moments`, `systematic_indices`, `ess`) are
written against ``jax.numpy`` so the training engine can reuse them inside
jitted rollouts; the ensemble-level API accepts and returns plain numpy.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import jax.numpy as jnp
import numpy as np

from qmetro.spaces import ParameterSpace, Discrete

WEIGHT_TOL = 1e-9


class DegenerateEvidenceError(ValueError):
    """All particle likelihoods vanished; the posterior update is undefined."""


class UnsatisfiableSupportError(ValueError):
    """Rejection sampling could not find points inside the joint support."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """N weighted points in a parameter space.

    Weights are normalized; N stays constant across updates and resampling.
    """

    space: ParameterSpace
    particles: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    ess_threshold: float = 0.5

    def __post_init__(self) -> None:
        p = np.asarray(self.particles, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if p.ndim != 2 or p.shape[1] != self.space.ndim:
            raise ValueError(f"particles must be (N, {self.space.ndim})")
        if w.shape != (p.shape[0],):
            raise ValueError("weights must be (N,)")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        if not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must be in (0, 1]")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]


@dataclass(frozen=True)
class PosteriorMoments:
    """Weighted mean, covariance about the mean, and correlation matrix."""

    mean: np.ndarray  # (d,)
    covariance: np.ndarray  # (d, d)
    correlation: np.ndarray  # (d, d)


class ResampleInfo(NamedTuple):
    """Bookkeeping needed by the policy-gradient estimator."""

    indices: np.ndarray  # (N,) ancestor index of each resampled particle
    log_probs: np.ndarray  # (N,) log weight of each selected ancestor


# ---------------------------------------------------------------------------
# jit-compatible kernels


def ess(weights):
    """Effective sample size 1 / sum(w_i^2)."""
    return 1.0 / jnp.sum(jnp.square(weights))


def systematic_indices(weights, u):
    """Systematic resampling: N ancestor indices from one uniform draw u."""
    n = weights.shape[0]
    positions = (u + jnp.arange(n)) / n
    cumulative = jnp.cumsum(weights)
    return jnp.searchsorted(cumulative, positions, side="left").clip(0, n - 1)


def weighted_moments(particles, weights):
    """Weighted mean, covariance, and correlation of an (N, d) cloud.

    Zero-variance dimensions get correlation 1 on the diagonal and 0 off it,
    which keeps downstream feature vectors finite.
    """
    mean = weights @ particles
    centered = particles - mean
    cov = (weights[:, None] * centered).T @ centered
    var = jnp.diagonal(cov)
    std = jnp.sqrt(jnp.clip(var, 0.0, None))
    denom = jnp.outer(std, std)
    safe = denom > 0
    corr = jnp.where(safe, cov / jnp.where(safe, denom, 1.0), 0.0)
    corr = jnp.where(jnp.eye(particles.shape[1], dtype=bool), 1.0, corr)
    return mean, cov, corr


# ---------------------------------------------------------------------------
# ensemble API


def init_from_prior(
    space: ParameterSpace,
    n_particles: int,
    seed,
    ess_threshold: float = 0.5,
    max_draws: int = 10**6,
) -> ParticleEnsemble:
    """Sample an equal-weight ensemble uniformly over the prior support.

    Uses rejection sampling against the joint-support predicate; raises
    `UnsatisfiableSupportError` if the acceptance rate stays below 1e-4
    after `max_draws` proposals.
    """
    if n_particles < 2:
        raise ValueError("n_particles must be >= 2")
    rng = np.random.default_rng(seed)
    accepted: list = []
    drawn = 0
    kept = 0
    chunk = max(n_particles, 4096)
    while kept < n_particles:
        pts = _sample_box(space, rng, chunk)
        ok = space.in_support(pts)
        pts = pts[ok]
        drawn += chunk
        kept += pts.shape[0]
        accepted.append(pts)
        if drawn >= max_draws and kept < max(1, int(1e-4 * drawn)):
            raise UnsatisfiableSupportError(
                f"acceptance rate {kept / drawn:.2e} after {drawn} draws"
            )
        if drawn >= 100 * max_draws:
            raise UnsatisfiableSupportError(
                f"could not collect {n_particles} particles"
            )
    particles = np.concatenate(accepted)[:n_particles]
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleEnsemble(space, particles, weights, ess_threshold)


def _sample_box(space: ParameterSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    cols = []
    for dim in space.dims:
        if isinstance(dim, Discrete):
            cols.append(rng.integers(0, dim.cardinality, size=n).astype(float))
        else:
            cols.append(rng.uniform(dim.lower, dim.upper, size=n))
    return np.column_stack(cols)


def bayes_update(
    ens: ParticleEnsemble, likelihood: Callable[[np.ndarray], np.ndarray]
) -> ParticleEnsemble:
    """Multiply weights by the likelihood of each particle and renormalize.

    `likelihood` maps the (N, d) particle array to (N,) probabilities in
    [0, 1]. Particles are unchanged. Raises `DegenerateEvidenceError` when
    every likelihood is zero; the caller decides whether to skip or abort.
    """
    lik = np.asarray(likelihood(ens.particles), dtype=float)
    if lik.shape != (ens.n_particles,):
        raise ValueError("likelihood must return one probability per particle")
    if np.any((lik < -1e-12) | (lik > 1 + 1e-12)):
        raise ValueError("likelihood values must lie in [0, 1]")
    new = ens.weights * np.clip(lik, 0.0, 1.0)
    total = new.sum()
    if total <= 0:
        raise DegenerateEvidenceError("all particle likelihoods are zero")
    return replace(ens, weights=new / total)


def moments(ens: ParticleEnsemble) -> PosteriorMoments:
    """Posterior mean, covariance, and correlation of the ensemble."""
    mean, cov, corr = weighted_moments(
        jnp.asarray(ens.particles), jnp.asarray(ens.weights)
    )
    return PosteriorMoments(np.asarray(mean), np.asarray(cov), np.asarray(corr))


def effective_sample_size(ens: ParticleEnsemble) -> float:
    return float(ess(jnp.asarray(ens.weights)))


def resample(
    ens: ParticleEnsemble,
    seed,
    jitter_scale: float = 0.01,
) -> tuple:
    """Systematic resampling with support-clipped Gaussian jitter.

    Jitter is applied to continuous dimensions only, with per-dimension std
    `jitter_scale` times the posterior std; jittered points that leave the
    joint support revert to their ancestor's position. Output weights are
    uniform. Returns (ensemble, ResampleInfo); the info carries the
    ancestor-index log-probabilities needed by the gradient estimator.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform()
    idx = np.asarray(systematic_indices(jnp.asarray(ens.weights), u))
    with np.errstate(divide="ignore"):
        log_probs = np.log(ens.weights[idx])
    selected = ens.particles[idx]

    mom = moments(ens)
    std = np.sqrt(np.clip(np.diagonal(mom.covariance), 0.0, None))
    cont = ens.space.continuous_mask
    noise = rng.standard_normal(selected.shape) * (jitter_scale * std)
    noise[:, ~cont] = 0.0
    jittered = np.clip(selected + noise, ens.space.lowers, ens.space.uppers)
    ok = ens.space.in_support(jittered)
    jittered[~ok] = selected[~ok]

    weights = np.full(ens.n_particles, 1.0 / ens.n_particles)
    new = replace(ens, particles=jittered, weights=weights)
    return new, ResampleInfo(indices=idx, log_probs=log_probs)


def maybe_resample(ens: ParticleEnsemble, seed, jitter_scale: float = 0.01):
    """Resample only when ESS drops below ess_threshold * N."""
    if effective_sample_size(ens) < ens.ess_threshold * ens.n_particles:
        return resample(ens, seed, jitter_scale)
    return ens, None


def discrete_marginal(ens: ParticleEnsemble, dim: int) -> np.ndarray:
    """Probability vector of a discrete dimension, by weight summation."""
    d = ens.space.dims[dim]
    if not isinstance(d, Discrete):
        raise ValueError(f"dimension {dim} is not discrete")
    values = np.rint(ens.particles[:, dim]).astype(int)
    out = np.zeros(d.cardinality)
    np.add.at(out, values, ens.weights)
    return out


def snapshot_csv(ens: ParticleEnsemble) -> str:
    """Ensemble snapshot: CSV with particle_index, weight, and coordinates."""
    buf = io.StringIO()
    names = ",".join(ens.space.names)
    buf.write(f"particle_index,weight,{names}\n")
    for i in range(ens.n_particles):
        coords = ",".join(repr(x) for x in ens.particles[i])
        buf.write(f"{i},{ens.weights[i]!r},{coords}\n")
    return buf.getvalue()
