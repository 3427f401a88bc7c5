"""Measurement-loop simulation, loss functions, unbiased policy gradients,
and Adam training with an inverse-square-root schedule.

Two execution paths share the same physics:

* a plain-numpy episode runner (`run_episode`) used for evaluation and for
  the baseline strategies, flexible about budgets and agents;
* a jitted, batched rollout (`make_nv_rollout`) used for training, where
  every stochastic draw is pre-sampled outside the jit boundary so the
  whole batch is a deterministic function of (parameters, random inputs).

The gradient estimator is pathwise through all deterministic computation
(Bayesian weights, featurization, control formulas) plus score-function
terms for the discrete draws (outcomes and resampling ancestor indices),
with a leave-one-out batch baseline. Resampled particle positions are
stop-gradiented; the ancestor log-weights keep their gradient.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from qmetro.agents import (
    MlpAgent,
    StaticAgent,
    featurize_nv,
    flatten_params,
    init_mlp,
    mlp_apply,
    nv_control,
    pgh_control,
    save_checkpoint,
    sigma_inverse_control,
    static_apply,
)
from qmetro.nv_models import NvControls, NvModel, clamp_prob
from qmetro.particles import (
    DegenerateEvidenceError,
    ParticleEnsemble,
    PosteriorMoments,
    bayes_update,
    effective_sample_size,
    ess,
    init_from_prior,
    maybe_resample,
    moments,
    systematic_indices,
    weighted_moments,
)
from qmetro.spaces import ParameterSpace

LOSS_EPS = 1e-12  # clamp for the log of a batch-mean error

METRICS_HEADER = ["step", "loss", "grad_norm", "lr", "ess_min", "aborted_episodes"]


# ---------------------------------------------------------------------------
# budgets and losses


@dataclass(frozen=True)
class ResourceBudget:
    """What an episode is allowed to consume.

    kind "measurements": exactly `amount` measurements. kind "total_time":
    the summed evolution time; the measurement that crosses the budget
    still executes, then the episode stops, so the measurement count is
    stochastic. kind "photons": summed mean photon number, same stopping
    rule.
    """

    kind: str
    amount: float

    def __post_init__(self) -> None:
        if self.kind not in ("measurements", "total_time", "photons"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.amount < 0:
            raise ValueError("budget amount must be nonnegative")


@dataclass(frozen=True)
class LossSpec:
    """Weighted quadratic error and its normalization.

    The error of one step is (mean - theta)^T G (mean - theta). The
    normalization is eta = min(sum_i G_ii (b_i - a_i) / 12, 1 / T) with
    (a_i, b_i) the prior box; `eta_variance_form=True` substitutes the
    uniform-prior variance (b_i - a_i)^2 / 12 for the linear width term.
    """

    weight_matrix: np.ndarray
    prior_lowers: np.ndarray
    prior_uppers: np.ndarray
    eta_variance_form: bool = False

    def __post_init__(self) -> None:
        g = np.atleast_2d(np.asarray(self.weight_matrix, dtype=float))
        lo = np.atleast_1d(np.asarray(self.prior_lowers, dtype=float))
        hi = np.atleast_1d(np.asarray(self.prior_uppers, dtype=float))
        if g.shape != (lo.size, hi.size):
            raise ValueError("weight matrix shape must match the prior box")
        eig = np.linalg.eigvalsh((g + g.T) / 2)
        if eig.min() < -1e-10:
            raise ValueError("weight matrix must be positive semidefinite")
        object.__setattr__(self, "weight_matrix", g)
        object.__setattr__(self, "prior_lowers", lo)
        object.__setattr__(self, "prior_uppers", hi)

    @property
    def prior_eta_term(self) -> float:
        widths = self.prior_uppers - self.prior_lowers
        if self.eta_variance_form:
            widths = widths**2
        return float(np.sum(np.diagonal(self.weight_matrix) * widths) / 12.0)

    def eta(self, total_time: float) -> float:
        prior = self.prior_eta_term
        if total_time <= 0:
            return prior
        return min(prior, 1.0 / total_time)


def quadratic_error(mean, theta, weight_matrix):
    diff = jnp.asarray(mean) - jnp.asarray(theta)
    return diff @ jnp.asarray(weight_matrix) @ diff


@dataclass(frozen=True)
class EpisodeRecord:
    """Everything one simulated episode produced.

    `times` holds the cumulative evolution time after each step; `losses`
    the weighted quadratic error of the posterior mean after each step.
    """

    controls: tuple
    outcomes: tuple
    log_likelihoods: tuple
    times: np.ndarray
    losses: np.ndarray
    theta: np.ndarray
    final_mean: np.ndarray
    ess_min: float
    aborted: bool = False

    @property
    def n_measurements(self) -> int:
        return len(self.outcomes)


# ---------------------------------------------------------------------------
# plain-numpy episode runner


def run_episode(
    model: NvModel,
    policy: Callable,
    space: ParameterSpace,
    budget: ResourceBudget,
    n_particles: int,
    seed,
    loss_spec: Optional[LossSpec] = None,
    theta_true=None,
) -> EpisodeRecord:
    """Simulate one estimation episode with a frozen policy.

    `policy(ens, mom, t, resources)` returns the next controls. The true
    parameters are drawn from the prior unless given. A degenerate
    evidence update aborts the episode; the caller excludes it from
    averages and counts it in diagnostics.
    """
    rng = np.random.default_rng(seed)
    ens = init_from_prior(space, n_particles, rng)
    if theta_true is None:
        theta_true = init_from_prior(space, 2, rng).particles[0]
    theta_true = np.asarray(theta_true, dtype=float)
    g = (
        loss_spec.weight_matrix
        if loss_spec is not None
        else np.eye(space.ndim)
    )

    controls, outcomes, log_liks, times, losses = [], [], [], [], []
    elapsed = 0.0
    ess_min = float(n_particles)
    aborted = False
    mom = moments(ens)
    t = 0
    while True:
        if budget.kind == "measurements":
            if t >= budget.amount:
                break
        elif elapsed >= budget.amount:
            break
        ctrl = policy(ens, mom, t, elapsed)
        y, logp = model.sample_outcome(rng, theta_true, ctrl.tau, ctrl.phi)
        try:
            ens = bayes_update(
                ens,
                lambda p: np.asarray(model.likelihood(y, p, ctrl.tau, ctrl.phi)),
            )
        except DegenerateEvidenceError:
            aborted = True
            break
        mom = moments(ens)
        elapsed += ctrl.tau
        controls.append(ctrl)
        outcomes.append(y)
        log_liks.append(logp)
        times.append(elapsed)
        losses.append(float(quadratic_error(mom.mean, theta_true, g)))
        ess_min = min(ess_min, effective_sample_size(ens))
        ens, _ = maybe_resample(ens, rng)
        t += 1

    return EpisodeRecord(
        controls=tuple(controls),
        outcomes=tuple(outcomes),
        log_likelihoods=tuple(log_liks),
        times=np.asarray(times),
        losses=np.asarray(losses),
        theta=theta_true,
        final_mean=np.asarray(mom.mean),
        ess_min=ess_min,
        aborted=aborted,
    )


# policy factories for the runner


def mlp_policy(
    agent: MlpAgent,
    h_prefactor: float,
    m_max: float,
    r_max: float,
    time_budget: bool = False,
):
    """Network policy; measurement budgets use the step index as the
    consumed-resource feature, matching the training rollout."""

    def policy(ens, mom, t, resources):
        consumed = resources if time_budget else t
        feats = featurize_nv(mom, ens.space, t, m_max, consumed, r_max)
        return nv_control(agent, feats, h_prefactor)

    return policy


def static_policy(agent: StaticAgent, h_prefactor: float):
    def policy(ens, mom, t, resources):
        return nv_control(agent, None, h_prefactor, step=t)

    return policy


def pgh_policy(seed):
    rng = np.random.default_rng(seed)

    def policy(ens, mom, t, resources):
        return pgh_control(ens, rng)

    return policy


def sigma_policy(variant: str = "sigma", inv_t2: float = 0.0):
    def policy(ens, mom, t, resources):
        return sigma_inverse_control(mom, inv_t2=inv_t2, variant=variant)

    return policy


def random_tau_policy(tau_bounds: tuple, seed):
    """Uniform evolution time on a fixed interval (decoherence-free tasks)."""
    lo, hi = tau_bounds
    rng = np.random.default_rng(seed)

    def policy(ens, mom, t, resources):
        return NvControls(tau=float(rng.uniform(lo, hi)))

    return policy


# ---------------------------------------------------------------------------
# batch losses


def _loss_matrix(records: Sequence[EpisodeRecord], m_max: int) -> np.ndarray:
    """(B, m_max) per-step losses; short episodes repeat their last value
    (the estimator is frozen once the budget is exhausted)."""
    out = np.empty((len(records), m_max))
    for k, rec in enumerate(records):
        if rec.n_measurements == 0:
            raise ValueError("cannot build a loss matrix from empty episodes")
        padded = np.concatenate(
            [rec.losses, np.full(m_max - rec.losses.size, rec.losses[-1])]
        ) if rec.losses.size < m_max else rec.losses[:m_max]
        out[k] = padded
    return out


def _time_matrix(records: Sequence[EpisodeRecord], m_max: int) -> np.ndarray:
    out = np.empty((len(records), m_max))
    for k, rec in enumerate(records):
        padded = np.concatenate(
            [rec.times, np.full(m_max - rec.times.size, rec.times[-1])]
        ) if rec.times.size < m_max else rec.times[:m_max]
        out[k] = padded
    return out


def cumulative_loss(
    records: Sequence[EpisodeRecord], spec: LossSpec, m_max: int
) -> float:
    """(1 / (Mmax B)) sum_{t,k} loss_{k,t} / eta(T_{k,t})."""
    if not records:
        raise ValueError("batch must be nonempty")
    losses = _loss_matrix(records, m_max)
    times = _time_matrix(records, m_max)
    etas = np.minimum(spec.prior_eta_term, 1.0 / np.maximum(times, 1e-300))
    return float(np.sum(losses / etas) / (m_max * len(records)))


def log_loss(records: Sequence[EpisodeRecord], m_max: int) -> float:
    """(1 / Mmax) sum_t log(batch-mean loss at step t), clamped at 1e-12."""
    if not records:
        raise ValueError("batch must be nonempty")
    losses = _loss_matrix(records, m_max)
    step_means = np.clip(losses.mean(axis=0), LOSS_EPS, None)
    return float(np.mean(np.log(step_means)))


def dolinar_loss(
    variant: int,
    p_plus: float,
    sign: int,
    n_phot: int,
    p_helstrom: Optional[float] = None,
) -> float:
    """The nine sign-discrimination training losses.

    Variants 0..2 are the raw Bayes-rule, soft, and parity errors;
    3..5 subtract the reference error probability; 6..8 divide by it.
    """
    if variant not in range(9):
        raise ValueError("variant must be in 0..8")
    s_bayes = 1 if p_plus > 0.5 else -1
    s_parity = 1 if n_phot % 2 == 0 else -1
    p_s = p_plus if sign == 1 else 1.0 - p_plus
    base = [
        0.0 if s_bayes == sign else 1.0,
        1.0 - p_s,
        0.0 if s_parity == sign else 1.0,
    ][variant % 3]
    if variant < 3:
        return base
    if p_helstrom is None:
        raise ValueError("variants 3..8 need the reference error probability")
    if variant < 6:
        return base - p_helstrom
    return base / p_helstrom


def classification_loss(weights, truth: int) -> float:
    """0/1 error of the maximum-posterior class, lowest index on ties."""
    guess = int(np.argmax(np.asarray(weights)))
    return 0.0 if guess == truth else 1.0


# ---------------------------------------------------------------------------
# differentiable batched rollout


def make_nv_rollout(
    model: NvModel,
    space: ParameterSpace,
    m_max: int,
    h_prefactor: float,
    apply_fn: Callable,
    n_particles: int,
    weight_matrix,
    t_max: Optional[float] = None,
    ess_threshold: float = 0.5,
    jitter_scale: float = 0.01,
):
    """Build the jitted batch rollout for a Ramsey-type model.

    `apply_fn(params, features)` returns the raw agent output; the first
    component maps to tau = h |raw_0| + 1 and the second, if present, to
    phi = pi |raw_1|. Randomness enters through pre-drawn arrays: outcome
    uniforms, resampling uniforms, and jitter normals. Returns a function

        rollout(params, theta, particles0, u_out, u_res, noise) -> dict

    with per-step losses, cumulative score terms (for the gradient
    estimator), cumulative evolution times, an active mask (time budgets),
    and the minimum effective sample size.

    The joint-support predicate is not evaluated inside the rollout; the
    training tasks all use box priors, where clipping suffices.
    """
    lo = jnp.asarray(space.lowers)
    hi = jnp.asarray(space.uppers)
    g = jnp.asarray(weight_matrix)
    d = space.ndim

    def episode(params, theta, particles0, u_out, u_res, noise):
        weights0 = jnp.full(n_particles, 1.0 / n_particles)

        def step(carry, inputs):
            particles, weights, score, elapsed, active = carry
            u_y, u_r, eps, t_idx = inputs

            mean, cov, corr = weighted_moments(particles, weights)
            feats = featurize_nv(
                PosteriorMoments(mean, cov, corr),
                space,
                t_idx,
                m_max,
                elapsed if t_max is not None else t_idx,
                t_max if t_max is not None else m_max,
            )
            raw = jnp.abs(apply_fn(params, feats))
            tau = h_prefactor * raw[0] + 1.0
            phi = jnp.pi * raw[1] if raw.shape[0] > 1 else 0.0

            p_plus = clamp_prob(model.prob_plus(theta, tau, phi))
            y = jnp.where(u_y < p_plus, 1.0, -1.0)
            log_p_y = jnp.log(jnp.where(y > 0, p_plus, 1.0 - p_plus))

            lik = model.likelihood(y, particles, tau, phi)
            w = weights * lik
            w = w / jnp.sum(w)

            mean2, cov2, _ = weighted_moments(particles, w)
            loss_t = quadratic_error(mean2, theta, g)
            score_t = score + log_p_y  # draws that influenced loss_t

            # conditional systematic resampling with support-clipped jitter
            ess_val = ess(w)
            do_resample = ess_val < ess_threshold * n_particles
            idx = systematic_indices(w, u_r)
            std = jnp.sqrt(jnp.clip(jnp.diagonal(cov2), 0.0, None))
            jittered = jnp.clip(particles[idx] + eps * jitter_scale * std, lo, hi)
            resample_score = jnp.sum(jnp.log(w[idx]))

            new_particles = jnp.where(
                do_resample, jax.lax.stop_gradient(jittered), particles
            )
            new_weights = jnp.where(do_resample, weights0, w)
            new_score = score_t + jnp.where(do_resample, resample_score, 0.0)

            # time budgets: frozen once the budget was crossed
            if t_max is not None:
                new_elapsed = elapsed + tau
                new_active = active & (elapsed < t_max)
                new_particles = jnp.where(new_active, new_particles, particles)
                new_weights = jnp.where(new_active, new_weights, weights)
                new_score = jnp.where(new_active, new_score, score)
                loss_t = jnp.where(new_active, loss_t, jnp.nan)
                score_t = jnp.where(new_active, score_t, score)
                new_elapsed = jnp.where(new_active, new_elapsed, elapsed)
            else:
                new_elapsed = elapsed + tau
                new_active = active

            carry = (new_particles, new_weights, new_score, new_elapsed, new_active)
            return carry, (loss_t, score_t, new_elapsed, ess_val, new_active)

        init = (particles0, weights0, 0.0, 0.0, True)
        inputs = (u_out, u_res, noise, jnp.arange(m_max))
        _, (losses, scores, times, ess_vals, actives) = jax.lax.scan(
            step, init, inputs
        )
        if t_max is not None:
            # frozen steps repeat the last live loss
            losses = _forward_fill(losses)
        return losses, scores, times, jnp.min(ess_vals), actives

    batched = jax.vmap(episode, in_axes=(None, 0, 0, 0, 0, 0))

    def rollout(params, theta, particles0, u_out, u_res, noise):
        losses, scores, times, ess_min, actives = batched(
            params, theta, particles0, u_out, u_res, noise
        )
        return {
            "losses": losses,
            "scores": scores,
            "times": times,
            "ess_min": ess_min,
            "active": actives,
        }

    return jax.jit(rollout)


def _forward_fill(values):
    """Replace NaN entries with the last preceding finite value."""

    def step(prev, x):
        cur = jnp.where(jnp.isnan(x), prev, x)
        return cur, cur

    _, filled = jax.lax.scan(step, values[0], values)
    return filled


def draw_rollout_inputs(
    rng: np.random.Generator,
    space: ParameterSpace,
    batch: int,
    m_max: int,
    n_particles: int,
):
    """Pre-sample every random input of a training batch (numpy side)."""
    theta = np.stack(
        [init_from_prior(space, 2, rng).particles[0] for _ in range(batch)]
    )
    particles0 = np.stack(
        [init_from_prior(space, n_particles, rng).particles for _ in range(batch)]
    )
    u_out = rng.uniform(size=(batch, m_max))
    u_res = rng.uniform(size=(batch, m_max))
    noise = rng.standard_normal((batch, m_max, n_particles, space.ndim))
    return theta, particles0, u_out, u_res, noise


# ---------------------------------------------------------------------------
# gradient estimator


def surrogate_losses(losses, scores):
    """Per-episode surrogate whose gradient is the unbiased estimator.

    l~_{k,t} = l_{k,t} + sg(l_{k,t} - b_{k,t}) (S_{k,t} - sg(S_{k,t}))
    with b the leave-one-out batch mean of l at step t. Differentiating
    recovers the pathwise term plus the baseline-corrected score term; the
    value itself equals the raw loss.
    """
    losses = jnp.asarray(losses)
    scores = jnp.asarray(scores)
    b = losses.shape[0]
    if b < 2:
        baseline = jnp.zeros_like(losses)
    else:
        baseline = (jnp.sum(losses, axis=0, keepdims=True) - losses) / (b - 1)
    centered = jax.lax.stop_gradient(losses - baseline)
    return losses + centered * (scores - jax.lax.stop_gradient(scores))


def batch_objective(out: dict, loss_kind: str, loss_spec: Optional[LossSpec], m_max: int):
    """Scalar training objective from one rollout output."""
    surr = surrogate_losses(out["losses"], out["scores"])
    if loss_kind == "mean":
        return jnp.mean(surr)
    if loss_kind == "log":
        step_means = jnp.clip(jnp.mean(surr, axis=0), LOSS_EPS, None)
        return jnp.mean(jnp.log(step_means))
    if loss_kind == "cumulative":
        if loss_spec is None:
            raise ValueError("cumulative loss needs a LossSpec")
        etas = jnp.minimum(
            loss_spec.prior_eta_term, 1.0 / jnp.clip(out["times"], 1e-300, None)
        )
        return jnp.sum(surr / etas) / (m_max * surr.shape[0])
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def estimate_gradient(
    params,
    rollout,
    inputs: tuple,
    loss_kind: str = "log",
    loss_spec: Optional[LossSpec] = None,
    m_max: Optional[int] = None,
):
    """Loss value, gradient pytree, and rollout diagnostics for one batch."""

    def objective(p):
        out = rollout(p, *inputs)
        if m_max is None:
            m = out["losses"].shape[1]
        else:
            m = m_max
        return batch_objective(out, loss_kind, loss_spec, m), out

    (value, out), grads = jax.value_and_grad(objective, has_aux=True)(params)
    return float(value), grads, out


# ---------------------------------------------------------------------------
# Adam with inverse-square-root schedule


def lr_schedule(alpha0: float, step: int, t0: float = 100.0) -> float:
    return alpha0 / math.sqrt(1.0 + step / t0)


def init_adam(params):
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return {"m": zeros, "v": zeros, "step": 0}


def adam_step(params, grads, state, lr, b1=0.9, b2=0.999, eps=1e-8):
    t = state["step"] + 1
    m = jax.tree_util.tree_map(
        lambda mm, gg: b1 * mm + (1 - b1) * gg, state["m"], grads
    )
    v = jax.tree_util.tree_map(
        lambda vv, gg: b2 * vv + (1 - b2) * gg * gg, state["v"], grads
    )
    scale = lr * math.sqrt(1 - b2**t) / (1 - b1**t)
    new_params = jax.tree_util.tree_map(
        lambda p, mm, vv: p - scale * mm / (jnp.sqrt(vv) + eps), params, m, v
    )
    return new_params, {"m": m, "v": v, "step": t}


def grad_norm(grads) -> float:
    leaves = jax.tree_util.tree_leaves(grads)
    return float(jnp.sqrt(sum(jnp.sum(g * g) for g in leaves)))


# ---------------------------------------------------------------------------
# pretraining and training loop


def pretrain_linear_ramp(
    agent: MlpAgent,
    m_max: int,
    seed,
    steps: int = 400,
    batch: int = 256,
    lr: float = 1e-3,
) -> MlpAgent:
    """Fit the network to the linear evolution-time ramp.

    Target: tau rises linearly from 1 us at t=0 to h at the last step,
    i.e. |raw_0| = t / (m_max - 1), with raw_1 (the phase) driven to 0.
    Trained by least squares on synthetic feature vectors whose step-index
    entry is consistent with the target.
    """
    n_in = agent.sizes[0]
    n_out = agent.sizes[-1]
    rng = np.random.default_rng(seed)

    @jax.jit
    def loss_fn(params, feats, targets):
        raw = jax.vmap(lambda f: mlp_apply(params, f))(feats)
        err = jnp.abs(raw[:, 0]) - targets
        reg = jnp.sum(raw[:, 1:] ** 2) / feats.shape[0] if n_out > 1 else 0.0
        return jnp.mean(err**2) + reg

    params = agent.params
    state = init_adam(params)
    grad_fn = jax.jit(jax.grad(loss_fn))
    for _ in range(steps):
        t = rng.integers(0, m_max, size=batch)
        feats = rng.uniform(-1.0, 1.0, size=(batch, n_in))
        feats[:, -1] = 2.0 * t / m_max - 1.0
        targets = t / max(m_max - 1, 1)
        grads = grad_fn(params, jnp.asarray(feats), jnp.asarray(targets))
        params, state = adam_step(params, grads, state, lr)
    return MlpAgent(sizes=agent.sizes, params=params)


@dataclass(frozen=True)
class TrainSettings:
    """Everything the training loop needs; built by the CLI from a config."""

    model: NvModel
    space: ParameterSpace
    budget: ResourceBudget
    h_prefactor: float
    n_particles: int = 480
    batch_size: int = 128
    steps: int = 2000
    alpha0: float = 3e-5
    t0: float = 100.0
    loss_kind: str = "log"
    loss_spec: Optional[LossSpec] = None
    pretrain: bool = True
    pretrain_steps: int = 400
    seed: int = 0
    out_dir: Optional[str] = None
    checkpoint_every: int = 500
    n_outputs: int = 2

    @property
    def m_max(self) -> int:
        if self.budget.kind == "measurements":
            return int(self.budget.amount)
        # time budgets: generous cap on the number of scan steps
        return int(self.budget.amount)


@dataclass
class TrainResult:
    agent: MlpAgent
    history: list
    aborted: bool = False


def train(settings: TrainSettings) -> TrainResult:
    """Policy-gradient training of the network agent.

    Writes `metrics.csv` (and periodic checkpoints) into `out_dir` when
    given. A non-finite loss or gradient halts training and the last good
    parameters are kept.
    """
    s = settings
    from qmetro.agents import feature_count

    n_in = feature_count(s.space.ndim)
    agent = init_mlp(n_in, s.n_outputs, seed=s.seed)
    if s.pretrain:
        agent = pretrain_linear_ramp(
            agent, s.m_max, seed=s.seed + 1, steps=s.pretrain_steps
        )

    t_max = s.budget.amount if s.budget.kind == "total_time" else None
    g = (
        s.loss_spec.weight_matrix
        if s.loss_spec is not None
        else np.eye(s.space.ndim)
    )
    rollout = make_nv_rollout(
        s.model,
        s.space,
        s.m_max,
        s.h_prefactor,
        mlp_apply,
        s.n_particles,
        g,
        t_max=t_max,
    )

    rng = np.random.default_rng(s.seed + 2)
    params = agent.params
    adam = init_adam(params)
    history = []
    aborted = False

    metrics_path = None
    if s.out_dir is not None:
        os.makedirs(s.out_dir, exist_ok=True)
        metrics_path = os.path.join(s.out_dir, "metrics.csv")
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_HEADER)

    for step in range(s.steps):
        inputs = draw_rollout_inputs(
            rng, s.space, s.batch_size, s.m_max, s.n_particles
        )
        value, grads, out = estimate_gradient(
            params, rollout, inputs, s.loss_kind, s.loss_spec, s.m_max
        )
        norm = grad_norm(grads)
        if not (math.isfinite(value) and math.isfinite(norm)):
            aborted = True
            break
        lr = lr_schedule(s.alpha0, step, s.t0)
        params, adam = adam_step(params, grads, adam, lr)
        ess_min = float(jnp.min(out["ess_min"]))
        row = [step, value, norm, lr, ess_min, 0]
        history.append(row)
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as f:
                csv.writer(f).writerow(row)
        if (
            s.out_dir is not None
            and s.checkpoint_every > 0
            and (step + 1) % s.checkpoint_every == 0
        ):
            save_checkpoint(
                os.path.join(s.out_dir, f"agent-{step + 1:06d}.ckpt"),
                MlpAgent(sizes=agent.sizes, params=params),
            )

    final = MlpAgent(sizes=agent.sizes, params=params)
    if s.out_dir is not None:
        save_checkpoint(os.path.join(s.out_dir, "agent-final.ckpt"), final)
    return TrainResult(agent=final, history=history, aborted=aborted)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_policy(
    model: NvModel,
    policy_factory: Callable,
    space: ParameterSpace,
    budget: ResourceBudget,
    n_particles: int,
    n_episodes: int,
    seed,
    loss_spec: Optional[LossSpec] = None,
) -> dict:
    """Mean and standard error of the per-step error over shared seeds.

    `policy_factory(episode_seed)` builds a fresh policy per episode so
    stochastic strategies get independent, reproducible streams. Episode
    seeds are (seed, index) pairs, so different strategies evaluated with
    the same `seed` see identical priors, truths, and outcome draws.
    """
    records = []
    aborted = 0
    for k in range(n_episodes):
        rec = run_episode(
            model,
            policy_factory(np.random.default_rng((seed, 1, k)).integers(2**63)),
            space,
            budget,
            n_particles,
            seed=np.random.default_rng((seed, 0, k)).integers(2**63),
            loss_spec=loss_spec,
        )
        if rec.aborted or rec.n_measurements == 0:
            aborted += 1
            continue
        records.append(rec)
    m_max = max(r.n_measurements for r in records)
    losses = _loss_matrix(records, m_max)
    return {
        "mean": losses.mean(axis=0),
        "stderr": losses.std(axis=0, ddof=1) / math.sqrt(losses.shape[0]),
        "n": losses.shape[0],
        "aborted": aborted,
        "records": records,
    }
