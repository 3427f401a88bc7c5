"""Outcome models for the four spin (Ramsey) estimation tasks.

Each task is reduced to a closed-form probability for the binary readout
outcome +-1 as a function of the unknown parameters and the controls
(free-evolution time tau in microseconds, phase phi in radians). Frequencies
and inverse coherence times are in MHz, so every exponent and phase is a
dimensionless product.

The probability functions are written with ``jax.numpy`` and broadcast over
leading axes, so the same code serves single evaluations, particle clouds,
and jitted training rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import jax.numpy as jnp
import numpy as np

PROB_EPS = 1e-12  # clamp before logs; numeric safety in score terms


def clamp_prob(p):
    return jnp.clip(p, PROB_EPS, 1.0 - PROB_EPS)


class FisherResult(NamedTuple):
    """Per-parameter Fisher information; saturated means p hit 0 or 1."""

    values: np.ndarray
    saturated: bool


@dataclass(frozen=True)
class NvControls:
    """Ramsey controls: free-evolution time (us, > 0) and phase (rad)."""

    tau: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def _dephasing(tau, inv_t2, exponent_flag):
    """Visibility factor exp(-tau*inv_t2) or exp(-(tau*inv_t2)^2)."""
    x = tau * inv_t2
    if exponent_flag == 2:
        x = x * x
    return jnp.exp(-x)


class NvModel:
    """Common interface: probability, sampler, Fisher information.

    `theta` arrays have the estimated parameters in the order given by
    `param_names`; fixed quantities live on the model instance.
    """

    param_names: tuple

    @property
    def ndim(self) -> int:
        return len(self.param_names)

    def prob_plus(self, theta, tau, phi=0.0):
        raise NotImplementedError

    def likelihood(self, outcome, theta, tau, phi=0.0):
        """p(outcome | theta, controls) for outcome +-1, clamped to (0, 1)."""
        p = self.prob_plus(theta, tau, phi)
        p = jnp.where(outcome > 0, p, 1.0 - p)
        return clamp_prob(p)

    def _dp_dtheta(self, theta, tau, phi):
        """(d,) array of analytic derivatives of p(+1) at a single theta."""
        raise NotImplementedError

    def sample_outcome(self, rng: np.random.Generator, theta, tau, phi=0.0):
        """Bernoulli draw; returns (outcome +-1, log-likelihood of it)."""
        p = float(clamp_prob(self.prob_plus(jnp.asarray(theta), tau, phi)))
        outcome = 1 if rng.uniform() < p else -1
        logp = np.log(p if outcome == 1 else 1.0 - p)
        return outcome, logp

    def fisher_information(self, theta, tau, phi=0.0) -> FisherResult:
        """I(theta_j) = (dp/dtheta_j)^2 / (p (1 - p)) per parameter."""
        theta = np.asarray(theta, dtype=float)
        p = float(self.prob_plus(jnp.asarray(theta), tau, phi))
        if p <= 0.0 or p >= 1.0:
            return FisherResult(np.full(self.ndim, np.inf), saturated=True)
        dp = np.asarray(self._dp_dtheta(theta, tau, phi), dtype=float)
        return FisherResult(dp * dp / (p * (1.0 - p)), saturated=False)


@dataclass(frozen=True)
class DcModel(NvModel):
    """Static-field Larmor precession: p(+-1) = 1/2 +- V cos(w tau + phi)/2.

    The precession frequency omega is always estimated; the inverse
    coherence time is either a fixed constant or a second parameter.
    `exponent_flag=2` selects the Gaussian decay exp(-(tau/T2)^2) variant.
    """

    inv_t2: float = 0.0
    estimate_inv_t2: bool = False
    exponent_flag: int = 1

    @property
    def param_names(self) -> tuple:
        return ("omega", "inv_t2") if self.estimate_inv_t2 else ("omega",)

    def _split(self, theta):
        theta = jnp.asarray(theta)
        omega = theta[..., 0]
        inv_t2 = theta[..., 1] if self.estimate_inv_t2 else self.inv_t2
        return omega, inv_t2

    def prob_plus(self, theta, tau, phi=0.0):
        omega, inv_t2 = self._split(theta)
        vis = _dephasing(tau, inv_t2, self.exponent_flag)
        p = 0.5 + 0.5 * vis * jnp.cos(omega * tau + phi)
        return jnp.clip(p, 0.0, 1.0)

    def _dp_dtheta(self, theta, tau, phi):
        omega, inv_t2 = self._split(theta)
        vis = _dephasing(tau, inv_t2, self.exponent_flag)
        arg = omega * tau + phi
        d_omega = -0.5 * tau * vis * jnp.sin(arg)
        if not self.estimate_inv_t2:
            return jnp.stack([d_omega])
        if self.exponent_flag == 2:
            dvis = -2.0 * tau**2 * inv_t2 * vis
        else:
            dvis = -tau * vis
        return jnp.stack([d_omega, 0.5 * dvis * jnp.cos(arg)])

    def fisher_information(self, theta, tau, phi=0.0) -> FisherResult:
        # Decoherence-free frequency estimation has I(omega|tau) = tau^2
        # exactly; the generic ratio is 0/0 at the fringe extrema.
        theta_arr = np.asarray(theta, dtype=float)
        inv_t2 = theta_arr[1] if self.estimate_inv_t2 else self.inv_t2
        if inv_t2 == 0.0 and not self.estimate_inv_t2:
            return FisherResult(np.array([tau * tau]), saturated=False)
        return super().fisher_information(theta, tau, phi)


@dataclass(frozen=True)
class AcModel(NvModel):
    """Oscillating-field amplitude: p = 1/2 +- V cos[(Om/w) sin(w tau)]/2.

    The drive frequency `omega_drive` is known and fixed; the phase control
    is unused (phi = 0 throughout).
    """

    omega_drive: float = 0.2
    inv_t2: float = 0.0
    estimate_inv_t2: bool = False

    def __post_init__(self) -> None:
        if not self.omega_drive > 0:
            raise ValueError("omega_drive must be positive")

    @property
    def param_names(self) -> tuple:
        return ("Omega", "inv_t2") if self.estimate_inv_t2 else ("Omega",)

    def _split(self, theta):
        theta = jnp.asarray(theta)
        big_omega = theta[..., 0]
        inv_t2 = theta[..., 1] if self.estimate_inv_t2 else self.inv_t2
        return big_omega, inv_t2

    def prob_plus(self, theta, tau, phi=0.0):
        big_omega, inv_t2 = self._split(theta)
        w = self.omega_drive
        arg = big_omega / w * jnp.sin(w * tau)
        p = 0.5 + 0.5 * jnp.exp(-tau * inv_t2) * jnp.cos(arg)
        return jnp.clip(p, 0.0, 1.0)

    def _dp_dtheta(self, theta, tau, phi):
        big_omega, inv_t2 = self._split(theta)
        w = self.omega_drive
        s = jnp.sin(w * tau)
        arg = big_omega / w * s
        vis = jnp.exp(-tau * inv_t2)
        d_amp = -0.5 * vis * jnp.sin(arg) * s / w
        if not self.estimate_inv_t2:
            return jnp.stack([d_amp])
        return jnp.stack([d_amp, -0.5 * tau * vis * jnp.cos(arg)])

    def fisher_information(self, theta, tau, phi=0.0) -> FisherResult:
        # Without decoherence the generic ratio is 0/0 at the fringe
        # extrema; the exact limit is sin^2(w tau) / w^2.
        if self.inv_t2 == 0.0 and not self.estimate_inv_t2:
            s = np.sin(self.omega_drive * tau)
            return FisherResult(
                np.array([s * s / self.omega_drive**2]), saturated=False
            )
        return super().fisher_information(theta, tau, phi)


@dataclass(frozen=True)
class DecModel(NvModel):
    """Pure dephasing characterization: p(+-1) = (1 +- exp(-(tau nu)^b)) / 2.

    Parameters are the inverse coherence time `inv_t` and, unless fixed,
    the stretch exponent `beta`.
    """

    beta: Optional[float] = None  # None -> beta is estimated

    @property
    def param_names(self) -> tuple:
        return ("inv_t",) if self.beta is not None else ("inv_t", "beta")

    def _split(self, theta):
        theta = jnp.asarray(theta)
        inv_t = theta[..., 0]
        beta = self.beta if self.beta is not None else theta[..., 1]
        return inv_t, beta

    def prob_plus(self, theta, tau, phi=0.0):
        inv_t, beta = self._split(theta)
        x = jnp.power(tau * inv_t, beta)
        return jnp.clip(0.5 * (1.0 + jnp.exp(-x)), 0.0, 1.0)

    def _dp_dtheta(self, theta, tau, phi):
        inv_t, beta = self._split(theta)
        y = tau * inv_t
        x = jnp.power(y, beta)
        e = jnp.exp(-x)
        d_inv_t = -0.5 * e * beta * jnp.power(y, beta - 1.0) * tau
        if self.beta is not None:
            return jnp.stack([d_inv_t])
        d_beta = -0.5 * e * x * jnp.log(y)
        return jnp.stack([d_inv_t, d_beta])


@dataclass(frozen=True)
class HyperfineModel(NvModel):
    """Two hyperfine-split precession frequencies measured through one spin.

    p(+-1) = 1/2 +- V [cos(w0 tau + phi) + cos(w1 tau + phi)] / 4. The model
    text leaves the phase out of the cosines; `include_phase=False` restores
    that literal reading.
    """

    inv_t2: float = 0.0
    include_phase: bool = True

    param_names: tuple = ("omega0", "omega1")

    def prob_plus(self, theta, tau, phi=0.0):
        theta = jnp.asarray(theta)
        w0 = theta[..., 0]
        w1 = theta[..., 1]
        ph = phi if self.include_phase else 0.0
        vis = jnp.exp(-tau * self.inv_t2)
        p = 0.5 + 0.25 * vis * (jnp.cos(w0 * tau + ph) + jnp.cos(w1 * tau + ph))
        return jnp.clip(p, 0.0, 1.0)

    def _dp_dtheta(self, theta, tau, phi):
        theta = jnp.asarray(theta)
        ph = phi if self.include_phase else 0.0
        vis = jnp.exp(-tau * self.inv_t2)
        return jnp.stack(
            [
                -0.25 * tau * vis * jnp.sin(theta[..., 0] * tau + ph),
                -0.25 * tau * vis * jnp.sin(theta[..., 1] * tau + ph),
            ]
        )


def make_nv_model(name: str, **kwargs) -> NvModel:
    """Factory keyed by the config `model` field."""
    table = {
        "nv_dc": DcModel,
        "nv_ac": AcModel,
        "nv_dec": DecModel,
        "nv_hyperfine": HyperfineModel,
    }
    try:
        cls = table[name]
    except KeyError:
        raise ValueError(f"unknown NV model {name!r}; choose from {sorted(table)}")
    return cls(**kwargs)
