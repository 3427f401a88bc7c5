"""Control policies: posterior featurization, network and table agents,
a ternary decision tree, and the literature baseline strategies.

The trainable agents (MLP, static table, tree) are pure functions of their
parameters, so the same code runs inside jitted training rollouts and in the
plain-numpy evaluation loop. Baselines consume only the stated posterior
statistics, never the raw particles, except for the two posterior draws of
the particle-guess heuristic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from qmetro.nv_models import NvControls
from qmetro.particles import ParticleEnsemble, PosteriorMoments
from qmetro.spaces import ParameterSpace

SIGMA_CAP = 1.4  # feature value used when a posterior std underflows
HIDDEN_LAYERS = (64, 64, 64, 64, 64)

# Renormalized-Fisher-information maxima for the inverse-time baseline.
ALPHA_MEASUREMENT = 0.79681
ALPHA_TIME = 0.43711

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# featurization


def rescale_std(std, cap: float = SIGMA_CAP):
    """Map a posterior standard deviation to the network input scale.

    sigma_tilde = -(2/10) ln(std) - 1, capped at `cap` so collapsed
    posteriors stay finite. std = 1 maps to -1 and std = 1e-5 to ~1.3026.
    """
    std = jnp.asarray(std)
    safe = jnp.where(std > 0, std, 1.0)
    val = -0.2 * jnp.log(safe) - 1.0
    return jnp.where(std > 0, jnp.minimum(val, cap), cap)


def featurize_nv(
    moments: PosteriorMoments,
    space: ParameterSpace,
    t: int,
    m_max: float,
    resources: float,
    resource_max: float,
    sigma_cap: float = SIGMA_CAP,
):
    """Posterior summary fed to the network, d^2 + 2d + 2 scalars.

    Order: normalized means (prior box mapped to [-1, 1]), rescaled stds,
    the flattened correlation matrix, normalized resources, normalized step
    index.
    """
    if m_max <= 0 or resource_max <= 0:
        raise ValueError("m_max and resource_max must be positive")
    lo = jnp.asarray(space.lowers)
    hi = jnp.asarray(space.uppers)
    mean = jnp.asarray(moments.mean)
    theta_tilde = 2.0 * (mean - lo) / (hi - lo) - 1.0
    std = jnp.sqrt(jnp.clip(jnp.diagonal(jnp.asarray(moments.covariance)), 0.0, None))
    sigma_tilde = rescale_std(std, sigma_cap)
    chi = jnp.asarray(moments.correlation).ravel()
    r_tilde = 2.0 * resources / resource_max - 1.0
    t_tilde = 2.0 * t / m_max - 1.0
    return jnp.concatenate(
        [theta_tilde, sigma_tilde, chi, jnp.array([r_tilde, t_tilde])]
    )


def feature_count(ndim: int) -> int:
    return ndim * ndim + 2 * ndim + 2


# ---------------------------------------------------------------------------
# trainable agents


@dataclass(frozen=True)
class MlpAgent:
    """Fully connected tanh network; params is a list of (W, b) pairs."""

    sizes: tuple
    params: list

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.params)


def init_mlp(
    n_inputs: int,
    n_outputs: int,
    seed,
    hidden: Sequence[int] = HIDDEN_LAYERS,
) -> MlpAgent:
    """Uniform fan-in (Glorot-style) initialization of all layers."""
    sizes = (n_inputs, *hidden, n_outputs)
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.append((jnp.asarray(w), jnp.zeros(fan_out)))
    return MlpAgent(sizes=sizes, params=params)


def mlp_apply(params, features):
    """Forward pass; tanh everywhere keeps the outputs in (-1, 1)."""
    x = jnp.asarray(features)
    for w, b in params:
        x = jnp.tanh(x @ w + b)
    return x


@dataclass(frozen=True)
class StaticAgent:
    """Non-adaptive policy: one raw control tuple per measurement step."""

    table: jnp.ndarray  # (n_steps, n_outputs)

    @property
    def n_params(self) -> int:
        return int(self.table.size)


def static_apply(table, step):
    """Raw controls of one step; they pass through the same output map
    as the network, so the parametrization is comparable."""
    return jnp.tanh(jnp.asarray(table)[step])


@dataclass(frozen=True)
class TreeAgent:
    """Complete ternary decision tree; each node stores raw controls.

    Nodes live in a flat array addressed by the base-3 outcome path:
    root at 0, child y of node i at 3 i + y + 1. A tree of depth D has
    (3^(D+1) - 1) / 2 nodes.
    """

    depth: int
    nodes: jnp.ndarray  # (n_nodes, n_outputs)

    def __post_init__(self) -> None:
        expected = tree_node_count(self.depth)
        if self.nodes.shape[0] != expected:
            raise ValueError(
                f"depth-{self.depth} tree needs {expected} nodes, "
                f"got {self.nodes.shape[0]}"
            )

    @property
    def n_params(self) -> int:
        return int(self.nodes.size)


def tree_node_count(depth: int) -> int:
    return (3 ** (depth + 1) - 1) // 2


def init_tree(depth: int, n_outputs: int, seed) -> TreeAgent:
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(-1.0, 1.0, size=(tree_node_count(depth), n_outputs))
    return TreeAgent(depth=depth, nodes=jnp.asarray(nodes))


def tree_path_index(path: Sequence[int]) -> int:
    """Flat index of the node reached by a coarse-outcome path."""
    idx = 0
    for y in path:
        if y not in (0, 1, 2):
            raise ValueError(f"coarse outcomes must be 0, 1, or 2, got {y}")
        idx = 3 * idx + y + 1
    return idx


def tree_control(agent: TreeAgent, path: Sequence[int]):
    """Controls stored at the node addressed by the outcome path so far."""
    if len(path) > agent.depth:
        raise ValueError(f"path longer than tree depth {agent.depth}")
    return jnp.tanh(agent.nodes[tree_path_index(path)])


# ---------------------------------------------------------------------------
# control maps


def h_prefactor(
    regime: str,
    m_max: Optional[float] = None,
    t_max: Optional[float] = None,
    t2: Optional[float] = None,
    inv_t2_lower: Optional[float] = None,
) -> float:
    """Height prefactor for the evolution-time control.

    Measurement-limited runs use ceil(2^sqrt(Mmax)) us, time-limited runs
    Tmax/20; both are floored at the coherence time T2 (or at the inverse
    of the lower prior edge when T2^-1 is estimated).
    """
    if regime == "measurement":
        if m_max is None:
            raise ValueError("measurement-limited prefactor needs m_max")
        base = float(math.ceil(2.0 ** math.sqrt(m_max)))
    elif regime == "time":
        if t_max is None:
            raise ValueError("time-limited prefactor needs t_max")
        base = t_max / 20.0
    else:
        raise ValueError(f"unknown resource regime {regime!r}")
    if inv_t2_lower is not None:
        return max(base, 1.0 / inv_t2_lower)
    if t2 is not None and math.isfinite(t2):
        return max(base, t2)
    return base


def nv_output_map(raw, h_prefactor: float):
    """(tau, phi) = (h, pi) * |raw| + (1 us, 0); tau >= 1 us always."""
    raw = jnp.abs(jnp.asarray(raw))
    tau = h_prefactor * raw[0] + 1.0
    phi = jnp.pi * raw[1] if raw.shape[0] > 1 else 0.0
    return tau, phi


def nv_control(agent, features, h_prefactor: float, step: int = 0) -> NvControls:
    """Evaluate a trainable agent and map its output to Ramsey controls."""
    if isinstance(agent, MlpAgent):
        raw = mlp_apply(agent.params, features)
    elif isinstance(agent, StaticAgent):
        raw = static_apply(agent.table, step)
    else:
        raise TypeError(f"unsupported agent type {type(agent).__name__}")
    tau, phi = nv_output_map(raw, h_prefactor)
    return NvControls(tau=float(tau), phi=float(phi))


# ---------------------------------------------------------------------------
# baseline strategies


PGH_EPS = 1e-5  # MHz; keeps tau finite when the two draws coincide


def pgh_control(ens: ParticleEnsemble, seed) -> NvControls:
    """Particle-guess heuristic: tau is the inverse distance of two
    posterior draws, with a small additive floor."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(ens.n_particles, size=2, p=ens.weights)
    dist = float(np.linalg.norm(ens.particles[idx[0]] - ens.particles[idx[1]]))
    return NvControls(tau=1.0 / (dist + PGH_EPS))


def sigma_inverse_control(
    moments: PosteriorMoments,
    inv_t2: float = 0.0,
    variant: str = "sigma",
) -> NvControls:
    """Covariance-trace strategies.

    variant "sigma": tau = tr(Sigma)^(-1/2); variant "sigma_t": tau =
    [tr(Sigma)^(1/2) + inv_t2]^(-1), which accounts for finite coherence.
    """
    trace = float(np.trace(moments.covariance))
    if trace <= 0:
        raise ValueError("posterior covariance trace must be positive")
    if variant == "sigma":
        return NvControls(tau=trace**-0.5)
    if variant == "sigma_t":
        return NvControls(tau=1.0 / (trace**0.5 + inv_t2))
    raise ValueError(f"unknown variant {variant!r}")


def inverse_time_control(
    inv_t_hat: float,
    beta_hat: float,
    regime: str = "measurement",
    literal_frequency: bool = False,
) -> NvControls:
    """Decoherence-tracking strategy tau = alpha^(1/beta) / inv_T.

    The published expression multiplies by the inverse time instead of
    dividing, which has the dimensions of a frequency;
    `literal_frequency=True` restores that reading.
    """
    if inv_t_hat <= 0 or beta_hat <= 0:
        raise ValueError("estimates must be positive")
    alpha = {"measurement": ALPHA_MEASUREMENT, "time": ALPHA_TIME}[regime]
    scale = alpha ** (1.0 / beta_hat)
    tau = scale * inv_t_hat if literal_frequency else scale / inv_t_hat
    return NvControls(tau=tau)


def random_control(inv_t_bounds: tuple, seed) -> NvControls:
    """Uniform draw of tau^-1 over the inverse-time prior support."""
    lo, hi = inv_t_bounds
    if not 0 < lo < hi:
        raise ValueError("need 0 < lower < upper")
    rng = np.random.default_rng(seed)
    return NvControls(tau=1.0 / rng.uniform(lo, hi))


# ---------------------------------------------------------------------------
# photonic feature builders and control maps


def dolinar_features(
    psi_plus: float,
    alpha_plus: float,
    sigma_plus: float,
    psi_minus: float,
    alpha_minus: float,
    sigma_minus: float,
    p_plus: float,
    t: int,
    m_max: int,
):
    """Eight posterior scalars of the sign-discrimination receiver."""
    return jnp.array(
        [
            psi_plus,
            alpha_plus,
            sigma_plus,
            psi_minus,
            alpha_minus,
            sigma_minus,
            p_plus,
            2.0 * t / m_max - 1.0,
        ]
    )


def dolinar_control(agent: MlpAgent, features, n_phot: int) -> float:
    """Mixing angle theta = f(features) - pi * (n_phot mod 2)."""
    raw = mlp_apply(agent.params, features)
    return float(raw[0] - jnp.pi * (n_phot % 2))


def qml_features(
    psi_mean: complex,
    alpha_means,
    alpha_stds,
    class_probs,
    t: int,
    m_max: int,
):
    """The 19 posterior scalars of the three-state classifier.

    alpha_means and alpha_stds hold the six real/imaginary components of
    the training amplitudes; stds enter as -(1/10) log sigma.
    """
    probs = jnp.asarray(class_probs)
    stds = jnp.asarray(alpha_stds)
    return jnp.concatenate(
        [
            jnp.array([jnp.real(psi_mean), jnp.imag(psi_mean)]),
            jnp.asarray(alpha_means),
            -0.1 * jnp.log(jnp.clip(stds, 1e-12, None)),
            2.0 * probs - 1.0,
            jnp.array([2.0 * t / m_max - 1.0, float(t % 3) - 1.0]),
        ]
    )


def qml_control(agent: MlpAgent, features) -> tuple:
    """Beam-splitter controls (theta, phi) read directly from the network."""
    raw = mlp_apply(agent.params, features)
    return float(raw[0]), float(raw[1])


def multiphase_features(hypothesis_weights, t: int, m_max: int, n_ph: float, n_ph_max: float):
    """Eight hypothesis weights plus normalized step and photon tallies."""
    w = jnp.asarray(hypothesis_weights)
    return jnp.concatenate(
        [w, jnp.array([2.0 * t / m_max - 1.0, 2.0 * n_ph / n_ph_max - 1.0])]
    )


def multiphase_control(agent: MlpAgent, features):
    """Three control phases c = 2 pi * f(features)."""
    raw = mlp_apply(agent.params, features)
    return 2.0 * jnp.pi * raw[:3]


# ---------------------------------------------------------------------------
# checkpoint serialization


def flatten_params(agent) -> np.ndarray:
    if isinstance(agent, MlpAgent):
        parts = []
        for w, b in agent.params:
            parts.append(np.asarray(w).ravel())
            parts.append(np.asarray(b).ravel())
        return np.concatenate(parts)
    if isinstance(agent, StaticAgent):
        return np.asarray(agent.table).ravel()
    if isinstance(agent, TreeAgent):
        return np.asarray(agent.nodes).ravel()
    raise TypeError(f"unsupported agent type {type(agent).__name__}")


def _rebuild(header: dict, flat: np.ndarray):
    kind = header["kind"]
    if kind == "mlp":
        sizes = tuple(header["sizes"])
        params = []
        pos = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = flat[pos : pos + fan_out]
            pos += fan_out
            params.append((jnp.asarray(w), jnp.asarray(b)))
        return MlpAgent(sizes=sizes, params=params)
    if kind == "static":
        shape = tuple(header["shape"])
        return StaticAgent(table=jnp.asarray(flat.reshape(shape)))
    if kind == "tree":
        depth = header["depth"]
        n_out = header["n_outputs"]
        return TreeAgent(depth=depth, nodes=jnp.asarray(flat.reshape(-1, n_out)))
    raise ValueError(f"unknown agent kind {kind!r}")


def _header(agent) -> dict:
    if isinstance(agent, MlpAgent):
        extra = {"kind": "mlp", "sizes": list(agent.sizes)}
    elif isinstance(agent, StaticAgent):
        extra = {"kind": "static", "shape": list(agent.table.shape)}
    elif isinstance(agent, TreeAgent):
        extra = {
            "kind": "tree",
            "depth": agent.depth,
            "n_outputs": int(agent.nodes.shape[1]),
        }
    else:
        raise TypeError(f"unsupported agent type {type(agent).__name__}")
    return {
        "version": CHECKPOINT_VERSION,
        "n_params": int(flatten_params(agent).size),
        **extra,
    }


def save_checkpoint(path, agent, config_hash: str = "") -> None:
    """Versioned header line plus a flat little-endian float64 block.

    A human-readable JSON sidecar `<path>.meta.json` records the header
    and the configuration hash for provenance checks.
    """
    header = _header(agent)
    flat = flatten_params(agent).astype("<f8")
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        f.write(flat.tobytes())
    meta = {**header, "config_hash": config_hash}
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_checkpoint(path):
    """Returns (agent, header dict); validates version and length."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        flat = np.frombuffer(f.read(), dtype="<f8")
    if flat.size != header["n_params"]:
        raise ValueError(
            f"checkpoint holds {flat.size} parameters, header says "
            f"{header['n_params']}"
        )
    return _rebuild(header, flat), header


def checkpoint_config_hash(path) -> str:
    with open(str(path) + ".meta.json") as f:
        return json.load(f).get("config_hash", "")
