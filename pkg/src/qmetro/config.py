"""Experiment configuration: schema-validated TOML, snapshots, and hashing.

A configuration fully determines an experiment: the sensor model and its
prior, the agent, the resource budget, the loss, and the training
hyperparameters. Unknown keys are rejected with their full path so typos
fail loudly. Units follow the rest of the package: MHz and microseconds.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .agents import h_prefactor
from .engine import LossSpec, ResourceBudget, TrainSettings
from .nv_models import make_nv_model
from .spaces import Continuous, ParameterSpace


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending key path."""


# section -> key -> (type, default); None default means required
_SCHEMA = {
    "": {
        "seed": (int, 0),
        "particles": (int, 480),
    },
    "model": {
        "name": (str, None),
        "inv_t2": (float, 0.0),
        "estimate_inv_t2": (bool, False),
        "exponent_flag": (int, 1),
        "omega_drive": (float, 0.2),
        "beta": (float, 0.0),  # 0 -> beta is estimated
        "include_phase": (bool, True),
    },
    "agent": {
        "kind": (str, "mlp"),
        "outputs": (int, 2),
        "h": ((float, str), "auto"),
    },
    "budget": {
        "kind": (str, None),
        "amount": (float, None),
    },
    "loss": {
        "mode": (str, "log"),
        "weights": (list, None),
        "eta_variance_form": (bool, False),
    },
    "training": {
        "batch_size": (int, 128),
        "steps": (int, 2000),
        "alpha0": (float, 3e-5),
        "t0": (float, 100.0),
        "pretrain": (bool, True),
        "pretrain_steps": (int, 400),
        "checkpoint_every": (int, 500),
    },
}

_MODEL_KEYS = {
    "nv_dc": ("inv_t2", "estimate_inv_t2", "exponent_flag"),
    "nv_ac": ("omega_drive", "inv_t2"),
    "nv_dec": ("beta",),
    "nv_hyperfine": ("inv_t2", "include_phase"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    seed: int
    particles: int
    model: dict
    prior: dict  # name -> (lower, upper), ordered
    agent: dict
    budget: dict
    loss: dict
    training: dict

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "particles": self.particles,
            "model": dict(self.model),
            "prior": {k: list(v) for k, v in self.prior.items()},
            "agent": dict(self.agent),
            "budget": dict(self.budget),
            "loss": dict(self.loss),
            "training": dict(self.training),
        }


def _coerce(section: str, key: str, value, expected):
    types = expected if isinstance(expected, tuple) else (expected,)
    path = f"{section}.{key}" if section else key
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if int in types and isinstance(value, bool):
        raise ConfigError(f"{path}: expected {types}, got a boolean")
    if not isinstance(value, tuple(t for t in types)):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def _validate_section(section: str, data: dict) -> dict:
    schema = _SCHEMA[section]
    out = {}
    for key, value in data.items():
        if key not in schema:
            path = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown key {path!r}")
        out[key] = _coerce(section, key, value, schema[key][0])
    for key, (_, default) in schema.items():
        if key not in out:
            if default is None:
                path = f"{section}.{key}" if section else key
                raise ConfigError(f"missing required key {path!r}")
            out[key] = default
    return out


def _validate_prior(data: dict) -> dict:
    if not data:
        raise ConfigError("prior: at least one parameter interval is required")
    prior = {}
    for name, interval in data.items():
        if (
            not isinstance(interval, list)
            or len(interval) != 2
            or not all(isinstance(v, (int, float)) for v in interval)
        ):
            raise ConfigError(f"prior.{name}: expected [lower, upper]")
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi:
            raise ConfigError(f"prior.{name}: lower bound must be below upper")
        prior[name] = (lo, hi)
    return prior


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping against the schema."""
    known_sections = {"model", "prior", "agent", "budget", "loss", "training"}
    top = {}
    for key, value in raw.items():
        if key in known_sections:
            continue
        if key not in _SCHEMA[""]:
            raise ConfigError(f"unknown key {key!r}")
        top[key] = value
    for section in ("model", "budget", "loss"):
        if section not in raw:
            raise ConfigError(f"missing required section {section!r}")
    if "prior" not in raw:
        raise ConfigError("missing required section 'prior'")

    top = _validate_section("", top)
    model = _validate_section("model", raw["model"])
    agent = _validate_section("agent", raw.get("agent", {}))
    budget = _validate_section("budget", raw["budget"])
    loss = _validate_section("loss", raw["loss"])
    training = _validate_section("training", raw.get("training", {}))
    prior = _validate_prior(raw["prior"])

    if model["name"] not in _MODEL_KEYS:
        raise ConfigError(
            f"model.name: unknown model {model['name']!r}; "
            f"choose from {sorted(_MODEL_KEYS)}"
        )
    if budget["kind"] not in ("measurements", "total_time"):
        raise ConfigError(
            f"budget.kind: expected 'measurements' or 'total_time', "
            f"got {budget['kind']!r}"
        )
    if budget["amount"] <= 0:
        raise ConfigError("budget.amount: must be positive")
    if loss["mode"] not in ("log", "mean", "cumulative"):
        raise ConfigError(f"loss.mode: unknown mode {loss['mode']!r}")
    if agent["kind"] not in ("mlp", "static"):
        raise ConfigError(f"agent.kind: expected 'mlp' or 'static'")
    weights = loss["weights"]
    if len(weights) != len(prior) or not all(
        isinstance(w, (int, float)) and w >= 0 for w in weights
    ):
        raise ConfigError(
            "loss.weights: expected one nonnegative diagonal entry per "
            "prior parameter"
        )
    loss["weights"] = [float(w) for w in weights]

    return ExperimentConfig(
        seed=top["seed"],
        particles=top["particles"],
        model=model,
        prior=prior,
        agent=agent,
        budget=budget,
        loss=loss,
        training=training,
    )


def load_config(path) -> ExperimentConfig:
    """Read a TOML config, or a JSON snapshot written by save_snapshot."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        raw = json.loads(path.read_text())
    else:
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)


def save_snapshot(cfg: ExperimentConfig, path) -> None:
    """Write the effective configuration as canonical JSON."""
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; stable across key order."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# builders


def build_space(cfg: ExperimentConfig) -> ParameterSpace:
    return ParameterSpace(
        [Continuous(name, lo, hi) for name, (lo, hi) in cfg.prior.items()]
    )


def build_model(cfg: ExperimentConfig):
    name = cfg.model["name"]
    kwargs = {k: cfg.model[k] for k in _MODEL_KEYS[name]}
    if name == "nv_dec":
        beta = kwargs.pop("beta")
        kwargs["beta"] = None if beta == 0.0 else beta
    return make_nv_model(name, **kwargs)


def build_budget(cfg: ExperimentConfig) -> ResourceBudget:
    return ResourceBudget(cfg.budget["kind"], cfg.budget["amount"])


def build_loss_spec(cfg: ExperimentConfig) -> LossSpec:
    lowers = np.array([lo for lo, _ in cfg.prior.values()])
    uppers = np.array([hi for _, hi in cfg.prior.values()])
    return LossSpec(
        weight_matrix=np.diag(cfg.loss["weights"]),
        prior_lowers=lowers,
        prior_uppers=uppers,
        eta_variance_form=cfg.loss["eta_variance_form"],
    )


def resolve_h(cfg: ExperimentConfig) -> float:
    """The evolution-time prefactor, from the config or the budget rule."""
    h = cfg.agent["h"]
    if isinstance(h, float):
        if h <= 0:
            raise ConfigError("agent.h: must be positive")
        return h
    if h != "auto":
        raise ConfigError(f"agent.h: expected a number or 'auto', got {h!r}")
    kind = cfg.budget["kind"]
    inv_t2 = cfg.model.get("inv_t2", 0.0)
    estimating = cfg.model.get("estimate_inv_t2", False) or (
        cfg.model["name"] == "nv_dec"
    )
    inv_lower = None
    if estimating:
        rate_prior = cfg.prior.get("inv_t2") or cfg.prior.get("inv_t")
        if rate_prior is not None:
            inv_lower = rate_prior[0]
    t2 = 1.0 / inv_t2 if inv_t2 > 0 else None
    if kind == "measurements":
        return h_prefactor(
            "measurement",
            m_max=cfg.budget["amount"],
            t2=t2,
            inv_t2_lower=inv_lower,
        )
    return h_prefactor(
        "time", t_max=cfg.budget["amount"], t2=t2, inv_t2_lower=inv_lower
    )


def build_train_settings(
    cfg: ExperimentConfig, out_dir=None, seed_override=None
) -> TrainSettings:
    tr = cfg.training
    return TrainSettings(
        model=build_model(cfg),
        space=build_space(cfg),
        budget=build_budget(cfg),
        h_prefactor=resolve_h(cfg),
        n_particles=cfg.particles,
        batch_size=tr["batch_size"],
        steps=tr["steps"],
        alpha0=tr["alpha0"],
        t0=tr["t0"],
        loss_kind=cfg.loss["mode"],
        loss_spec=build_loss_spec(cfg),
        pretrain=tr["pretrain"],
        pretrain_steps=tr["pretrain_steps"],
        seed=cfg.seed if seed_override is None else seed_override,
        out_dir=str(out_dir) if out_dir is not None else None,
        checkpoint_every=tr["checkpoint_every"],
        n_outputs=cfg.agent["outputs"],
    )
