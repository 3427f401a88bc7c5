import json
import math

import numpy as np
import pytest

from qmetro.config import (
    ConfigError,
    ExperimentConfig,
    build_budget,
    build_loss_spec,
    build_model,
    build_space,
    build_train_settings,
    config_hash,
    load_config,
    parse_config,
    resolve_h,
    save_snapshot,
)
from qmetro.nv_models import DcModel, DecModel

MINIMAL = """
seed = 7

[model]
name = "nv_dc"

[prior]
omega = [0.0, 1.0]

[budget]
kind = "measurements"
amount = 20

[loss]
weights = [1.0]
"""


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParsing:
    def test_minimal_config(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        assert cfg.seed == 7
        assert cfg.particles == 480
        assert cfg.model["name"] == "nv_dc"
        assert cfg.prior == {"omega": (0.0, 1.0)}
        assert cfg.budget == {"kind": "measurements", "amount": 20.0}
        assert cfg.training["steps"] == 2000

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(write(tmp_path, MINIMAL + "\nbogus = 1\n"))

    def test_unknown_section_key(self, tmp_path):
        text = MINIMAL.replace('kind = "measurements"',
                               'kind = "measurements"\ntypo = 3')
        with pytest.raises(ConfigError, match="budget.typo"):
            load_config(write(tmp_path, text))

    def test_missing_required_section(self, tmp_path):
        text = MINIMAL.replace("[budget]", "[training]").replace(
            'kind = "measurements"', "steps = 5"
        ).replace("amount = 20", "")
        with pytest.raises(ConfigError, match="budget"):
            load_config(write(tmp_path, text))

    def test_type_error_reports_path(self, tmp_path):
        text = MINIMAL.replace("amount = 20", 'amount = "many"')
        with pytest.raises(ConfigError, match="budget.amount"):
            load_config(write(tmp_path, text))

    def test_bad_prior_interval(self, tmp_path):
        text = MINIMAL.replace("omega = [0.0, 1.0]", "omega = [1.0, 0.0]")
        with pytest.raises(ConfigError, match="prior.omega"):
            load_config(write(tmp_path, text))

    def test_weights_must_match_prior(self, tmp_path):
        text = MINIMAL.replace("weights = [1.0]", "weights = [1.0, 2.0]")
        with pytest.raises(ConfigError, match="loss.weights"):
            load_config(write(tmp_path, text))

    def test_unknown_model(self, tmp_path):
        text = MINIMAL.replace('name = "nv_dc"', 'name = "nv_xy"')
        with pytest.raises(ConfigError, match="model.name"):
            load_config(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")


class TestSnapshot:
    def test_round_trip_identity(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        snap = tmp_path / "config.json"
        save_snapshot(cfg, snap)
        assert load_config(snap) == cfg

    def test_hash_stable_and_sensitive(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        again = load_config(write(tmp_path, MINIMAL, "copy.toml"))
        assert config_hash(cfg) == config_hash(again)
        other = load_config(write(tmp_path, MINIMAL.replace("seed = 7",
                                                            "seed = 8"),
                                  "other.toml"))
        assert config_hash(other) != config_hash(cfg)


class TestBuilders:
    def test_model_space_budget(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        model = build_model(cfg)
        assert isinstance(model, DcModel)
        assert model.inv_t2 == 0.0
        space = build_space(cfg)
        assert space.names == ("omega",)
        budget = build_budget(cfg)
        assert budget.kind == "measurements"
        assert budget.amount == 20.0

    def test_dec_model_beta_default_means_estimated(self, tmp_path):
        text = MINIMAL.replace('name = "nv_dc"', 'name = "nv_dec"').replace(
            "omega = [0.0, 1.0]",
            "inv_t = [0.01, 0.1]\nbeta = [1.5, 4.0]",
        ).replace("weights = [1.0]", "weights = [1.0, 0.00125]")
        cfg = load_config(write(tmp_path, text))
        model = build_model(cfg)
        assert isinstance(model, DecModel)
        assert model.beta is None
        assert model.param_names == ("inv_t", "beta")

    def test_loss_spec(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        spec = build_loss_spec(cfg)
        assert spec.weight_matrix.shape == (1, 1)
        assert spec.prior_eta_term == pytest.approx(1.0 / 12.0)

    def test_resolve_h_auto_measurement(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        # ceil(2^sqrt(20)) = 23 us
        assert resolve_h(cfg) == pytest.approx(23.0)

    def test_resolve_h_explicit(self, tmp_path):
        text = MINIMAL + '\n[agent]\nh = 40.0\n'
        cfg = load_config(write(tmp_path, text))
        assert resolve_h(cfg) == pytest.approx(40.0)

    def test_resolve_h_time_budget_with_t2(self, tmp_path):
        text = MINIMAL.replace('kind = "measurements"',
                               'kind = "total_time"').replace(
            "amount = 20", "amount = 100"
        ) + "\n"
        text = text.replace('name = "nv_dc"', 'name = "nv_dc"\ninv_t2 = 0.1')
        cfg = load_config(write(tmp_path, text))
        # Tmax/20 = 5 us floored at T2 = 10 us
        assert resolve_h(cfg) == pytest.approx(10.0)

    def test_train_settings(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        settings = build_train_settings(cfg, out_dir=tmp_path / "run", seed_override=3)
        assert settings.seed == 3
        assert settings.m_max == 20
        assert settings.n_particles == 480
        assert settings.loss_kind == "log"
