import pytest

from stablegnn.config import DEFAULTS, Config, parse_hidden
from stablegnn.model import GnnConfig
from stablegnn.trainer import ConfigError, TrainerConfig


def test_defaults_match_training_protocol():
    cfg = Config()
    t = cfg.trainer_config()
    assert t == TrainerConfig()
    assert (t.epochs, t.batch_size, t.lr, t.beta1, t.beta2) == (20, 5, 0.005, 0.9, 0.999)
    assert (t.eta_d, t.stability_c, t.epsilon, t.m_perturbations) == (0.05, 0.25, 0.2, 3)
    assert cfg.model_config() == GnnConfig((1, 64, 1), taps=5)
    assert cfg.architectures() == ((64,), (64, 32))
    assert cfg.magnitudes() == (0.0, 0.0001, 0.001, 0.01, 0.1, 0.2, 0.5)
    assert cfg.perturbation_model().epsilon == 0.2


def test_from_text_with_comments_and_coercion():
    cfg = Config.from_text("""
        # a comment
        trainer.epochs = 3   # trailing
        data.top_movies = 400
        graph.keep_negative = true
        model.hidden = 8,4
        trainer.lambda_max = none
    """)
    assert cfg["trainer.epochs"] == 3
    assert cfg["data.top_movies"] == 400
    assert cfg["graph.keep_negative"] is True
    assert cfg.hidden() == (8, 4)
    assert cfg["trainer.lambda_max"] is None


@pytest.mark.parametrize("text", ["bogus.key = 1", "trainer.epochs = many", "no equals sign",
                                  "graph.keep_negative = maybe"])
def test_bad_text(text):
    with pytest.raises(ConfigError):
        Config.from_text(text)


def test_overrides_and_roundtrip(tmp_path):
    cfg = Config()
    cfg.apply_overrides(["trainer.seed=5", "perturbation.epsilon = 0.3"])
    assert cfg["trainer.seed"] == 5
    assert cfg.perturbation_model().epsilon == 0.3
    path = tmp_path / "c.txt"
    path.write_text(cfg.to_text())
    again = Config.load(path)
    assert again.values == cfg.values
    assert again.digest() == cfg.digest() != Config().digest()
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["trainer.seed"])


def test_every_default_survives_text_roundtrip():
    cfg = Config.from_text(Config().to_text())
    assert cfg.values == DEFAULTS


def test_invalid_values_surface_as_config_errors():
    with pytest.raises(ConfigError):
        Config({"trainer.epochs": 0}).trainer_config()
    with pytest.raises(ConfigError):
        Config({"perturbation.kind": "weird"}).perturbation_model()
    with pytest.raises(ConfigError):
        Config({"model.activation": "tanh"}).model_config()
    with pytest.raises(ConfigError):
        Config({"data.target_movie": "star wars"}).target_movie()
    with pytest.raises(ConfigError):
        parse_hidden("8,x")
    assert Config({"data.target_movie": "50"}).target_movie() == 50
