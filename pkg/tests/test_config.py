import pytest
from pydantic import ValidationError

from polynormer.config import (Activation, ModelConfig, Metric, RunConfig, Scheme, TrainConfig, Variant,
                               load_run_config, parse_key_values, parse_run_config)
from polynormer.errors import ConfigError

FULL_CONFIG = """
# sbm run
hidden_dim=32
local_layers=2
global_layers=1
heads=4
main_epochs=50
warmup_epochs=10
learning_rate=0.01
activation=ReLU
variant=v2
metric=accuracy
seed=11
"""

pytestmark = pytest.mark.unit


def test_parse_full_config():
    run = parse_run_config(FULL_CONFIG)
    assert run.hidden_dim == 32
    assert run.activation is Activation.RELU
    assert run.variant is Variant.V2
    assert run.scheme is Scheme.LOCAL_TO_GLOBAL
    model = run.model_config_for(input_dim=16, num_classes=4)
    assert model.head_dim == 8
    train = run.train_config()
    assert train.seed == 11
    assert train.warmup_epochs == 10


def test_seed_override_wins():
    assert parse_run_config(FULL_CONFIG).train_config(seed=5).seed == 5


def test_missing_required_key_is_named():
    text = FULL_CONFIG.replace("hidden_dim=32\n", "")
    run = parse_run_config(text)
    with pytest.raises(ConfigError) as exc:
        run.train_config()
    assert exc.value.key == "hidden_dim"
    assert "hidden_dim" in str(exc.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_run_config(FULL_CONFIG + "momentum=0.9\n")
    assert exc.value.key == "momentum"


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        parse_key_values("heads=1\nheads=2\n")


def test_line_without_equals_rejected():
    with pytest.raises(ConfigError):
        parse_key_values("heads 1\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_run_config("heads=zero\n")
    assert exc.value.key == "heads"


def test_heads_must_divide_width():
    run = parse_run_config(FULL_CONFIG.replace("heads=4", "heads=5"))
    with pytest.raises(ConfigError):
        run.model_config_for(input_dim=16, num_classes=4)


def test_model_config_is_frozen():
    config = ModelConfig(input_dim=3, hidden_dim=4, local_layers=1, num_classes=2)
    with pytest.raises(ValidationError):
        config.hidden_dim = 8


def test_model_config_text_round_trips():
    config = ModelConfig(input_dim=3, hidden_dim=4, local_layers=1, global_layers=2, num_classes=2,
                         variant=Variant.V2, dropout=0.25)
    pairs = parse_key_values(config.to_text())
    assert ModelConfig(**pairs) == config


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.batch_parts == 1
    assert cfg.metric is Metric.ACCURACY


def test_load_run_config_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(FULL_CONFIG)
    assert load_run_config(path) == parse_run_config(FULL_CONFIG)


def test_run_config_forbids_extra_fields():
    with pytest.raises(ValidationError):
        RunConfig(bogus=1)
