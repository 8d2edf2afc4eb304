import pytest

from salguide.config import KEYS, RESOLVED_NAME, RunConfig, coerce, parse_file, parse_text, resolve
from salguide.errors import ConfigError
from salguide.scores import KIND_NAMES


def test_defaults_follow_library_defaults():
    cfg = RunConfig()
    assert cfg.train_config().epochs == 60 and cfg.train_config().learning_rate == 2e-4
    assert cfg.synth_config().n_samples == 1200
    assert cfg.kinds == tuple(KIND_NAMES) and cfg.seeds == (0, 1, 2)


def test_parse_grammar():
    text = """
    # comment line
    epochs = 3          # trailing comment
    alpha=0.5
    run_id = "with # hash"
    stop_weights = true
    alphas = 0.25, 1.0
    kinds = pure_bce,logit_sqr
    """
    vals = parse_text(text)
    assert vals == {"epochs": 3, "alpha": 0.5, "run_id": "with # hash", "stop_weights": True,
                    "alphas": (0.25, 1.0), "kinds": ("pure_bce", "logit_sqr")}


@pytest.mark.parametrize("text, where", [("epoch = 3", ":1:"), ("\nalpha = high", ":2:"),
                                         ("just words", ":1:"), ("seeds = ,", ":1:")])
def test_parse_errors_name_the_line(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_text(text, "run.cfg")


def test_unknown_flag_key():
    with pytest.raises(ConfigError):
        coerce("learning_rat", "1")


def test_bad_kind_in_config():
    with pytest.raises(ConfigError, match="valid kinds"):
        resolve(overrides={"score_kind": "logit_cube"}, environ={})


def test_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("seed = 3\nepochs = 4\n")
    assert resolve(str(f), environ={}).seed == 3
    assert resolve(str(f), environ={"SALGUIDE_SEED": "9"}).seed == 9
    cfg = resolve(str(f), {"seed": "11", "epochs": None}, environ={"SALGUIDE_SEED": "9"})
    assert cfg.seed == 11 and cfg.epochs == 4


def test_dump_round_trip(tmp_path):
    cfg = RunConfig(run_id="a b", alphas=(0.1, 0.7), kinds=("prob_sqr",), stop_weights=True,
                    learning_rate=1e-3)
    path = cfg.write_resolved(tmp_path)
    assert path.name == RESOLVED_NAME
    assert RunConfig(**parse_file(path)) == cfg
    assert [line.split(" = ")[0] for line in path.read_text().splitlines()] == list(KEYS)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        resolve("/nonexistent/run.cfg", environ={})
