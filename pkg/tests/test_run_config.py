import re
from dataclasses import replace

import pytest

from errors import ConfigError
from models import CompetitionParams, ConstantFamily, CosinePerturbedEquilibrium, PredPreyParams
from run_config import (
    config_digest,
    load_config_file,
    load_settings,
    parse_config,
    serialize_config,
)

BASE = """\
[model]
model = competition

[grid]
n = 16

[time]
t_end = 0.1

[ic]
family = constant
value = 0.5
"""


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.variant == "indirect"
    assert cfg.params == CompetitionParams()
    assert cfg.grid.n == (16,)
    assert cfg.grid.length == (1.0,)
    assert cfg.time.t_end == 0.1
    assert cfg.time.fixed_dt is None
    assert cfg.ic == ConstantFamily(0.5)
    assert cfg.compatibility
    assert cfg.sweep is None
    assert not cfg.mms.enabled


def test_scientific_notation_and_lists():
    text = BASE.replace("t_end = 0.1", "t_end = 0.1\ndt = 1e-3")
    cfg = parse_config(text + "[sweep]\neps = [1e-1, 1e-2, 1e-3]\n")
    assert cfg.time.fixed_dt == 1e-3
    assert cfg.sweep.eps == (0.1, 0.01, 0.001)
    assert cfg.variant == "sweep"


def test_parameter_invariant_reports_section_line():
    with pytest.raises(ConfigError, match=r"line 13: \[params\] eps must lie in \(0,1\]"):
        parse_config(BASE + "[params]\neps = 2\n")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"line 5: unknown key 'cells' in \[grid\]"):
        parse_config(BASE.replace("n = 16", "cells = 16"))


def test_type_mismatch_reports_line_and_text():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(BASE.replace("n = 16", "n = sixteen"))
    assert str(excinfo.value) == (
        "line 5: [grid] n: expected an integer or a list of integers, got 'sixteen'"
    )
    with pytest.raises(ConfigError, match="expected a real number"):
        parse_config(BASE + "[params]\nchi = true\n")


@pytest.mark.parametrize(
    ("text", "message"),
    [
        (BASE.replace("n = 16", "n = 2"), "n must be >= 3"),
        (BASE.replace("[model]", "[modle]"), "unknown section"),
        (BASE.replace("n = 16", "n = 16\nn = 32"), "given twice"),
        ("model = competition\n" + BASE, "before any"),
        (BASE.replace("t_end = 0.1", "dt_max = 0.1"), "t_end is required"),
        (BASE.replace("model = competition", "model = sir"), "model must be one of"),
        (BASE.replace("family = constant", "family = step"), "family must be one of"),
        (BASE + "width = 0.1\n", "width does not apply to constant"),
        (BASE + "w_init = -1.0\n", "w_init must be nonnegative"),
        (BASE.replace("model = competition", "model = competition\nvariant = sweep"), "[sweep]"),
        (BASE + "[sweep]\neps = [0.5, 2.0, 0.1]\n", "eps must lie in (0,1]"),
        (BASE + "[sweep]\neps = [0.5, 0.1, 0.01]\nworkers = 0\n", "workers must be >= 1"),
        (BASE + "[params]\nmu1_prime = 0.5\n", "mu1_prime is not a competition parameter"),
        (BASE + "[mms]\nlevels = 1\n", "levels >= 2"),
        (BASE.replace("n = 16", "dim = 3\nn = 16"), "dim must be 1 or 2"),
        (BASE.replace("n = 16", "dim = 2\nn = [16, 8, 4]"), "need 2 entries"),
        (BASE + "[time]\n", "appears twice"),
        (BASE + "oops\n", "expected 'key = value'"),
    ],
)
def test_rejections(text, message):
    with pytest.raises(ConfigError, match=re.escape(message)):
        parse_config(text)


def test_predprey_response():
    text = BASE.replace("competition", "predprey") + (
        "[params]\nresponse = holling3\nc = 2.0\nm = 4.0\nmu1 = 0.1\n"
    )
    cfg = parse_config(text)
    assert isinstance(cfg.params, PredPreyParams)
    assert cfg.params.response.kind == "holling3"
    assert cfg.params.response.consumption_bound == pytest.approx(0.5)
    assert cfg.params.mu1 == 0.1
    with pytest.raises(ConfigError, match="holling4"):
        parse_config(text.replace("holling3", "holling4"))


def test_dimensional_section(config_dir):
    cfg = load_config_file(config_dir / "dimensional_competition.cfg")
    assert cfg.params == CompetitionParams()
    assert cfg.dimensional.lam == 1.0
    assert cfg.ic == CosinePerturbedEquilibrium(amplitude=0.1)
    text = (config_dir / "dimensional_competition.cfg").read_text()
    with pytest.raises(ConfigError, match="conflicts with"):
        parse_config(text + "[params]\nchi = 1.0\n")
    with pytest.raises(ConfigError, match="competition model only"):
        parse_config(text.replace("model = competition", "model = predprey"))
    with pytest.raises(ConfigError, match="alpha == lambda"):
        parse_config(text.replace("lambda = 1.0", "lambda = 2.0"))


def test_two_dimensional_grid(config_dir):
    cfg = load_config_file(config_dir / "predprey_2d.cfg")
    assert cfg.grid.n == (64, 48)
    assert cfg.grid.length == (1.0, 0.75)
    assert cfg.ic.center == (0.5, 0.375)
    assert cfg.time.snapshot_interval == 0.05


@pytest.mark.parametrize(
    "name",
    [
        "competition_run.cfg",
        "competition_limit.cfg",
        "competition_sweep.cfg",
        "predprey_sweep.cfg",
        "decoupled_sweep.cfg",
        "dimensional_competition.cfg",
        "predprey_2d.cfg",
        "mms_competition.cfg",
        "mms_predprey.cfg",
    ],
)
def test_canonical_text_reparses_to_same_config(config_dir, name):
    cfg = load_config_file(config_dir / name)
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


@pytest.mark.parametrize(
    "directory", ["2024", "out#1", "true", 'runs/"quoted" #2', "C:\\runs\\eps sweep", "1e-3"]
)
def test_output_directory_survives_canonical_text(directory):
    cfg = replace(parse_config(BASE), output=directory)
    text = serialize_config(cfg)
    assert parse_config(text).output == directory
    assert parse_config(text) == cfg


@pytest.mark.parametrize(
    ("line", "directory"),
    [
        ('directory = "2024"  # year', "2024"),
        ("directory = 'out#1'", "out#1"),
        ("directory = results # plain", "results"),
    ],
)
def test_output_directory_quoting(line, directory):
    assert parse_config(BASE + f"\n[output]\n{line}\n").output == directory


def test_digest():
    cfg = parse_config(BASE)
    digest = config_digest(cfg)
    assert re.fullmatch(r"[0-9a-f]{16}", digest)
    commented = "# a comment\n" + BASE.replace("n = 16", "n = 16   # cells")
    assert config_digest(parse_config(commented)) == digest
    assert config_digest(parse_config(BASE.replace("n = 16", "n = 17"))) != digest


def test_settings(tmp_path):
    assert load_settings(tmp_path / "missing.yaml") == {}
    settings = load_settings()
    assert settings["output"]["directory"] == "results"
    assert "dpi" in settings["plot"]
    path = tmp_path / "settings.yaml"
    path.write_text("logging:\n  level: DEBUG\n")
    assert load_settings(path) == {"logging": {"level": "DEBUG"}}
