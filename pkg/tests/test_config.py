import pytest

from shearlab.config import (
    ConfigSyntaxError,
    InvariantError,
    TypeMismatchError,
    UnknownKeyError,
    emit_config,
    parse_config,
)
from shearlab.experiments import shipped_config_text, shipped_configs

MINIMAL = """\
[experiment]
engine = "spectral-scan"
seed = 1

[profile]
preset = "sin"

[grids]
nu_grid = [1e-3, 1e-4]
k_grid = [1, 2]
nu_ref = 1e-4
"""


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.theta == 0.5 and cfg.n_y == 128 and cfg.k_ref == 1
    assert cfg.tol("spectral_slope") == 0.1


def test_misspelled_key_named_with_line():
    with pytest.raises(UnknownKeyError, match="nu_gird") as err:
        parse_config(MINIMAL.replace("nu_grid", "nu_gird"))
    assert err.value.line == 9


def test_unknown_section():
    with pytest.raises(UnknownKeyError):
        parse_config(MINIMAL + "\n[extra]\nx = 1\n")


def test_type_mismatch():
    with pytest.raises(TypeMismatchError) as err:
        parse_config(MINIMAL.replace("seed = 1", 'seed = "one"'))
    assert err.value.line == 3


def test_syntax_error():
    with pytest.raises(ConfigSyntaxError):
        parse_config("[experiment\n")


@pytest.mark.parametrize("edit", [
    ("nu_grid = [1e-3, 1e-4]", "nu_grid = []"),
    ("nu_grid = [1e-3, 1e-4]", "nu_grid = [2.0]"),
    ("nu_grid = [1e-3, 1e-4]", "nu_grid = [-1e-3]"),
    ("k_grid = [1, 2]", "k_grid = [0, 2]"),
    ("seed = 1\n", ""),
    ('engine = "spectral-scan"', 'engine = "magic"'),
    ('preset = "sin"', 'preset = "nope"'),
])
def test_invariant_violations(edit):
    with pytest.raises((InvariantError, ValueError)):
        parse_config(MINIMAL.replace(*edit))


def test_round_trip():
    cfg = parse_config(MINIMAL)
    again = parse_config(emit_config(cfg))
    assert again == cfg
    assert again.digest() == cfg.digest()


@pytest.mark.parametrize("name", shipped_configs())
def test_shipped_configs_parse_and_round_trip(name):
    cfg = parse_config(shipped_config_text(name))
    assert parse_config(emit_config(cfg)) == cfg


def test_fk_requires_paired_points():
    text = shipped_config_text("fk-sin").replace("x_grid = [0.0, 0.7, 1.9, 3.3, 5.1]", "x_grid = [0.0]")
    with pytest.raises(InvariantError):
        parse_config(text)
