from pathlib import Path

import pytest

from hnfcavity.config import CaseConfig, ConfigError, format_config, load_config, parse_config
from hnfcavity.mesh import Shape

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "hshape_validation.cfg"

TEXT = """\
# a comment
[geometry]
shape = lshape
arm_thickness = 0.5

[mesh]
n = 40

[physics]
pr = 6.2
ra = 1e4
phi = 0.0033

[solver]
tolerance = 1e-8
continuation = 1e3, 1e4

[sweep]
ra = 1e3 1e4 1e5
"""


def test_parse_full_text():
    cfg = parse_config(TEXT, environ={})
    assert cfg.geometry.shape is Shape.LSHAPE
    assert cfg.geometry.arm_thickness == 0.5
    assert (cfg.n, cfg.pr, cfg.ra, cfg.phi) == (40, 6.2, 1e4, 0.0033)
    assert cfg.solver.tolerance == 1e-8
    assert cfg.solver.continuation == [1e3, 1e4]
    assert cfg.sweep == {"ra": [1e3, 1e4, 1e5]}


def test_inline_comments():
    cfg = parse_config("[physics]\nra = 1e4   # strong flow\nphi = 0.01 ; one percent\n", environ={})
    assert cfg.ra == 1e4 and cfg.phi == 0.01


def test_defaults_from_empty_text():
    assert parse_config("", environ={}) == CaseConfig()


def test_environment_overrides_file_values():
    env = {"HNFCAVITY_PHYSICS_RA": "2e4", "HNFCAVITY_MESH_N": "16", "OTHER_VAR": "x"}
    cfg = parse_config(TEXT, environ=env)
    assert cfg.ra == 2e4 and cfg.n == 16 and cfg.pr == 6.2


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        parse_config("", environ={"HNFCAVITY_PHYSICS_GRAVITY": "1"})


@pytest.mark.parametrize("text, line", [
    ("[physics]\npr = 1\nra = lots\n", 3),
    ("[mesh]\nn = 8\n[nonsense]\nx = 1\n", 3),
    ("[physics]\n\nviscosity = 2\n", 3),
    ("pr = 1\n", 1),
    ("[physics]\npr = -1\n", 2),
    ("[geometry]\nshape = circle\n", 2),
    ("[mesh]\nn = 1\n", None),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text, source="case.cfg", environ={})
    if line is not None:
        assert err.value.line == line
        assert f"case.cfg:{line}:" in str(err.value)


def test_round_trip():
    cfg = parse_config(TEXT + "\n[gridstudy]\ngrids = 20, 40\n", environ={})
    again = parse_config(format_config(cfg), environ={})
    assert again == cfg
    assert format_config(again) == format_config(cfg)


def test_label_is_deterministic():
    cfg = parse_config(TEXT, environ={})
    assert cfg.label() == "lshape_n40_pr6.2_ra10000_phi0.0033"
    assert cfg.replace(heater_extent=0.5).label().endswith("_heat0.5")


def test_replace_routes_geometry_keys():
    cfg = CaseConfig().replace(shape=Shape.HSHAPE, ra=10.0)
    assert cfg.geometry.shape is Shape.HSHAPE and cfg.ra == 10.0


def test_shipped_example_loads():
    cfg = load_config(EXAMPLE, environ={})
    assert cfg.geometry.shape is Shape.HSHAPE and cfg.snap and cfg.n == 64


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg", environ={})
