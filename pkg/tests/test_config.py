import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlshelm.config import RunConfig, load_config, parse_config
from vlshelm.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "c.json"
    path.write_text(text)
    return path


def test_defaults_validate():
    cfg = load_config(None)
    assert cfg.k_values == [1.0, 1.5, 2.0]
    assert cfg.inversion.p == 4.0


def test_partial_override(tmp_path):
    cfg = load_config(write(tmp_path, '{"domain": {"nx": 8}, "solver": {"tol": 1e-12}}'))
    assert cfg.domain.nx == 8 and cfg.domain.ny == 32
    assert cfg.solver.tol == 1e-12


def test_unknown_key_with_line(tmp_path):
    text = '{\n  "domain": {\n    "nx": 8,\n    "nz": 3\n  }\n}\n'
    with pytest.raises(ConfigError, match=r"domain\.nz: unknown key \(line 4\)"):
        load_config(write(tmp_path, text))


def test_bad_type_with_line(tmp_path):
    with pytest.raises(ConfigError, match=r"order: bad value 'two' \(line 2\)"):
        load_config(write(tmp_path, '{\n "order": "two"\n}'))


def test_invalid_json_position(tmp_path):
    with pytest.raises(ConfigError, match="line 2, column"):
        load_config(write(tmp_path, '{\n "order": ,\n}'))


@pytest.mark.parametrize(
    "data,field",
    [
        ({"k_values": [2.0, 1.0]}, "k_values"),
        ({"order": 3}, "order"),
        ({"inversion": {"p": 2.0}}, "inversion.p"),
        ({"inversion": {"kind": "lbfgs"}}, "inversion.kind"),
        ({"q_true": {"kind": "file"}}, "q_true.path"),
        ({"domain": {"n_boundary": 4}}, "domain.n_boundary"),
        ({"threads": 0}, "threads"),
    ],
)
def test_semantic_errors(data, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(data)


def test_resolved_round_trip():
    cfg = parse_config({"domain": {"nx": 4}, "inversion": {"kind": "rom"}})
    again = parse_config(json.loads(cfg.to_json()))
    assert again == cfg


def test_int_promoted_for_float_fields():
    cfg = parse_config({"solver": {"tol": 1}})
    assert isinstance(cfg.solver.tol, float)


@settings(max_examples=40, deadline=None)
@given(key=st.text(min_size=1, max_size=12).filter(lambda k: k not in RunConfig.__dataclass_fields__))
def test_any_unknown_top_level_key_rejected(key):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config({key: 1})
