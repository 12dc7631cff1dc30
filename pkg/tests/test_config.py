"""Config parsing, validation, and round-trip rendering."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from prestrain_lab.config import (
    RunConfig,
    apply_assignments,
    config_as_dict,
    parse_assignments,
    parse_config,
    render_config,
    validate,
)
from prestrain_lab.errors import ParseError, ValidationError


def test_defaults():
    c = RunConfig()
    assert c.grid.n == 32
    assert c.grid.L == pytest.approx(2.0 * math.pi)
    assert c.grid.dealias_fraction == pytest.approx(2.0 / 3.0)
    assert c.model.base == "W01"
    assert c.model.q == 2.0
    assert c.model.composition == "right"
    assert c.model.quadratic_term is True
    assert c.scheme.dt == 1e-3
    assert c.scheme.t_end == 1.0
    assert c.scheme.eps == 0.0
    assert c.scheme.n_galerkin is None
    assert c.quasi.max_iter == 50
    assert c.data.seed == 0
    assert c.data.amplitude == 1e-2
    assert c.data.band == 2
    assert c.data.mean_zero_phi is True
    assert c.io.stride == 10
    assert c.io.heavy_stride == 10
    assert validate(c) == []


def test_default_prestrain_generator_is_tenth_of_identity():
    c = RunConfig()
    np.testing.assert_allclose(c.m_b_matrix(), 0.1 * np.eye(3), rtol=0.0, atol=0.0)


def test_parse_assignments_basic():
    pairs = parse_assignments("grid.n = 16\n# comment\n\nscheme.dt=0.5  # tail\n")
    assert pairs == {"grid.n": "16", "scheme.dt": "0.5"}


def test_parse_assignments_rejects_bad_lines():
    with pytest.raises(ParseError, match="expected 'key = value'"):
        parse_assignments("just words\n")
    with pytest.raises(ParseError, match="empty key"):
        parse_assignments("= 3\n")
    with pytest.raises(ParseError, match="duplicate key"):
        parse_assignments("grid.n = 8\ngrid.n = 16\n")


def test_parse_assignments_reports_line_numbers():
    with pytest.raises(ParseError, match=":3:"):
        parse_assignments("grid.n = 8\n\nbroken line\n", source="f.txt")


def test_apply_assignments_folds_sections():
    c, violations = apply_assignments(
        RunConfig(), {"grid.n": "16", "scheme.eps": "1e-2", "io.stride": "5"}
    )
    assert violations == []
    assert (c.grid.n, c.scheme.eps, c.io.stride) == (16, 1e-2, 5)
    # untouched sections keep defaults
    assert c.data == RunConfig().data


def test_apply_assignments_collects_all_problems():
    _, violations = apply_assignments(
        RunConfig(), {"grid.m": "1", "scheme.dt": "fast", "data.band": "3"}
    )
    assert len(violations) == 2
    assert any("unknown key" in v for v in violations)
    assert any("scheme.dt" in v for v in violations)


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("0.2", 0.2 * np.eye(3)),
        ("0.1, 0.2, 0.3", np.diag([0.1, 0.2, 0.3])),
        (
            "1 2 3 2 5 6 3 6 9",
            np.array([[1.0, 2, 3], [2, 5, 6], [3, 6, 9]]),
        ),
    ],
)
def test_prestrain_generator_forms(raw, expected):
    c, violations = apply_assignments(RunConfig(), {"model.M_B": raw})
    assert violations == []
    np.testing.assert_allclose(c.m_b_matrix(), expected, rtol=0.0, atol=0.0)


def test_prestrain_generator_wrong_count():
    _, violations = apply_assignments(RunConfig(), {"model.M_B": "1 2"})
    assert violations and "model.M_B" in violations[0]


def test_validate_collects_everything_at_once():
    c, _ = apply_assignments(
        RunConfig(),
        {"grid.n": "7", "scheme.dt": "-1", "model.q": "1.0", "io.stride": "0"},
    )
    violations = validate(c)
    joined = "\n".join(violations)
    assert len(violations) >= 4
    for key in ("grid.n", "scheme.dt", "model.q", "io.stride"):
        assert key in joined


def test_validate_band_against_retained_modes():
    # n=8 at 2/3 keeps modes through floor(8/3) = 2
    c, _ = apply_assignments(RunConfig(), {"grid.n": "8", "data.band": "3"})
    violations = validate(c)
    assert any("retained band 2" in v for v in violations)
    c, _ = apply_assignments(RunConfig(), {"grid.n": "8", "data.band": "2"})
    assert validate(c) == []


def test_validate_asymmetric_generator():
    c = RunConfig()
    c = replace(c, model=replace(c.model, m_b=((0.0, 0.1, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))))
    assert any("symmetric" in v for v in validate(c))


def test_case_study_exponent_exemption():
    c, _ = apply_assignments(
        RunConfig(),
        {"model.base": "CaseStudy", "model.q": "1.0", "model.composition": "none"},
    )
    assert validate(c) == []
    c, _ = apply_assignments(RunConfig(), {"model.q": "1.0"})
    assert any("model.q" in v for v in validate(c))


def test_quasistatic_verb_requires_mean_zero():
    c, _ = apply_assignments(RunConfig(), {"data.mean_zero_phi": "false"})
    assert validate(c) == []
    assert any("mean_zero_phi" in v for v in validate(c, verb="quasistatic"))


def test_render_round_trips_defaults_and_custom():
    for overrides in (
        {},
        {
            "grid.n": "16",
            "model.base": "W02",
            "model.q": "3.5",
            "model.M_B": "0.1 0.2 0.3",
            "scheme.n_galerkin": "5",
            "scheme.a_split": "2.25",
            "data.mean_zero_phi": "false",
        },
    ):
        c, violations = apply_assignments(RunConfig(), overrides)
        assert violations == []
        text = render_config(c)
        back, violations = apply_assignments(RunConfig(), parse_assignments(text))
        assert violations == []
        assert back == c


def test_render_contains_every_key_once():
    text = render_config(RunConfig())
    keys = [line.split("=")[0].strip() for line in text.strip().splitlines()]
    assert len(keys) == len(set(keys)) == 27
    assert "model.M_B" in keys and "scheme.n_galerkin" in keys


def test_parse_config_file_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("grid.n = 16\nscheme.dt = 1e-2\n")
    c = parse_config(path, overrides=("scheme.dt=5e-3", "data.seed=3"))
    assert (c.grid.n, c.scheme.dt, c.data.seed) == (16, 5e-3, 3)


def test_parse_config_missing_file():
    with pytest.raises(ParseError, match="cannot read config"):
        parse_config("/nonexistent/nowhere.cfg")


def test_parse_config_raises_validation_error_with_full_list(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("grid.n = 7\nscheme.dt = -2\n")
    with pytest.raises(ValidationError) as err:
        parse_config(path)
    assert len(err.value.violations) == 2


def test_parse_config_bad_override_shape(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("grid.n = 16\n")
    with pytest.raises(ParseError, match="expected key=value"):
        parse_config(path, overrides=("grid.n16",))


def test_config_as_dict_is_json_ready():
    d = config_as_dict(RunConfig())
    text = json.dumps(d, sort_keys=True)
    assert '"n": 32' in text
    assert d["model"]["M_B"] == [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]]
    assert d["scheme"]["n_galerkin"] is None
