import json

import numpy as np
import pytest

from improx.core import ConfigurationError
from improx.problems import (
    Distribution,
    ScenarioParseError,
    ScenarioSet,
    load_scenarios,
    sample_scenarios,
    save_scenarios,
    standard_normals,
)

DISTS = (Distribution("a", 1.0, 2.0), Distribution("b", 0.0, 0.5, "abs_normal"))


def test_standard_normals_follow_the_documented_transform():
    raw = np.random.PCG64(7).random_raw(4)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    r = np.sqrt(-2 * np.log(u[0::2]))
    expected = np.empty(4)
    expected[0::2], expected[1::2] = r * np.cos(2 * np.pi * u[1::2]), r * np.sin(2 * np.pi * u[1::2])
    np.testing.assert_array_equal(standard_normals(7, 4), expected)
    np.testing.assert_array_equal(standard_normals(7, 3), expected[:3])


def test_clt_mean_bound():
    N = 100_000
    z = standard_normals(2024, N)
    assert abs(z.mean()) <= 4 / np.sqrt(N)
    assert abs(z.std() - 1.0) <= 0.01


def test_sampling_is_deterministic_and_row_major():
    a, b = sample_scenarios(DISTS, 50, 3), sample_scenarios(DISTS, 50, 3)
    assert a == b and a.N == 50 and a.n_vars == 2
    z = standard_normals(3, 100).reshape(50, 2)
    np.testing.assert_array_equal(a.values[:, 0], 1.0 + 2.0 * z[:, 0])
    np.testing.assert_array_equal(a.values[:, 1], np.abs(0.5 * z[:, 1]))
    assert a != sample_scenarios(DISTS, 50, 4)
    assert np.all(a.column("b") >= 0)


@pytest.mark.parametrize("storage", ["inline", "binary"])
def test_round_trip_and_identical_bytes(tmp_path, storage):
    S = sample_scenarios(DISTS, 200, 11)
    p1 = save_scenarios(S, tmp_path / "one.json", storage)
    p2 = save_scenarios(sample_scenarios(DISTS, 200, 11), tmp_path / "two.json", storage)
    T = load_scenarios(p1)
    assert T == S and T.values.tobytes() == S.values.tobytes() and T.uniform
    if storage == "binary":
        assert (tmp_path / "one.json.bin").read_bytes() == (tmp_path / "two.json.bin").read_bytes()
        head = json.loads(p1.read_text())
        assert head["data_file"] == "one.json.bin"
    else:
        assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_with_probabilities(tmp_path):
    p = np.array([0.1, 0.2, 0.3, 0.4])
    S = ScenarioSet(np.arange(8.0).reshape(4, 2) / 3.0, p, seed=None, distributions=DISTS)
    T = load_scenarios(save_scenarios(S, tmp_path / "s.json"))
    assert T == S and not T.uniform


def test_parse_error_reports_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "improx-scenarios",\n "N": 3,, }\n')
    with pytest.raises(ScenarioParseError) as err:
        load_scenarios(bad)
    assert err.value.line == 2 and err.value.column is not None and err.value.offset is not None
    assert "line 2" in str(err.value)


def test_structural_errors(tmp_path):
    S = sample_scenarios(DISTS, 5, 1)
    path = save_scenarios(S, tmp_path / "s.json")
    head = json.loads(path.read_text())
    head["N"] = 6
    path.write_text(json.dumps(head))
    with pytest.raises(ScenarioParseError, match="shape"):
        load_scenarios(path)
    path = save_scenarios(S, tmp_path / "b.json", "binary")
    side = tmp_path / "b.json.bin"
    side.write_bytes(side.read_bytes()[:-3])
    with pytest.raises(ScenarioParseError) as err:
        load_scenarios(path)
    assert err.value.offset == 8 * 10 - 3
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ScenarioParseError):
        load_scenarios(tmp_path / "x.json")


def test_validation():
    with pytest.raises(ConfigurationError):
        ScenarioSet(np.zeros((2, 1)), [0.7, 0.7])
    with pytest.raises(ConfigurationError):
        Distribution("x", 0.0, -1.0)
    with pytest.raises(ConfigurationError):
        Distribution("x", kind="uniform")
    with pytest.raises(ConfigurationError):
        sample_scenarios(DISTS, 0, 1)
    with pytest.raises(ConfigurationError):
        standard_normals(-1, 3)
    assert Distribution.from_param("x", 0.0, 9.0, "var").sd == 3.0
    with pytest.raises(ConfigurationError):
        save_scenarios(sample_scenarios(DISTS, 2, 1), "unused.json", storage="csv")
