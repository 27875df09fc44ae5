import json

import numpy as np
import pytest

from collinear_nbody.core import SystemSpec
from collinear_nbody.errors import ConfigError, NonPositiveMass, SolutionFormatError
from collinear_nbody.fileio import (
    SolutionFile,
    dumps,
    load_config,
    load_solution,
    parse_config,
    save_solution,
    solution_from_dict,
    solution_to_dict,
    write_atomic,
)
from collinear_nbody.integrator import IntegratorOptions
from collinear_nbody.minimizer import OptimizerOptions

BASE = """
[system]
n = 3
masses = 1, 2, 3
T = 2
sigma = 2, 3, 1
symmetric = false

[optimizer]
mesh_schedule = 16, 32
tolerances = gradient=1e-9, decrease=1e-3
seed = 5

[integrator]
tolerances = rel=1e-9, abs=1e-11

[output]
solution = out/run.solution.json
"""


def test_parse_full_config(tmp_path, monkeypatch):
    monkeypatch.delenv("NBODY_SEED", raising=False)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(BASE)
    c = load_config(cfg)
    assert c.spec == SystemSpec((1, 2, 3), 2.0, (2, 3, 1), False)
    assert c.optimizer.mesh_schedule == (16, 32)
    assert c.optimizer.gradient_tolerance == 1e-9
    assert c.optimizer.sufficient_decrease == 1e-3
    assert c.seed == 5
    assert c.integrator.rel_tol == 1e-9 and c.integrator.abs_tol == 1e-11
    assert c.solution_path == tmp_path / "out" / "run.solution.json"


def test_defaults(monkeypatch):
    monkeypatch.delenv("NBODY_SEED", raising=False)
    c = parse_config("[system]\nmasses = 1, 1, 1\n")
    assert c.spec.half_period == 1.0 and c.spec.sigma == (1, 2, 3)
    assert c.optimizer == OptimizerOptions()
    assert c.integrator == IntegratorOptions()
    assert c.seed == 42


def test_seed_override(monkeypatch):
    monkeypatch.setenv("NBODY_SEED", "17")
    assert parse_config(BASE).seed == 17
    monkeypatch.setenv("NBODY_SEED", "x")
    with pytest.raises(ConfigError):
        parse_config(BASE)


@pytest.mark.parametrize(
    "text",
    [
        "[system]\nmasses = 1, 1, 1\ncolour = red\n",
        "[system]\nmasses = 1, 1, 1\n[extra]\nk = 1\n",
        "[system]\nn = 3\n",
        "[system]\nmasses = 1, a, 1\n",
        "[system]\nn = 4\nmasses = 1, 1, 1\n",
        "[system]\nmasses = 1, 1, 1\n[optimizer]\ntolerances = speed=3\n",
        "[system]\nmasses = 1, 1, 1\n[optimizer]\nmesh_schedule = 16, 7\n",
        "[system]\nmasses = 1, 1, 1\nsymmetric = maybe\n",
        "not an ini file",
    ],
)
def test_config_errors(text, monkeypatch):
    monkeypatch.delenv("NBODY_SEED", raising=False)
    with pytest.raises((ConfigError, ValueError)):
        parse_config(text)


def test_config_mass_zero():
    with pytest.raises(NonPositiveMass):
        parse_config("[system]\nmasses = 1, 0, 1\n")


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


@pytest.fixture(scope="module")
def solution():
    from conftest import solved

    spec, res = solved((1, 2, 3), sigma=(2, 3, 1))
    return SolutionFile.from_result(spec, res, OptimizerOptions(), IntegratorOptions())


def test_solution_roundtrip(solution, tmp_path):
    p = save_solution(solution, tmp_path / "a.json")
    back = load_solution(p)
    assert back.spec == solution.spec
    np.testing.assert_array_equal(back.path.times, solution.path.times)
    np.testing.assert_array_equal(back.path.positions, solution.path.positions)
    np.testing.assert_array_equal(back.coarse.positions, solution.coarse.positions)
    assert back.action == solution.action
    assert back.convergence == json.loads(json.dumps(solution.convergence))
    assert back.optimizer == solution.optimizer
    assert back.integrator == solution.integrator
    assert dumps(solution_to_dict(back)) == p.read_text()


def test_solution_version_checked(solution):
    d = solution_to_dict(solution)
    d["version"] = 99
    with pytest.raises(SolutionFormatError):
        solution_from_dict(d)
    with pytest.raises(SolutionFormatError):
        solution_from_dict({"format": "other"})


def test_malformed_solution(solution, tmp_path):
    d = solution_to_dict(solution)
    del d["positions"]
    with pytest.raises(SolutionFormatError):
        solution_from_dict(d)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SolutionFormatError):
        load_solution(bad)


def test_dumps_maps_non_finite_to_null():
    assert json.loads(dumps({"a": float("nan"), "b": np.float64(2.5), "c": np.int64(3)})) == {"a": None, "b": 2.5, "c": 3}


def test_write_atomic_leaves_no_temp(tmp_path):
    p = write_atomic(tmp_path / "sub" / "f.txt", "x\n")
    write_atomic(p, "y\n")
    assert p.read_text() == "y\n"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
