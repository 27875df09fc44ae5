"""Run configuration files, solution files and atomic writes.

A run configuration is an INI file::

    [system]
    n = 3
    masses = 1, 1, 1
    T = 1
    sigma = 1, 2, 3        ; image list (sigma(1), ..., sigma(n)), 1-based
    symmetric = true

    [optimizer]
    mesh_schedule = 32, 64, 128, 256
    tolerances = gradient=1e-8, decrease=1e-4
    seed = 42

    [integrator]
    tolerances = rel=1e-10, abs=1e-12

    [output]
    solution = schubart.solution.json

Units: G = 1, masses and times are pure numbers; positions come out in the
units fixed by ``G m T**2``.  Relative output paths are resolved against
the directory of the configuration file.  ``NBODY_SEED`` in the
environment overrides the configured seed.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .action import ActionBreakdown, DiscretePath
from .core import SystemSpec, validate_spec
from .errors import ConfigError, SolutionFormatError
from .integrator import IntegratorOptions
from .minimizer import MinimizerResult, OptimizerOptions

FORMAT = "collinear-nbody-solution"
REPORT_FORMAT = "collinear-nbody-report"
VERSION = 1
SEED_VARIABLE = "NBODY_SEED"

_SECTIONS = {
    "system": {"n", "masses", "T", "sigma", "symmetric"},
    "optimizer": {"mesh_schedule", "tolerances", "seed"},
    "integrator": {"tolerances"},
    "output": {"solution"},
}
_OPTIMIZER_TOLERANCES = {"gradient": "gradient_tolerance", "decrease": "sufficient_decrease"}
_INTEGRATOR_TOLERANCES = {"rel": "rel_tol", "abs": "abs_tol"}


@dataclass(frozen=True)
class RunConfig:
    spec: SystemSpec
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    solution_path: Path | None = None
    source: Path | None = None

    @property
    def seed(self) -> int:
        return self.optimizer.seed


# ------------------------------------------------------------------ config


def _floats(text, key):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma list of numbers, got {text!r}") from exc


def _ints(text, key):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma list of integers, got {text!r}") from exc


def _pairs(text, names, key):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or name not in names:
            raise ConfigError(f"{key}: expected entries {sorted(names)} as name=value, got {item.strip()!r}")
        try:
            out[names[name]] = float(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {name} is not a number: {value.strip()!r}") from exc
    return out


def _seed_override(seed):
    raw = os.environ.get(SEED_VARIABLE)
    if raw is None or raw.strip() == "":
        return seed
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_VARIABLE}={raw!r} is not an integer") from exc


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    """Parse configuration text; ``source`` anchors relative output paths."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    if not cp.has_section("system") or "masses" not in cp["system"]:
        raise ConfigError("[system] masses is required")

    sysc = cp["system"]
    masses = _floats(sysc["masses"], "masses")
    try:
        n = int(sysc.get("n", len(masses)))
        T = float(sysc.get("T", "1"))
        symmetric = sysc.getboolean("symmetric", fallback=False)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if n != len(masses):
        raise ConfigError(f"n={n} but {len(masses)} masses given")
    sigma = _ints(sysc["sigma"], "sigma") if "sigma" in sysc else None
    spec = validate_spec(SystemSpec(tuple(masses), T, None if sigma is None else tuple(sigma), symmetric, n))

    opt_kw = {}
    if cp.has_section("optimizer"):
        oc = cp["optimizer"]
        if "mesh_schedule" in oc:
            opt_kw["mesh_schedule"] = tuple(_ints(oc["mesh_schedule"], "mesh_schedule"))
        if "tolerances" in oc:
            opt_kw.update(_pairs(oc["tolerances"], _OPTIMIZER_TOLERANCES, "[optimizer] tolerances"))
        if "seed" in oc:
            try:
                opt_kw["seed"] = int(oc["seed"])
            except ValueError as exc:
                raise ConfigError(f"seed must be an integer, got {oc['seed']!r}") from exc
    opt_kw["seed"] = _seed_override(opt_kw.get("seed", OptimizerOptions.seed))
    int_kw = {}
    if cp.has_section("integrator") and "tolerances" in cp["integrator"]:
        int_kw = _pairs(cp["integrator"]["tolerances"], _INTEGRATOR_TOLERANCES, "[integrator] tolerances")
    try:
        optimizer = OptimizerOptions(**opt_kw)
        integrator = IntegratorOptions(**int_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    base = source.parent if source is not None else Path(".")
    paths = {}
    if cp.has_section("output"):
        if "solution" in cp["output"]:
            paths["solution"] = base / cp["output"]["solution"]
    return RunConfig(spec, optimizer, integrator, paths.get("solution"), source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text, path)


# --------------------------------------------------------------- solutions


@dataclass
class SolutionFile:
    """Everything needed to verify, integrate or export a solve."""

    spec: SystemSpec
    path: DiscretePath
    action: ActionBreakdown
    convergence: dict
    optimizer: OptimizerOptions
    integrator: IntegratorOptions
    coarse: DiscretePath | None = None

    @classmethod
    def from_result(cls, spec, result: MinimizerResult, optimizer, integrator) -> "SolutionFile":
        convergence = {
            "converged": bool(result.converged),
            "gradient_norm": float(result.gradient_norm),
            "iterations": [int(i) for i in result.iterations],
            "stages": [dataclasses.asdict(s) for s in result.stages],
            "restarts": [dataclasses.asdict(r) for r in result.restarts],
        }
        return cls(spec, result.path, result.action, convergence, optimizer, integrator, result.coarse_path)


def _path_dict(path: DiscretePath) -> dict:
    return {
        "M": path.M,
        "times": [float(t) for t in path.times],
        "positions": [[float(v) for v in row] for row in path.positions],
    }


def _path_from(d) -> DiscretePath:
    path = DiscretePath(np.array(d["times"], dtype=float), np.array(d["positions"], dtype=float))
    if path.M != int(d["M"]):
        raise SolutionFormatError(f"mesh size {d['M']} does not match {path.M} cells")
    return path


def solution_to_dict(sol: SolutionFile) -> dict:
    spec = sol.spec
    opt = dataclasses.asdict(sol.optimizer)
    opt["mesh_schedule"] = list(opt["mesh_schedule"])
    return {
        "format": FORMAT,
        "version": VERSION,
        "spec": {
            "n": spec.n,
            "masses": list(spec.masses),
            "T": spec.half_period,
            "sigma": list(spec.sigma),
            "symmetric": spec.symmetric_mode,
        },
        "frame": "sorted",
        "mesh": {"M": sol.path.M, "times": [float(t) for t in sol.path.times]},
        "positions": [[float(v) for v in row] for row in sol.path.positions],
        "action": {
            "kinetic": sol.action.kinetic_part,
            "potential": sol.action.potential_part,
            "total": sol.action.total,
        },
        "convergence": sol.convergence,
        "optimizer": opt,
        "integrator": dataclasses.asdict(sol.integrator),
        "coarse": None if sol.coarse is None else _path_dict(sol.coarse),
    }


def solution_from_dict(d: dict) -> SolutionFile:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise SolutionFormatError("not a solution file")
    if d.get("version") != VERSION:
        raise SolutionFormatError(f"solution format version {d.get('version')!r}, expected {VERSION}")
    try:
        s = d["spec"]
        spec = validate_spec(SystemSpec(tuple(s["masses"]), s["T"], tuple(s["sigma"]), bool(s["symmetric"]), int(s["n"])))
        path = _path_from({"M": d["mesh"]["M"], "times": d["mesh"]["times"], "positions": d["positions"]})
        if path.n != spec.n:
            raise SolutionFormatError(f"positions have {path.n} rows for n={spec.n}")
        a = d["action"]
        action = ActionBreakdown(float(a["kinetic"]), float(a["potential"]))
        opt = dict(d["optimizer"])
        opt["mesh_schedule"] = tuple(opt["mesh_schedule"])
        optimizer = OptimizerOptions(**opt)
        integ = dict(d["integrator"])
        integ["max_step"] = _float(integ["max_step"])
        integrator = IntegratorOptions(**integ)
        coarse = None if d.get("coarse") is None else _path_from(d["coarse"])
    except SolutionFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SolutionFormatError(f"malformed solution file: {type(exc).__name__}: {exc}") from exc
    return SolutionFile(spec, path, action, dict(d["convergence"]), optimizer, integrator, coarse)


def _float(v):
    return float("inf") if v is None else float(v)


def _jsonable(obj):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    """Deterministic JSON; floats use the shortest round-trip representation."""
    return json.dumps(_jsonable(obj), indent=1, allow_nan=False) + "\n"


def write_atomic(path, text: str) -> Path:
    """Write ``text`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def save_solution(sol: SolutionFile, path) -> Path:
    return write_atomic(path, dumps(solution_to_dict(sol)))


def load_solution(path) -> SolutionFile:
    try:
        text = Path(path).read_text()
        d = json.loads(text)
    except (OSError, ValueError) as exc:
        raise SolutionFormatError(f"cannot read solution {path}: {exc}") from exc
    return solution_from_dict(d)


def report_to_dict(report, solution: SolutionFile | None = None) -> dict:
    out = {"format": REPORT_FORMAT, "version": VERSION}
    out.update(report.to_dict())
    if solution is not None:
        out["spec"] = solution_to_dict(solution)["spec"]
        out["M"] = solution.path.M
    return out
