"""Checks of the qualitative properties a computed half-period path must have.

Every check returns a :class:`CheckRecord` whose ``passed`` flag is decided
by comparing ``margin`` with ``tolerance``; the comparison direction is part
of each check.  Scales: ``scale`` is the mean adjacent gap of the path and
velocities are measured in units of ``scale / T``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .action import DiscretePath, el_residual_supnorm
from .core import SystemSpec
from .errors import MeshTooCoarse, NBodyError
from .gamma import Endpoint, boundary_pattern, h_image
from .integrator import IntegratorOptions, periodicity_check

MIN_EXTRAPOLATION_MESH = 64


@dataclass(frozen=True)
class VerifierOptions:
    eps_col: float = 1e-10
    separation_fraction: float = 1e-3
    velocity_tolerance: float = 1e-3
    momentum_tolerance: float = 1e-8
    monotonicity_threshold: float = 1e-10
    el_tolerance: float = 1e-3
    energy_tolerance: float = 1e-6
    periodicity_tolerance: float = 1e-4
    symmetry_tolerance: float | None = None
    euler_tolerance: float = 1e-6
    run_integrator: bool = True
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)


@dataclass
class CheckRecord:
    name: str
    passed: bool
    margin: float
    tolerance: float
    details: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name) -> CheckRecord:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [_plain(asdict(c)) for c in self.checks]}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def path_scale(path: DiscretePath) -> float:
    x = path.positions
    return float(np.mean(x[-1] - x[0])) / (path.n - 1)


def _velocity_unit(path: DiscretePath) -> float:
    return path_scale(path) / path.T


# ------------------------------------------------------------------ checks


def verify_monotonicity(path: DiscretePath, threshold: float = 1e-10) -> CheckRecord:
    """Odd ranks move right and even ranks move left on every interior cell.

    The margin is the smallest signed cell velocity, in units of
    ``scale / T``; the first and last cells are excluded.
    """
    x = path.positions
    h = np.diff(path.times)
    sign = np.where(np.arange(path.n) % 2 == 0, 1.0, -1.0)[:, None]
    rate = sign * np.diff(x, axis=1) / h / _velocity_unit(path)
    inner = rate[:, 1:-1]
    rank, cell = np.unravel_index(int(np.argmin(inner)), inner.shape)
    margin = float(inner[rank, cell])
    bad = np.argwhere(inner <= threshold)
    return CheckRecord(
        "monotonicity",
        margin > threshold,
        margin,
        threshold,
        {
            "worst_rank": int(rank) + 1,
            "worst_cell": int(cell) + 1,
            "violations": [[int(r) + 1, int(c) + 1] for r, c in bad[:20]],
            "violation_count": int(len(bad)),
        },
    )


def verify_boundary(path: DiscretePath, spec: SystemSpec, eps_col: float = 1e-10, delta_sep: float | None = None) -> CheckRecord:
    """Collision pattern at ``t = 0`` and ``t = T``.

    Pattern gaps must be below ``eps_col`` and all other endpoint gaps above
    ``delta_sep`` (default ``1e-3 * scale``).  The margin is the largest
    pattern gap.
    """
    n = path.n
    if delta_sep is None:
        delta_sep = 1e-3 * path_scale(path)
    worst_zero = 0.0
    min_sep = np.inf
    details = {}
    for endpoint, col in ((Endpoint.START, 0), (Endpoint.END, -1)):
        pat = boundary_pattern(n, endpoint)
        g = np.diff(path.positions[:, col])
        zero = list(pat.zero_gaps)
        rest = [j for j in range(n - 1) if j not in zero]
        if zero:
            worst_zero = max(worst_zero, float(np.max(np.abs(g[zero]))))
        if rest:
            min_sep = min(min_sep, float(np.min(g[rest])))
        details[f"{endpoint.value}_pairs"] = [list(p) for p in pat.colliding_pairs]
        details[f"{endpoint.value}_pair_count"] = len(pat.colliding_pairs)
        details[f"{endpoint.value}_gaps"] = [float(v) for v in g]
    details["min_separated_gap"] = float(min_sep)
    details["delta_sep"] = float(delta_sep)
    ok = worst_zero <= eps_col and min_sep > delta_sep
    return CheckRecord("boundary_pattern", bool(ok), worst_zero, eps_col, details)


def _endpoint_limit(times, values, at_start: bool) -> float:
    """Quadratic extrapolation in ``z = |t - t_end|**(1/3)`` from three nodes."""
    if at_start:
        t, v = times[1:4] - times[0], values[1:4]
    else:
        t, v = times[-2:-5:-1] - times[-1], values[-2:-5:-1]
    z = np.abs(t) ** (1.0 / 3.0)
    c = np.polyfit(z, v, 2)
    return float(np.polyval(c, 0.0))


def verify_velocity_limits(path: DiscretePath, spec: SystemSpec, tolerance: float = 1e-3) -> CheckRecord:
    """Endpoint velocities of free ranks and pair COM velocities vanish.

    One-sided limits come from extrapolation in ``t**(1/3)``, the variable in
    which colliding positions are smooth.  ``tolerance`` is in ``scale / T``.
    """
    if path.M < MIN_EXTRAPOLATION_MESH:
        raise MeshTooCoarse(f"velocity limits need M >= {MIN_EXTRAPOLATION_MESH}, got {path.M}")
    m = spec.sorted_masses
    t = path.times
    v = np.gradient(path.positions, t, axis=1, edge_order=2)
    unit = _velocity_unit(path)
    limits = {}
    for endpoint in (Endpoint.START, Endpoint.END):
        pat = boundary_pattern(path.n, endpoint)
        start = endpoint is Endpoint.START
        for r in pat.free_ranks:
            limits[f"{endpoint.value}:rank {r}"] = _endpoint_limit(t, v[r - 1], start) / unit
        for a, b in pat.colliding_pairs:
            com = (m[a - 1] * v[a - 1] + m[b - 1] * v[b - 1]) / (m[a - 1] + m[b - 1])
            limits[f"{endpoint.value}:pair {a}-{b}"] = _endpoint_limit(t, com, start) / unit
    margin = max(abs(val) for val in limits.values())
    return CheckRecord("endpoint_velocities", margin < tolerance, margin, tolerance, {"limits": limits})


def verify_momentum(path: DiscretePath, masses, tolerance: float = 1e-8) -> CheckRecord:
    """Total momentum per unit mass on every cell, in units of ``scale / T``."""
    m = np.asarray(masses, dtype=float)
    cell_v = np.diff(path.positions, axis=1) / np.diff(path.times)
    v0 = (m @ cell_v) / m.sum()
    margin = float(np.max(np.abs(v0))) / _velocity_unit(path)
    return CheckRecord("zero_momentum", margin < tolerance, margin, tolerance)


def verify_symmetry(path: DiscretePath, spec: SystemSpec, tolerance: float | None = None) -> list:
    """Mirror identity of the symmetric class and, for n = 3, the Euler shape at T/2.

    The default tolerance is ``1e-10 * scale`` in symmetric mode and
    ``1e-6 * scale`` otherwise, where the symmetry can only emerge.
    """
    scale = path_scale(path)
    if tolerance is None:
        tolerance = (1e-10 if spec.symmetric_mode else 1e-6) * scale
    x = path.positions
    margin = float(np.max(np.abs(x - h_image(x))))
    out = [CheckRecord("symmetry_g", margin <= tolerance, margin, tolerance)]
    if path.n == 3 and path.M % 2 == 0:
        out.append(verify_euler_configuration(path))
    return out


def verify_euler_configuration(path: DiscretePath, tolerance: float = 1e-6) -> CheckRecord:
    k = path.M // 2
    x = path.positions[:, k]
    margin = max(abs(x[0] + x[2]), abs(x[1]))
    return CheckRecord(
        "euler_config_quarter",
        margin < tolerance,
        float(margin),
        tolerance,
        {"t": float(path.times[k]), "positions": [float(v) for v in x]},
    )


def verify_el_residual(path: DiscretePath, masses, tolerance: float = 1e-3) -> CheckRecord:
    r = el_residual_supnorm(path, masses)
    return CheckRecord("el_residual_supnorm", r < tolerance, float(r), tolerance, {"M": path.M})


def is_mirror_symmetric(spec: SystemSpec) -> bool:
    m = spec.sorted_masses
    return bool(np.allclose(m, m[::-1], rtol=1e-12, atol=0.0))


def full_report(
    path: DiscretePath,
    spec: SystemSpec,
    opts: VerifierOptions | None = None,
    coarse: DiscretePath | None = None,
) -> VerificationReport:
    """Run every check; the integrator checks start from the mid-period state.

    ``coarse`` (the previous schedule stage) enables the extrapolated start
    state of :func:`periodicity_check`.
    """
    opts = opts or VerifierOptions()
    m = spec.sorted_masses
    scale = path_scale(path)
    checks = [
        verify_monotonicity(path, opts.monotonicity_threshold),
        verify_boundary(path, spec, opts.eps_col, opts.separation_fraction * scale),
    ]
    try:
        checks.append(verify_velocity_limits(path, spec, opts.velocity_tolerance))
    except MeshTooCoarse as exc:
        checks.append(CheckRecord("endpoint_velocities", False, float("nan"), opts.velocity_tolerance, {"error": str(exc)}))
    checks.append(verify_momentum(path, m, opts.momentum_tolerance))
    checks.append(verify_el_residual(path, m, opts.el_tolerance))
    if spec.symmetric_mode or is_mirror_symmetric(spec):
        checks.extend(verify_symmetry(path, spec, opts.symmetry_tolerance))
    if opts.run_integrator:
        checks.extend(_dynamics_checks(path, m, opts, coarse))
    return VerificationReport(checks)


def _dynamics_checks(path, masses, opts, coarse):
    try:
        rep = periodicity_check(path, masses, opts.integrator, coarse=coarse)
    except NBodyError as exc:
        err = {"error": f"{type(exc).__name__}: {exc}"}
        return [
            CheckRecord("energy_constancy", False, float("nan"), opts.energy_tolerance, err),
            CheckRecord("periodicity_defect", False, float("nan"), opts.periodicity_tolerance, err),
        ]
    from .integrator import energy

    s0 = rep.trajectory.samples[0]
    E0 = abs(energy(s0.positions, s0.velocities, masses))
    rel = rep.energy_drift / max(E0, 1e-300)
    info = rep.as_dict()
    return [
        CheckRecord("energy_constancy", rel < opts.energy_tolerance, rel, opts.energy_tolerance, {"absolute_drift": rep.energy_drift}),
        CheckRecord("periodicity_defect", rep.defect < opts.periodicity_tolerance, rep.defect, opts.periodicity_tolerance, info),
    ]
