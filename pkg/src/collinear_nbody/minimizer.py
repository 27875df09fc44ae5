"""Action minimization over the admissible class with mesh continuation.

Each stage runs L-BFGS on the gap-root variables of a graded mesh.  The
two-loop recursion is seeded with the factorized Hessian of the discrete
action, pulled back to the gap roots with the curvature term taken in
absolute value.  That matrix is sparse, banded in time and positive
semi-definite, and it removes the ``M**2`` stiffness of the kinetic term
that otherwise makes fine meshes converge very slowly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.interpolate import PchipInterpolator
from scipy.sparse.linalg import splu

from .action import (
    ActionBreakdown,
    DiscretePath,
    action_and_gradient,
    action_difference,
    action_evaluate,
    action_hessian,
    graded_mesh,
)
from .core import SystemSpec, validate_spec
from .errors import BadMeshSize, DegeneratePath, NBodyError, NotConverged
from .gamma import GammaLayout, collision_pattern, initial_guess
from .lbfgs import minimize_lbfgs

RIDGE = 1e-12


@dataclass(frozen=True)
class OptimizerOptions:
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-8
    sufficient_decrease: float = 1e-4
    shrink: float = 0.5
    history_size: int = 10
    mesh_schedule: tuple[int, ...] = (32, 64, 128, 256)
    restarts: int = 3
    seed: int = 42
    perturbation: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mesh_schedule", tuple(int(M) for M in self.mesh_schedule))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.gradient_tolerance <= 0 or self.sufficient_decrease <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.history_size < 1 or self.restarts < 1:
            raise ValueError("history_size and restarts must be positive")
        if self.perturbation < 0:
            raise ValueError("perturbation must be nonnegative")
        if not self.mesh_schedule:
            raise BadMeshSize("empty mesh schedule")
        for M in self.mesh_schedule:
            if M < 8 or M % 2:
                raise BadMeshSize(f"mesh size {M} must be even and at least 8")
        if any(b <= a for a, b in zip(self.mesh_schedule, self.mesh_schedule[1:])):
            raise BadMeshSize(f"mesh schedule {self.mesh_schedule} is not increasing")


@dataclass
class StageRecord:
    M: int
    action: float
    gradient_norm: float
    iterations: int
    converged: bool
    message: str


@dataclass
class RestartRecord:
    index: int
    action: float
    gradient_norm: float
    converged: bool


@dataclass
class MinimizerResult:
    path: DiscretePath
    action: ActionBreakdown
    gradient_norm: float
    iterations: list
    converged: bool
    stages: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    f_history: list = field(default_factory=list)
    variables: np.ndarray | None = None
    stage_paths: list = field(default_factory=list)

    @property
    def coarse_path(self) -> DiscretePath | None:
        """Solution of the previous schedule stage, if any."""
        return self.stage_paths[-2] if len(self.stage_paths) > 1 else None


class _Stage:
    """Objective, cancellation-free difference and preconditioner for one mesh."""

    def __init__(self, masses, times, symmetric):
        self.masses = np.asarray(masses, dtype=float)
        self.layout = GammaLayout(self.masses, times, symmetric=symmetric)
        self.pattern = collision_pattern(self.layout.n)
        self._key = None
        self._value = None

    def _evaluate(self, w):
        key = w.tobytes()
        if key != self._key:
            path = self.layout.decode(w)
            br, gx = action_and_gradient(path, self.masses, self.pattern)
            self._key, self._value = key, (path, br, gx)
        return self._value

    def fun_grad(self, w):
        _, br, gx = self._evaluate(w)
        return br.total, self.layout.pullback(w, gx)

    def difference(self, w, step):
        return action_difference(
            self.layout.decode(w), self.layout.position_delta(w, step), self.masses, self.pattern
        )

    def precondition(self, w):
        path, _, gx = self._evaluate(w)
        H = self.layout.pullback_hessian(w, action_hessian(path, self.masses, self.pattern), gx)
        d = H.diagonal()
        H = H + sparse.diags(RIDGE * max(float(d.max()), 1.0) + 0.0 * d)
        return splu(H.tocsc()).solve

    def run(self, w0, opts: OptimizerOptions):
        try:
            return minimize_lbfgs(
                self.fun_grad,
                w0,
                max_iterations=opts.max_iterations,
                gradient_tolerance=opts.gradient_tolerance,
                history_size=opts.history_size,
                sufficient_decrease=opts.sufficient_decrease,
                shrink=opts.shrink,
                precondition=self.precondition,
                difference=self.difference,
            )
        except NBodyError as exc:
            raise DegeneratePath(f"action evaluation failed: {exc}") from exc


def resample(path: DiscretePath, M_new: int, T: float | None = None, masses=None) -> DiscretePath:
    """Monotone cubic interpolation of each body onto ``graded_mesh(M_new, T)``.

    Interpolation runs in the mesh parameter ``s = k / M`` in which the
    graded mesh flattens the ``t**(2/3)`` endpoint behaviour.  A different
    ``T`` rescales positions by the Kepler factor ``(T / T_old)**(2/3)``.
    Gaps are clipped at zero and the COM (unit weights without ``masses``)
    is re-pinned.
    """
    if M_new < 8 or M_new % 2:
        raise BadMeshSize(f"mesh size {M_new} must be even and at least 8")
    T = path.T if T is None else float(T)
    x = path.positions
    s_old = np.linspace(0.0, 1.0, path.M + 1)
    s_new = np.linspace(0.0, 1.0, M_new + 1)
    xi = PchipInterpolator(s_old, x, axis=1)(s_new)
    xi *= (T / path.T) ** (2.0 / 3.0)
    g = np.maximum(np.diff(xi, axis=0), 0.0)
    y = np.vstack([np.zeros(M_new + 1), np.cumsum(g, axis=0)])
    m = np.ones(path.n) if masses is None else np.asarray(masses, dtype=float)
    y -= (m @ y) / m.sum()
    return DiscretePath(graded_mesh(M_new, T), y)


def refine(path: DiscretePath, M_new: int, T: float | None = None, masses=None) -> DiscretePath:
    """Interpolate ``path`` onto a finer graded mesh."""
    if M_new <= path.M:
        raise BadMeshSize(f"refine needs M_new > {path.M}, got {M_new}")
    return resample(path, M_new, T, masses)


def minimize(
    spec: SystemSpec,
    opts: OptimizerOptions | None = None,
    initial_path: DiscretePath | None = None,
    strict: bool = False,
) -> MinimizerResult:
    """Minimize the discrete action over the admissible class.

    Restarts run on the first mesh only; the best of them (lowest action,
    then lowest restart index) is carried through the schedule.  With
    ``initial_path`` a single warm start replaces the restarts.  A result
    that misses the gradient tolerance is returned with ``converged=False``,
    or raised as :class:`NotConverged` when ``strict`` is set.
    """
    opts = opts or OptimizerOptions()
    validate_spec(spec)
    masses = spec.sorted_masses
    T = spec.half_period
    schedule = opts.mesh_schedule

    first = _Stage(masses, graded_mesh(schedule[0], T), spec.symmetric_mode)
    if initial_path is not None:
        starts = [first.layout.encode(resample(initial_path, schedule[0], T, masses))]
    else:
        base = initial_guess(spec, first.layout.times)
        starts = [base]
        for r in range(1, opts.restarts):
            rng = np.random.default_rng([opts.seed, r])
            noise = rng.uniform(-1.0, 1.0, size=base.size)
            starts.append(base * (1.0 + opts.perturbation * noise))

    runs = [first.run(w0, opts) for w0 in starts]
    restarts = [
        RestartRecord(i, float(r.f), float(r.gradient_norm), bool(r.converged))
        for i, r in enumerate(runs)
    ]
    best = min(range(len(runs)), key=lambda i: (runs[i].f, i))
    res, stage = runs[best], first
    f_history = list(res.f_history)
    stages = [StageRecord(schedule[0], float(res.f), float(res.gradient_norm), res.iterations, bool(res.converged), res.message)]
    stage_paths = [stage.layout.decode(res.x)]

    for M in schedule[1:]:
        prev = stage.layout.decode(res.x)
        stage = _Stage(masses, graded_mesh(M, T), spec.symmetric_mode)
        w0 = stage.layout.encode(refine(prev, M, T, masses))
        res = stage.run(w0, opts)
        f_history.extend(res.f_history)
        stages.append(StageRecord(M, float(res.f), float(res.gradient_norm), res.iterations, bool(res.converged), res.message))
        stage_paths.append(stage.layout.decode(res.x))

    path = stage.layout.decode(res.x)
    result = MinimizerResult(
        path=path,
        action=action_evaluate(path, masses, stage.pattern),
        gradient_norm=float(res.gradient_norm),
        iterations=[s.iterations for s in stages],
        converged=bool(res.converged),
        stages=stages,
        restarts=restarts,
        f_history=f_history,
        variables=res.x,
        stage_paths=stage_paths,
    )
    if strict and not result.converged:
        raise NotConverged(
            f"gradient norm {result.gradient_norm:.3e} above tolerance "
            f"{opts.gradient_tolerance:.1e} ({res.message})",
            result,
        )
    return result


def solve_symmetric(spec: SystemSpec, opts: OptimizerOptions | None = None, **kwargs) -> MinimizerResult:
    """Minimize over the symmetric subclass (mirror-symmetric masses only)."""
    if not spec.symmetric_mode:
        spec = dataclasses.replace(spec, symmetric_mode=True)
    return minimize(spec, opts, **kwargs)
