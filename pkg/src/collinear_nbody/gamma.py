"""Unconstrained coordinates for the admissible path class.

Every adjacent gap ``g[k, j] = x[j+1] - x[j]`` at node ``k`` is written as
``u[k, j]**2``.  Gaps dictated to vanish by the endpoint collision patterns
are structural zeros and carry no variable.  Positions are rebuilt from
the gaps and shifted so that ``sum(m * x) == 0`` at every node.  Ordering,
the endpoint patterns and the sign condition ``x_1(0) x_n(0) <= 0`` then
hold for every variable vector.

In symmetric mode only one representative of each orbit of the
reflection ``h`` is kept:

* n odd:  ``g[k, j] == g[M-k, n-2-j]``  (``x_i(t) = -x_{n+1-i}(T-t)``)
* n even: ``g[k, j] == g[k, n-2-j]``    (``x_i(t) = -x_{n+1-i}(t)``)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .action import CollisionPattern, DiscretePath
from .core import SystemSpec
from .errors import (
    DimensionMismatch,
    NegativeGap,
    NonzeroPatternGap,
    SymmetryMassMismatch,
    TooFewBodies,
)

PATTERN_TOL = 1e-10


class Endpoint(str, Enum):
    START = "start"
    END = "end"


@dataclass(frozen=True)
class BoundaryPattern:
    endpoint: Endpoint
    colliding_pairs: tuple[tuple[int, int], ...]  # 1-based ranks
    free_ranks: tuple[int, ...]

    @property
    def zero_gaps(self) -> tuple[int, ...]:
        """0-based indices of the gaps that vanish."""
        return tuple(a - 1 for a, _ in self.colliding_pairs)


def boundary_pattern(n: int, endpoint) -> BoundaryPattern:
    if n < 3:
        raise TooFewBodies(f"need at least 3 bodies, got n={n}")
    endpoint = Endpoint(endpoint)
    if endpoint is Endpoint.START:
        pairs = tuple((i, i + 1) for i in range(2, n, 2))
    else:
        pairs = tuple((i, i + 1) for i in range(1, n, 2))
    paired = {r for p in pairs for r in p}
    free = tuple(r for r in range(1, n + 1) if r not in paired)
    return BoundaryPattern(endpoint, pairs, free)


def collision_pattern(n: int) -> CollisionPattern:
    return CollisionPattern(
        boundary_pattern(n, Endpoint.START).zero_gaps,
        boundary_pattern(n, Endpoint.END).zero_gaps,
    )


def h_image(positions: np.ndarray) -> np.ndarray:
    """Image of an ``(n, M+1)`` table under the reflection ``h``."""
    x = np.asarray(positions)
    if x.shape[0] % 2:
        return -x[::-1, ::-1]
    return -x[::-1, :]


class GammaLayout:
    """Variable layout for one ``(n, masses, mesh, symmetric)`` combination."""

    def __init__(self, masses, times, symmetric=False):
        self.masses = np.asarray(masses, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.n = self.masses.size
        self.M = self.times.size - 1
        self.symmetric = bool(symmetric)
        n, M = self.n, self.M
        if n < 3:
            raise TooFewBodies(f"need at least 3 bodies, got n={n}")
        self.pattern = collision_pattern(n)
        free = np.ones((M + 1, n - 1), dtype=bool)
        free[0, list(self.pattern.start)] = False
        free[M, list(self.pattern.end)] = False
        self.free = free
        self.free_index = np.flatnonzero(free.ravel())
        self.full_size = self.free_index.size

        if self.symmetric:
            m = self.masses
            if not np.allclose(m, m[::-1], rtol=1e-12, atol=0.0):
                raise SymmetryMassMismatch("mirror masses required in symmetric mode")
            if not np.allclose(self.times + self.times[::-1], self.times[-1], rtol=0, atol=1e-12 * self.times[-1]):
                raise DimensionMismatch("symmetric mode needs a mesh symmetric under t -> T-t")
            k, j = np.divmod(self.free_index, n - 1)
            pk = M - k if n % 2 else k
            pj = n - 2 - j
            partner = pk * (n - 1) + pj
            rep = np.minimum(self.free_index, partner)
            reps, rep_of = np.unique(rep, return_inverse=True)
            self.rep_of = rep_of
            self.size = reps.size
        else:
            self.rep_of = None
            self.size = self.full_size

    def expand(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.size,):
            raise DimensionMismatch(f"expected {self.size} variables, got {w.shape}")
        return w[self.rep_of] if self.symmetric else w

    def gaps(self, w) -> np.ndarray:
        u = self.expand(w)
        g = np.zeros((self.M + 1) * (self.n - 1))
        g[self.free_index] = u * u
        return g.reshape(self.M + 1, self.n - 1)

    def positions_from_gaps(self, g) -> np.ndarray:
        S = np.zeros((g.shape[0], self.n))
        S[:, 1:] = np.cumsum(g, axis=1)
        com = S @ self.masses / self.masses.sum()
        return (S - com[:, None]).T

    def decode(self, w) -> DiscretePath:
        return DiscretePath(self.times.copy(), self.positions_from_gaps(self.gaps(w)))

    def position_delta(self, w, step) -> np.ndarray:
        """``positions(w + step) - positions(w)`` computed without cancellation."""
        u = self.expand(w)
        du = self.expand(step)
        dg = np.zeros((self.M + 1) * (self.n - 1))
        dg[self.free_index] = du * (2.0 * u + du)
        return self.positions_from_gaps(dg.reshape(self.M + 1, self.n - 1))

    def _gap_jacobian(self):
        from scipy import sparse

        if getattr(self, "_jac", None) is None:
            m = self.masses
            P = np.zeros((self.n, self.n - 1))
            for j in range(self.n - 1):
                P[j + 1 :, j] = 1.0
            P -= np.outer(np.ones(self.n), m @ P / m.sum())
            self._jac = sparse.kron(sparse.identity(self.M + 1), sparse.csr_matrix(P)).tocsr()
        return self._jac

    def pullback_hessian(self, w, hess_x, grad_x, absolute=True):
        """Hessian in ``w`` from the position Hessian and gradient.

        With ``absolute`` the curvature term ``2 dA/dg`` enters with its
        absolute value, which keeps the result positive semi-definite.
        """
        from scipy import sparse

        J = self._gap_jacobian()
        HG = (J.T @ hess_x @ J).tocsr()
        gx = np.asarray(grad_x).T.ravel()
        gG = J.T @ gx
        fi = self.free_index
        u = self.expand(w)
        Du = sparse.diags(2.0 * u)
        sel = HG[fi][:, fi]
        second = 2.0 * gG[fi]
        if absolute:
            second = np.abs(second)
        Hu = (Du @ sel @ Du + sparse.diags(second)).tocsr()
        if self.symmetric:
            E = sparse.csr_matrix(
                (np.ones(fi.size), (np.arange(fi.size), self.rep_of)),
                shape=(fi.size, self.size),
            )
            Hu = (E.T @ Hu @ E).tocsr()
        return Hu

    def pullback(self, w, grad_x) -> np.ndarray:
        """Chain rule from ``dA/dx`` (shape ``(n, M+1)``) to ``dA/dw``."""
        gx = np.asarray(grad_x).T  # (M+1, n)
        m = self.masses
        gS = gx - np.outer(gx.sum(axis=1), m / m.sum())
        gG = np.cumsum(gS[:, :0:-1], axis=1)[:, ::-1]  # gG[:, j] = sum_{i>j} gS[:, i]
        u = self.expand(w)
        gu = 2.0 * u * gG.ravel()[self.free_index]
        if self.symmetric:
            return np.bincount(self.rep_of, weights=gu, minlength=self.size)
        return gu

    def encode(self, path: DiscretePath, tol=PATTERN_TOL) -> np.ndarray:
        x = np.asarray(path.positions, dtype=float)
        if x.shape != (self.n, self.M + 1):
            raise DimensionMismatch(f"path shape {x.shape} does not match layout")
        g = np.diff(x, axis=0).T  # (M+1, n-1)
        scale = max(float(np.max(np.abs(x))), 1.0)
        if np.any(g < -tol * scale):
            k, j = np.unravel_index(np.argmin(g), g.shape)
            raise NegativeGap(f"ordering violated at node {k}, ranks {j + 1},{j + 2}")
        zs = np.abs(g[0, list(self.pattern.start)]) if self.pattern.start else np.zeros(0)
        ze = np.abs(g[-1, list(self.pattern.end)]) if self.pattern.end else np.zeros(0)
        if np.any(zs > tol * scale) or np.any(ze > tol * scale):
            raise NonzeroPatternGap("endpoint collision pattern violated")
        u = np.sqrt(np.maximum(g, 0.0)).ravel()[self.free_index]
        if self.symmetric:
            # average over each h-orbit
            s = np.bincount(self.rep_of, weights=u, minlength=self.size)
            c = np.bincount(self.rep_of, minlength=self.size)
            return s / c
        return u


def _layout(spec: SystemSpec, mesh) -> GammaLayout:
    return GammaLayout(spec.sorted_masses, mesh, spec.symmetric_mode)


def decode(vars, spec: SystemSpec, mesh) -> DiscretePath:
    return _layout(spec, mesh).decode(vars)


def encode(path: DiscretePath, spec: SystemSpec, mesh) -> np.ndarray:
    return _layout(spec, mesh).encode(path)


def symmetrize(path: DiscretePath, spec: SystemSpec) -> DiscretePath:
    """Project ``path`` onto ``h``-invariant paths by averaging with its image."""
    m = spec.sorted_masses
    if not np.allclose(m, m[::-1], rtol=1e-12, atol=0.0):
        raise SymmetryMassMismatch("symmetrize needs mirror-symmetric masses")
    t = path.times
    if not np.allclose(t + t[::-1], t[-1], rtol=0.0, atol=1e-12 * t[-1]):
        raise DimensionMismatch("symmetrize needs a mesh symmetric under t -> T-t")
    x = path.positions
    return DiscretePath(t.copy(), 0.5 * (x + h_image(x)))


@dataclass
class FeasibilityReport:
    sign_condition: bool  # (i)
    ordering: bool  # (ii)
    pattern: bool  # (iii) / (iv)
    sign_violation: float
    ordering_violation: float
    pattern_violation: float

    @property
    def passed(self) -> bool:
        return self.sign_condition and self.ordering and self.pattern


def feasibility_check(path: DiscretePath, spec: SystemSpec, tol=PATTERN_TOL) -> FeasibilityReport:
    x = path.positions
    n = x.shape[0]
    scale = max(float(np.max(x) - np.min(x)), 1e-300)
    prod = float(x[0, 0] * x[-1, 0])
    g = np.diff(x, axis=0)
    pat = collision_pattern(n)
    zs = [abs(g[j, 0]) for j in pat.start] + [abs(g[j, -1]) for j in pat.end]
    sign_v = max(prod, 0.0)
    ord_v = max(-float(np.min(g)), 0.0)
    pat_v = max(zs) if zs else 0.0
    return FeasibilityReport(
        sign_v <= tol * scale * scale,
        ord_v <= tol * scale,
        pat_v <= tol * scale,
        sign_v,
        ord_v,
        pat_v,
    )


def endpoint_gaps(n: int, endpoint) -> np.ndarray:
    """Seed gaps at an endpoint: 0 inside colliding pairs, 1 between clusters."""
    g = np.ones(n - 1)
    g[list(boundary_pattern(n, endpoint).zero_gaps)] = 0.0
    return g


def initial_guess(spec: SystemSpec, mesh, perturbation=0.0, seed=None) -> np.ndarray:
    """Linear-in-time blend of the two endpoint cluster configurations.

    With ``perturbation > 0`` every variable receives seeded uniform noise of
    that magnitude.
    """
    layout = _layout(spec, mesh)
    mesh = layout.times
    n = layout.n
    s = (mesh / mesh[-1])[:, None]
    g = (1.0 - s) * endpoint_gaps(n, "start") + s * endpoint_gaps(n, "end")
    x = layout.positions_from_gaps(g)
    w = layout.encode(DiscretePath(mesh.copy(), x))
    if perturbation:
        rng = np.random.default_rng(seed)
        w = w + perturbation * rng.uniform(-1.0, 1.0, size=w.size)
    return w
